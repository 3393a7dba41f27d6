#pragma once

#include <cstddef>
#include <span>

#include "eqinv/model.hpp"
#include "eqinv/tensor.hpp"

namespace eqinv {

struct LossConfig {
  double tau = 1.0;             ///< contrastive temperature
  double kd_temperature = 4.0;  ///< distillation temperature
  double w_eq = 1.0;
  double w_in = 1.0;
  double w_kd = 1.0;
  std::size_t negatives_per_batch = 6400;

  /// Throws ConfigError for non-positive temperatures or bad weights.
  void validate() const;

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

struct LossBreakdown {
  double ce = 0.0;
  double eq = 0.0;
  double in = 0.0;
  double kd = 0.0;
  double total = 0.0;
};

/// Scalar loss and its gradient with respect to the loss input.
template <typename T>
struct LossValue {
  double value = 0.0;
  Tensor<T> grad;
};

/// Mean over rows of -log softmax(logits)[label].
template <typename T>
LossValue<T> ce_loss(const Tensor<T>& logits, std::span<const std::size_t> labels);

/// Cross-entropy on the transform logits against proxy labels.
template <typename T>
LossValue<T> equivariance_loss(const Tensor<T>& transform_logits,
                               std::span<const std::size_t> proxy_labels) {
  return ce_loss(transform_logits, proxy_labels);
}

/// exp(s(r, m)/tau) / (exp(s(r, m)/tau) + sum_k exp(s(n_k, m)/tau)) with s the
/// dot product of unit vectors. `negatives` is K × D; K may be zero.
double contrast_score(std::span<const double> v_r, std::span<const double> v_m,
                      const Tensor<double>& negatives, double tau);

/// Contrastive invariance loss over M blocks of B rows.
///
/// `v` holds the M·B projections transform-major (block 0 is the identity
/// view). For block 0 the positive reference is the bank copy `bank_refs`,
/// for every other block it is block 0 itself. The result averages over all
/// M·B terms; `grad` is with respect to `v` and includes the path through
/// the block-0 reference.
template <typename T>
LossValue<T> invariance_loss(const Tensor<T>& v, std::size_t batch_size,
                             const Tensor<double>& bank_refs, const Tensor<double>& negatives,
                             double tau);

template <typename T>
struct DistillationValue {
  double value = 0.0;
  double class_kl = 0.0;
  double transform_kl = 0.0;
  double embedding_l2 = 0.0;
  Tensor<T> class_logits;      ///< gradient w.r.t. student class logits
  Tensor<T> transform_logits;  ///< gradient w.r.t. student transform logits
  Tensor<T> v;                 ///< gradient w.r.t. student projections
};

/// T²·KL(teacher ‖ student) on both logit heads plus the mean squared
/// distance between projections, each averaged over rows. The teacher is a
/// constant.
template <typename T>
DistillationValue<T> distillation_loss(const ModelOutputs<T>& teacher,
                                       const ModelOutputs<T>& student, double temperature);

/// Weighted sum. kd only counts when a teacher exists.
LossBreakdown total_loss(double ce, double eq, double in, double kd, const LossConfig& config,
                         bool has_teacher);

/// Everything one training step needs from the loss side.
template <typename T>
struct ObjectiveInputs {
  std::span<const std::size_t> class_labels;  ///< one per output row, transform-major
  std::span<const std::size_t> proxy_labels;  ///< one per output row
  std::size_t batch_size = 0;
  const Tensor<double>* bank_refs = nullptr;  ///< B × D
  const Tensor<double>* negatives = nullptr;  ///< K × D
  const ModelOutputs<T>* teacher = nullptr;
};

template <typename T>
struct ObjectiveValue {
  LossBreakdown breakdown;
  OutputGradients<T> grads;
};

/// Combined loss and gradients w.r.t. the model outputs. Terms with a zero
/// weight are skipped entirely.
template <typename T>
ObjectiveValue<T> compute_objective(const ModelOutputs<T>& outputs,
                                    const ObjectiveInputs<T>& inputs, const LossConfig& config);

}  // namespace eqinv
