#include "eqinv/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "eqinv/error.hpp"
#include "eqinv/kernels.hpp"

namespace eqinv {
namespace {

// Softmax of one row of logits scaled by 1/temperature, in double.
template <typename T>
void softmax_row(std::span<const T> logits, double temperature, std::vector<double>& prob,
                 std::vector<double>& log_prob) {
  const std::size_t c = logits.size();
  prob.resize(c);
  log_prob.resize(c);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < c; ++j) {
    mx = std::max(mx, static_cast<double>(logits[j]) / temperature);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    prob[j] = std::exp(static_cast<double>(logits[j]) / temperature - mx);
    sum += prob[j];
  }
  const double log_sum = std::log(sum);
  for (std::size_t j = 0; j < c; ++j) {
    log_prob[j] = static_cast<double>(logits[j]) / temperature - mx - log_sum;
    prob[j] /= sum;
  }
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  for (T x : t.values()) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw ArgumentError(std::string(what) + " contains a non-finite value");
    }
  }
}

template <typename T>
double kl_term(const Tensor<T>& teacher, const Tensor<T>& student, double temperature,
               Tensor<T>& grad) {
  if (teacher.shape() != student.shape() || student.rank() != 2) {
    throw ArgumentError("teacher and student logits differ in shape: " +
                        shape_string(teacher.shape()) + " vs " +
                        shape_string(student.shape()));
  }
  const std::size_t n = student.dim(0);
  grad = Tensor<T>(student.shape());
  if (n == 0) return 0.0;
  std::vector<double> pt, lpt, ps, lps;
  double total = 0.0;
  const double t2 = temperature * temperature;
  for (std::size_t i = 0; i < n; ++i) {
    softmax_row(teacher.row(i), temperature, pt, lpt);
    softmax_row(student.row(i), temperature, ps, lps);
    double kl = 0.0;
    for (std::size_t j = 0; j < pt.size(); ++j) {
      if (pt[j] > 0.0) kl += pt[j] * (lpt[j] - lps[j]);
    }
    total += kl;
    auto g = grad.row(i);
    for (std::size_t j = 0; j < pt.size(); ++j) {
      g[j] = static_cast<T>(temperature * (ps[j] - pt[j]) / static_cast<double>(n));
    }
  }
  return t2 * total / static_cast<double>(n);
}

}  // namespace

void LossConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be positive");
  if (!(kd_temperature > 0.0) || !std::isfinite(kd_temperature)) {
    throw ConfigError("kd_temperature must be positive");
  }
  for (double w : {w_eq, w_in, w_kd}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw ConfigError("loss weights must be finite and nonnegative");
    }
  }
}

template <typename T>
LossValue<T> ce_loss(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ArgumentError("ce_loss needs one label per logit row");
  }
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.dim(1);
  LossValue<T> out;
  out.grad = Tensor<T>(logits.shape());
  if (n == 0) return out;
  std::vector<double> prob, log_prob;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) {
      throw ArgumentError("label " + std::to_string(labels[i]) + " outside " +
                          std::to_string(c) + " classes");
    }
    softmax_row(logits.row(i), 1.0, prob, log_prob);
    total -= log_prob[labels[i]];
    auto g = out.grad.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      const double target = j == labels[i] ? 1.0 : 0.0;
      g[j] = static_cast<T>((prob[j] - target) / static_cast<double>(n));
    }
  }
  out.value = total / static_cast<double>(n);
  return out;
}

double contrast_score(std::span<const double> v_r, std::span<const double> v_m,
                      const Tensor<double>& negatives, double tau) {
  if (v_r.size() != v_m.size() || (negatives.size() > 0 && negatives.dim(1) != v_m.size())) {
    throw ArgumentError("contrast_score vectors differ in dimension");
  }
  if (!(tau > 0.0)) throw ArgumentError("tau must be positive");
  for (double x : v_r) {
    if (!std::isfinite(x)) throw ArgumentError("contrast_score input is not finite");
  }
  for (double x : v_m) {
    if (!std::isfinite(x)) throw ArgumentError("contrast_score input is not finite");
  }
  check_finite(negatives, "negative set");

  auto dot = [&](std::span<const double> a) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * v_m[j];
    return s / tau;
  };
  const std::size_t k = negatives.size() == 0 ? 0 : negatives.dim(0);
  const double pos = dot(v_r);
  double mx = pos;
  std::vector<double> neg(k);
  for (std::size_t i = 0; i < k; ++i) {
    neg[i] = dot(negatives.row(i));
    mx = std::max(mx, neg[i]);
  }
  double denom = std::exp(pos - mx);
  const double num = denom;
  for (double a : neg) denom += std::exp(a - mx);
  return num / denom;
}

template <typename T>
LossValue<T> invariance_loss(const Tensor<T>& v, std::size_t batch_size,
                             const Tensor<double>& bank_refs, const Tensor<double>& negatives,
                             double tau) {
  if (batch_size == 0 || v.rank() != 2 || v.dim(0) % batch_size != 0 || v.dim(0) == 0) {
    throw ArgumentError("invariance_loss needs M >= 1 blocks of the batch size");
  }
  if (!(tau > 0.0)) throw ArgumentError("tau must be positive");
  const std::size_t rows = v.dim(0);
  const std::size_t dim = v.dim(1);
  const std::size_t b = batch_size;
  if (bank_refs.rank() != 2 || bank_refs.dim(0) != b || bank_refs.dim(1) != dim) {
    throw ArgumentError("bank references must be B x D");
  }
  const std::size_t k = negatives.size() == 0 ? 0 : negatives.dim(0);
  if (k > 0 && negatives.dim(1) != dim) throw ArgumentError("negatives must be K x D");

  Tensor<double> vd = v.template cast<double>();
  // Positive reference per row: bank copy for block 0, block-0 view otherwise.
  Tensor<double> ref({rows, dim});
  for (std::size_t r = 0; r < rows; ++r) {
    const auto src = r < b ? bank_refs.row(r) : std::span<const double>(vd.row(r % b));
    std::copy(src.begin(), src.end(), ref.row(r).begin());
  }

  // Negative logits, rows × K.
  Tensor<double> logits({rows, std::max<std::size_t>(k, 1)});
  if (k > 0) {
    kernels::gemm(false, true, rows, k, dim, 1.0 / tau, vd.data(), dim, negatives.data(), dim,
                  0.0, logits.data(), k);
  }

  const double scale = 1.0 / static_cast<double>(rows);
  double total = 0.0;
  std::vector<double> pos_weight(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto vr = vd.row(r);
    const auto rr = ref.row(r);
    double pos = 0.0;
    for (std::size_t j = 0; j < dim; ++j) pos += rr[j] * vr[j];
    pos /= tau;
    double mx = pos;
    auto neg = logits.row(r);
    for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, neg[i]);
    double denom = std::exp(pos - mx);
    for (std::size_t i = 0; i < k; ++i) {
      neg[i] = std::exp(neg[i] - mx);
      denom += neg[i];
    }
    const double p0 = std::exp(pos - mx) / denom;
    for (std::size_t i = 0; i < k; ++i) neg[i] /= denom;
    total += std::log(denom) + mx - pos;
    pos_weight[r] = 1.0 - p0;
  }

  // dL/dv_r = (sum_k p_k n_k - (1 - p0) ref) / (tau · rows)
  Tensor<double> grad({rows, dim});
  if (k > 0) {
    kernels::gemm(false, false, rows, dim, k, scale / tau, logits.data(), k, negatives.data(),
                  dim, 0.0, grad.data(), dim);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double w = pos_weight[r] * scale / tau;
    auto g = grad.row(r);
    const auto rr = ref.row(r);
    for (std::size_t j = 0; j < dim; ++j) g[j] -= w * rr[j];
  }
  // The reference of rows outside block 0 is v itself: dL/dv0_i -= (1 - p0) v_r.
  for (std::size_t r = b; r < rows; ++r) {
    const double w = pos_weight[r] * scale / tau;
    auto g = grad.row(r % b);
    const auto vr = vd.row(r);
    for (std::size_t j = 0; j < dim; ++j) g[j] -= w * vr[j];
  }

  LossValue<T> out;
  out.value = total * scale;
  out.grad = grad.template cast<T>();
  return out;
}

template <typename T>
DistillationValue<T> distillation_loss(const ModelOutputs<T>& teacher,
                                       const ModelOutputs<T>& student, double temperature) {
  if (!(temperature > 0.0)) throw ArgumentError("distillation temperature must be positive");
  DistillationValue<T> out;
  out.class_kl = kl_term(teacher.class_logits, student.class_logits, temperature,
                         out.class_logits);
  out.transform_kl = kl_term(teacher.transform_logits, student.transform_logits, temperature,
                             out.transform_logits);
  if (teacher.v.shape() != student.v.shape() || student.v.rank() != 2) {
    throw ArgumentError("teacher and student projections differ in shape");
  }
  const std::size_t n = student.v.dim(0);
  out.v = Tensor<T>(student.v.shape());
  if (n > 0) {
    double sq = 0.0;
    for (std::size_t i = 0; i < student.v.size(); ++i) {
      const double diff =
          static_cast<double>(student.v[i]) - static_cast<double>(teacher.v[i]);
      sq += diff * diff;
      out.v[i] = static_cast<T>(2.0 * diff / static_cast<double>(n));
    }
    out.embedding_l2 = sq / static_cast<double>(n);
  }
  out.value = out.class_kl + out.transform_kl + out.embedding_l2;
  return out;
}

LossBreakdown total_loss(double ce, double eq, double in, double kd, const LossConfig& config,
                         bool has_teacher) {
  LossBreakdown out;
  out.ce = ce;
  out.eq = eq;
  out.in = in;
  out.kd = has_teacher ? kd : 0.0;
  out.total = ce + config.w_eq * eq + config.w_in * in + config.w_kd * out.kd;
  return out;
}

template <typename T>
ObjectiveValue<T> compute_objective(const ModelOutputs<T>& outputs,
                                    const ObjectiveInputs<T>& inputs, const LossConfig& config) {
  ObjectiveValue<T> out;
  auto ce = ce_loss(outputs.class_logits, inputs.class_labels);
  out.grads.class_logits = std::move(ce.grad);

  double eq = 0.0;
  if (config.w_eq > 0.0) {
    auto l = equivariance_loss(outputs.transform_logits, inputs.proxy_labels);
    eq = l.value;
    for (auto& g : l.grad.values()) g *= static_cast<T>(config.w_eq);
    out.grads.transform_logits = std::move(l.grad);
  }

  double in = 0.0;
  if (config.w_in > 0.0) {
    if (inputs.bank_refs == nullptr || inputs.negatives == nullptr) {
      throw ArgumentError("invariance term needs bank references and negatives");
    }
    auto l = invariance_loss(outputs.v, inputs.batch_size, *inputs.bank_refs,
                             *inputs.negatives, config.tau);
    in = l.value;
    for (auto& g : l.grad.values()) g *= static_cast<T>(config.w_in);
    out.grads.v = std::move(l.grad);
  }

  double kd = 0.0;
  const bool has_teacher = inputs.teacher != nullptr;
  if (has_teacher && config.w_kd > 0.0) {
    auto l = distillation_loss(*inputs.teacher, outputs, config.kd_temperature);
    kd = l.value;
    const auto w = static_cast<T>(config.w_kd);
    auto merge = [w](Tensor<T>& dst, const Tensor<T>& src) {
      if (dst.empty()) dst = Tensor<T>(src.shape());
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] += w * src[i];
    };
    merge(out.grads.class_logits, l.class_logits);
    merge(out.grads.transform_logits, l.transform_logits);
    merge(out.grads.v, l.v);
  }

  out.breakdown = total_loss(ce.value, eq, in, kd, config, has_teacher);
  return out;
}

#define EQINV_LOSSES(T)                                                                    \
  template LossValue<T> ce_loss<T>(const Tensor<T>&, std::span<const std::size_t>);        \
  template LossValue<T> invariance_loss<T>(const Tensor<T>&, std::size_t,                  \
                                           const Tensor<double>&, const Tensor<double>&,   \
                                           double);                                        \
  template DistillationValue<T> distillation_loss<T>(const ModelOutputs<T>&,               \
                                                     const ModelOutputs<T>&, double);      \
  template ObjectiveValue<T> compute_objective<T>(const ModelOutputs<T>&,                  \
                                                  const ObjectiveInputs<T>&,               \
                                                  const LossConfig&);

EQINV_LOSSES(float)
EQINV_LOSSES(double)

}  // namespace eqinv
