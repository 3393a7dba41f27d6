#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "eqinv/kernels.hpp"
#include "eqinv/tensor.hpp"

namespace eqinv {

inline constexpr std::array<std::string_view, 3> kBackboneNames = {"conv4-tiny", "conv4",
                                                                   "resnet12-lite"};

struct ModelConfig {
  std::string backbone = "conv4-tiny";
  std::size_t embed_dim = 64;        ///< d
  std::size_t num_classes = 64;      ///< N_b
  std::size_t num_transforms = 16;   ///< M
  std::size_t invariant_dim = 64;    ///< D
  std::size_t head_hidden = 0;       ///< 0 means "same as embed_dim"
  std::size_t in_channels = 3;
  std::uint64_t seed = 0;

  std::size_t hidden() const { return head_hidden == 0 ? embed_dim : head_hidden; }
  /// Throws ConfigError on an unknown backbone or a zero dimension.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Mode { train, eval };

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

template <typename T>
struct ModelOutputs {
  Tensor<T> z;                 ///< n × d
  Tensor<T> class_logits;      ///< n × N_b
  Tensor<T> transform_logits;  ///< n × M
  Tensor<T> v;                 ///< n × D, unit rows
};

/// Loss gradients with respect to the model outputs. An empty tensor means
/// the corresponding output does not contribute.
template <typename T>
struct OutputGradients {
  Tensor<T> class_logits;
  Tensor<T> transform_logits;
  Tensor<T> v;
  Tensor<T> z;
};

namespace detail {

template <typename T>
struct ConvBnTrace {
  Tensor<T> input;
  Tensor<T> xhat;
  std::vector<T> inv_std;
  std::vector<T> batch_mean;
  std::vector<T> batch_var;
  Tensor<T> output;  ///< after BN, and after ReLU when the unit has one
};

template <typename T>
struct BlockTrace {
  std::vector<ConvBnTrace<T>> units;  ///< plain: 1; residual: 3 main + shortcut
  Tensor<T> activated;                ///< block output before pooling
  std::vector<std::uint32_t> argmax;
};

template <typename T>
struct HeadTrace {
  Tensor<T> hidden;    ///< post-ReLU
  Tensor<T> output;    ///< pre-normalization for the invariant head
  ConvBnTrace<T> bn;   ///< hidden-layer batch norm (invariant head only)
};

}  // namespace detail

/// Everything backward() needs from a training-mode forward pass.
template <typename T>
struct ForwardTrace {
  Mode mode = Mode::train;
  std::vector<detail::BlockTrace<T>> blocks;
  Tensor<T> features;  ///< last block output, input to global pooling
  Tensor<T> z;
  detail::HeadTrace<T> equivariant;
  detail::HeadTrace<T> invariant;
  Tensor<T> v;
};

/// Backbone with a linear classifier and two one-hidden-layer heads: transform
/// logits, and the unit-norm invariant projection (hidden layer batch-normalized).
///
/// Parameters and BN running statistics live in two ordered name/tensor
/// lists. forward() and embed() do not modify the model; running statistics
/// change only through update_running_stats().
template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::vector<NamedTensor<T>>& parameters() { return params_; }
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  std::vector<NamedTensor<T>>& buffers() { return buffers_; }
  const std::vector<NamedTensor<T>>& buffers() const { return buffers_; }
  Tensor<T>& parameter(const std::string& name);
  std::size_t parameter_count() const;

  /// Runs the backbone once and all three heads. In train mode BN uses batch
  /// statistics and `trace` (if given) receives what backward() needs.
  ModelOutputs<T> forward(const Tensor<T>& images, Mode mode,
                          ForwardTrace<T>* trace = nullptr) const;

  /// Backbone only, inference mode. Empty batch gives an empty 0 × d result.
  Tensor<T> embed(const Tensor<T>& images) const;

  /// Parameter gradients, aligned with parameters().
  std::vector<Tensor<T>> backward(const ForwardTrace<T>& trace,
                                  const OutputGradients<T>& grads) const;

  /// Folds the batch statistics recorded in a train-mode trace into the BN
  /// running averages.
  void update_running_stats(const ForwardTrace<T>& trace, double momentum = 0.1);

  /// Number of images pushed through the backbone since construction.
  std::uint64_t backbone_images() const { return backbone_images_.load(); }

  template <typename U>
  Model<U> cast() const {
    Model<U> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.parameters()[i].value = params_[i].value.template cast<U>();
    }
    for (std::size_t i = 0; i < buffers_.size(); ++i) {
      out.buffers()[i].value = buffers_[i].value.template cast<U>();
    }
    return out;
  }

  static constexpr double kBnEps = 1e-5;

 private:
  struct ConvBnRef {
    std::size_t weight, gamma, beta;  // parameter indices
    std::size_t mean, var;            // buffer indices
    std::size_t in_c, out_c, kernel;
    bool relu;
  };
  struct BlockRef {
    std::vector<ConvBnRef> units;
    bool residual;
  };
  struct LinearRef {
    std::size_t weight, bias, in, out;  // bias == kNoBias when absent
  };
  struct BnRef {
    std::size_t gamma, beta, mean, var, channels;
  };
  static constexpr std::size_t kNoBias = static_cast<std::size_t>(-1);

  std::size_t add_param(const std::string& name, std::vector<std::size_t> shape);
  std::size_t add_buffer(const std::string& name, std::vector<std::size_t> shape, T fill);
  ConvBnRef add_conv_bn(const std::string& prefix, std::size_t in_c, std::size_t out_c,
                        std::size_t kernel, bool relu);
  LinearRef add_linear(const std::string& prefix, std::size_t in, std::size_t out,
                       bool bias = true);
  BnRef add_bn(const std::string& prefix, std::size_t channels);
  void initialize();

  Tensor<T> conv_bn_forward(const ConvBnRef& u, const Tensor<T>& x, Mode mode,
                            detail::ConvBnTrace<T>* trace) const;
  Tensor<T> conv_bn_backward(const ConvBnRef& u, const detail::ConvBnTrace<T>& t,
                             Tensor<T> grad, std::vector<Tensor<T>>& grads,
                             bool need_input_grad) const;
  Tensor<T> backbone_forward(const Tensor<T>& images, Mode mode, ForwardTrace<T>* trace) const;
  Tensor<T> linear_forward(const LinearRef& l, const Tensor<T>& x) const;
  Tensor<T> linear_backward(const LinearRef& l, const Tensor<T>& x, const Tensor<T>& dy,
                            std::vector<Tensor<T>>& grads) const;
  Tensor<T> bn_forward(const BnRef& bn, const Tensor<T>& x, Mode mode,
                       detail::ConvBnTrace<T>* trace) const;
  void check_input(const Tensor<T>& images) const;

  class Counter {
   public:
    Counter() = default;
    Counter(const Counter& o) : value_(o.value_.load()) {}
    Counter& operator=(const Counter& o) {
      value_.store(o.value_.load());
      return *this;
    }
    void add(std::uint64_t n) const { value_.fetch_add(n); }
    std::uint64_t load() const { return value_.load(); }

   private:
    mutable std::atomic<std::uint64_t> value_{0};
  };

  ModelConfig config_;
  std::vector<NamedTensor<T>> params_;
  std::vector<NamedTensor<T>> buffers_;
  std::vector<BlockRef> blocks_;
  LinearRef classifier_{};
  LinearRef eq_fc1_{}, eq_fc2_{};
  LinearRef in_fc1_{}, in_fc2_{};
  BnRef in_bn_{};
  Counter backbone_images_;
};

/// Channel widths of the four backbone stages for a config.
std::vector<std::size_t> stage_widths(const ModelConfig& config);

}  // namespace eqinv
