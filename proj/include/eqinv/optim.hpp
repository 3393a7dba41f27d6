#pragma once

#include <vector>

#include "eqinv/error.hpp"
#include "eqinv/model.hpp"
#include "eqinv/tensor.hpp"

namespace eqinv {

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
///   g' = g + wd·p,  v = μ·v + g',  p = p − lr·v
template <typename T>
class Sgd {
 public:
  Sgd(const std::vector<NamedTensor<T>>& params, double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
    velocity_.reserve(params.size());
    for (const auto& p : params) velocity_.emplace_back(p.value.shape());
  }

  void step(std::vector<NamedTensor<T>>& params, const std::vector<Tensor<T>>& grads,
            double lr) {
    if (params.size() != velocity_.size() || grads.size() != velocity_.size()) {
      throw ArgumentError("optimizer step got mismatched parameter and gradient lists");
    }
    const T mu = static_cast<T>(momentum_);
    const T wd = static_cast<T>(weight_decay_);
    const T rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      T* p = params[i].value.data();
      const T* g = grads[i].data();
      T* v = velocity_[i].data();
      const std::size_t n = params[i].value.size();
      if (grads[i].size() != n) throw ArgumentError("gradient shape mismatch");
      for (std::size_t j = 0; j < n; ++j) {
        v[j] = mu * v[j] + (g[j] + wd * p[j]);
        p[j] -= rate * v[j];
      }
    }
  }

  std::vector<Tensor<T>>& velocity() { return velocity_; }
  const std::vector<Tensor<T>>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor<T>> velocity_;
};

}  // namespace eqinv
