#pragma once

#include <cstddef>
#include <vector>

#include "eqinv/tensor.hpp"

namespace eqinv {

struct PcaResult {
  Tensor<double> mean;           ///< d
  Tensor<double> components;     ///< k × d, unit rows, by decreasing variance
  std::vector<double> variance;  ///< eigenvalues of the k components
  double total_variance = 0.0;   ///< trace of the covariance
  Tensor<double> projection;     ///< n × k

  /// Fraction of the total variance captured by the kept components.
  double explained_share() const;
};

/// Principal components of the rows of `x` (covariance with n − 1). The sign
/// of each component is fixed so its largest-magnitude entry is positive.
PcaResult pca(const Tensor<double>& x, std::size_t k);

}  // namespace eqinv
