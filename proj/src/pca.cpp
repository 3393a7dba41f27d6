#include "eqinv/pca.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "eqinv/error.hpp"

namespace eqinv {

double PcaResult::explained_share() const {
  if (total_variance <= 0.0) return 0.0;
  double kept = 0.0;
  for (double v : variance) kept += v;
  return kept / total_variance;
}

PcaResult pca(const Tensor<double>& x, std::size_t k) {
  if (x.rank() != 2) throw ArgumentError("pca expects an n x d matrix");
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  if (k > d) throw ArgumentError("pca cannot keep more components than dimensions");

  PcaResult r;
  r.mean = Tensor<double>({d});
  r.components = Tensor<double>({k, d});
  r.projection = Tensor<double>({n, k});
  if (n == 0) return r;

  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const Matrix> data(x.data(), static_cast<long>(n), static_cast<long>(d));
  const Eigen::RowVectorXd mu = data.colwise().mean();
  const Matrix centered = data.rowwise() - mu;
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca eigen-decomposition failed");

  for (std::size_t j = 0; j < d; ++j) r.mean[j] = mu(static_cast<long>(j));
  r.total_variance = cov.trace();
  // Eigen returns ascending eigenvalues.
  for (std::size_t c = 0; c < k; ++c) {
    const long col = static_cast<long>(d - 1 - c);
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    r.variance.push_back(std::max(0.0, solver.eigenvalues()(col)));
    for (std::size_t j = 0; j < d; ++j) r.components.at(c, j) = v(static_cast<long>(j));
    const Eigen::VectorXd proj = centered * v;
    for (std::size_t i = 0; i < n; ++i) r.projection.at(i, c) = proj(static_cast<long>(i));
  }
  return r;
}

}  // namespace eqinv
