// Brute-force reference implementations for the test suite. Nothing here
// includes a library header: inputs are plain nested vectors and every sum is
// a literal loop in long double.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

namespace oracle {

using Vec = std::vector<long double>;
using Mat = std::vector<Vec>;

inline long double log_sum_exp(const Vec& a) {
  long double mx = a[0];
  for (long double x : a) mx = std::max(mx, x);
  long double s = 0;
  for (long double x : a) s += std::exp(x - mx);
  return mx + std::log(s);
}

inline long double dot(const Vec& a, const Vec& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Mean over rows of -log softmax(logits)[label].
inline long double softmax_ce(const Mat& logits, const std::vector<std::size_t>& labels) {
  long double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    total += log_sum_exp(logits[i]) - logits[i][labels[i]];
  }
  return total / static_cast<long double>(logits.size());
}

/// h(r, m) with cosine similarity of unit vectors.
inline long double score(const Vec& r, const Vec& m, const Mat& negatives, long double tau) {
  const long double num = std::exp(dot(r, m) / tau);
  long double den = num;
  for (const auto& n : negatives) den += std::exp(dot(n, m) / tau);
  return num / den;
}

/// blocks[m][b] is the projection of item b under transform m; refs[b] is the
/// stored past projection of item b. Term-by-term:
///   -(1/M) sum_m log h(r_m, v^m), r_0 = refs, r_m = blocks[0] otherwise,
/// then averaged over the batch.
inline long double contrastive(const std::vector<Mat>& blocks, const Mat& refs,
                               const Mat& negatives, long double tau) {
  const std::size_t m_count = blocks.size();
  const std::size_t b_count = refs.size();
  long double total = 0;
  for (std::size_t b = 0; b < b_count; ++b) {
    long double per_item = 0;
    for (std::size_t m = 0; m < m_count; ++m) {
      const Vec& ref = m == 0 ? refs[b] : blocks[0][b];
      per_item += -std::log(score(ref, blocks[m][b], negatives, tau));
    }
    total += per_item / static_cast<long double>(m_count);
  }
  return total / static_cast<long double>(b_count);
}

/// T² · mean over rows of KL(softmax(t/T) ‖ softmax(s/T)).
inline long double kl_rows(const Mat& teacher, const Mat& student, long double temperature) {
  long double total = 0;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    Vec t = teacher[i];
    Vec s = student[i];
    for (auto& x : t) x /= temperature;
    for (auto& x : s) x /= temperature;
    const long double zt = log_sum_exp(t);
    const long double zs = log_sum_exp(s);
    for (std::size_t j = 0; j < t.size(); ++j) {
      const long double lp = t[j] - zt;
      total += std::exp(lp) * (lp - (s[j] - zs));
    }
  }
  return temperature * temperature * total / static_cast<long double>(teacher.size());
}

/// Central differences, one coordinate at a time.
inline std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-5) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

/// ‖a − b‖ / max(‖a‖, ‖b‖, tiny).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  long double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (long double)(a[i] - b[i]) * (a[i] - b[i]);
    na += (long double)a[i] * a[i];
    nb += (long double)b[i] * b[i];
  }
  const long double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-300L});
  return static_cast<double>(std::sqrt(diff) / denom);
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
inline Vec jacobi_eigenvalues(Mat a, int sweeps = 100) {
  const std::size_t n = a.size();
  for (int s = 0; s < sweeps; ++s) {
    long double off = 0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    }
    if (off < 1e-30L) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300L) continue;
        const long double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const long double t = (theta >= 0 ? 1 : -1) /
                              (std::abs(theta) + std::sqrt(theta * theta + 1));
        const long double c = 1 / std::sqrt(t * t + 1);
        const long double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const long double akp = a[k][p];
          const long double akq = a[k][q];
          a[k][p] = c * akp - sn * akq;
          a[k][q] = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const long double apk = a[p][k];
          const long double aqk = a[q][k];
          a[p][k] = c * apk - sn * aqk;
          a[q][k] = sn * apk + c * aqk;
        }
      }
    }
  }
  Vec out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i][i];
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

/// One output pixel of an inverse-mapped bilinear warp. `inv` maps centered
/// output coordinates to centered source coordinates; `img(y, x)` reads the
/// source and is only called for in-bounds taps.
template <typename Read>
long double warp_pixel(Read img, long height, long width, const long double inv[4],
                       long double shift_x, long double shift_y, long y, long x) {
  const long double cx = (width - 1) / 2.0L;
  const long double cy = (height - 1) / 2.0L;
  const long double dx = x - cx - shift_x;
  const long double dy = y - cy - shift_y;
  const long double sx = inv[0] * dx + inv[1] * dy + cx;
  const long double sy = inv[2] * dx + inv[3] * dy + cy;
  long double acc = 0;
  for (long yy = static_cast<long>(std::floor(sy)) - 1; yy <= static_cast<long>(std::floor(sy)) + 2; ++yy) {
    for (long xx = static_cast<long>(std::floor(sx)) - 1; xx <= static_cast<long>(std::floor(sx)) + 2; ++xx) {
      const long double wx = std::max(0.0L, 1 - std::abs(sx - xx));
      const long double wy = std::max(0.0L, 1 - std::abs(sy - yy));
      if (wx * wy == 0 || xx < 0 || yy < 0 || xx >= width || yy >= height) continue;
      acc += wx * wy * img(yy, xx);
    }
  }
  return acc;
}

/// Nearest class centroid in raw feature space; returns accuracy on `test`.
inline double nearest_centroid_accuracy(const Mat& train, const std::vector<std::size_t>& train_y,
                                        const Mat& test, const std::vector<std::size_t>& test_y,
                                        std::size_t classes) {
  const std::size_t d = train[0].size();
  Mat centroid(classes, Vec(d, 0));
  std::vector<long double> count(classes, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) centroid[train_y[i]][j] += train[i][j];
    count[train_y[i]] += 1;
  }
  for (std::size_t c = 0; c < classes; ++c) {
    for (auto& x : centroid[c]) x /= std::max(count[c], 1.0L);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    std::size_t best = 0;
    long double best_d = -1;
    for (std::size_t c = 0; c < classes; ++c) {
      long double dist = 0;
      for (std::size_t j = 0; j < d; ++j) {
        dist += (test[i][j] - centroid[c][j]) * (test[i][j] - centroid[c][j]);
      }
      if (best_d < 0 || dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    correct += best == test_y[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

/// mean and 1.96 · sample std / sqrt(n).
inline std::pair<long double, long double> mean_ci95(const std::vector<double>& acc) {
  const long double n = static_cast<long double>(acc.size());
  long double mean = 0;
  for (double a : acc) mean += a;
  mean /= n;
  if (acc.size() < 2) return {mean, 0};
  long double ss = 0;
  for (double a : acc) ss += (a - mean) * (a - mean);
  return {mean, 1.96L * std::sqrt(ss / (n - 1)) / std::sqrt(n)};
}

/// Heavy-ball SGD with weight decay on an explicit parameter vector.
inline void sgd_step(std::vector<long double>& p, std::vector<long double>& v,
                     const std::vector<long double>& g, long double lr, long double mu,
                     long double wd) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = mu * v[i] + g[i] + wd * p[i];
    p[i] -= lr * v[i];
  }
}

}  // namespace oracle
