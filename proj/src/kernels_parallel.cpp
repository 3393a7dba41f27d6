// Production kernels. GEMM packs panels of op(A) and op(B) into contiguous
// tiles and runs a register-blocked micro-kernel; everything else threads
// over output channels or planes. No reduction is split across threads.

#include <algorithm>
#include <cmath>
#include <vector>

#include <omp.h>

#include "eqinv/kernels.hpp"
#include "kernels_instantiate.hpp"

namespace eqinv::kernels::parallel {
namespace {

template <typename T>
struct Tile;
template <>
struct Tile<float> {
  static constexpr std::size_t mr = 4;
  static constexpr std::size_t nr = 64;
};
template <>
struct Tile<double> {
  static constexpr std::size_t mr = 4;
  static constexpr std::size_t nr = 32;
};

constexpr std::size_t kDepthBlock = 256;

template <typename T, std::size_t MR, std::size_t NR>
inline void micro_kernel(const T* __restrict ap, const T* __restrict bp,
                         std::size_t kc, T* __restrict c, std::size_t ldc,
                         std::size_t mr, std::size_t nr, T alpha) {
  alignas(64) T acc[MR][NR] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const T* brow = bp + p * NR;
    const T* acol = ap + p * MR;
    for (std::size_t r = 0; r < MR; ++r) {
      const T av = acol[r];
#pragma omp simd
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < mr; ++r) {
    T* crow = c + r * ldc;
    for (std::size_t j = 0; j < nr; ++j) crow[j] += alpha * acc[r][j];
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T beta, T* c, std::size_t ldc) {
  constexpr std::size_t MR = Tile<T>::mr;
  constexpr std::size_t NR = Tile<T>::nr;
  const auto rows = static_cast<long>(m);

#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * ldc;
    if (beta == T{0}) {
      std::fill(crow, crow + n, T{0});
    } else if (beta != T{1}) {
      for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (k == 0 || alpha == T{0} || m == 0 || n == 0) return;

  auto a_at = [&](std::size_t i, std::size_t p) {
    return trans_a ? a[p * lda + i] : a[i * lda + p];
  };

  const auto m_strips = (m + MR - 1) / MR;
  std::vector<T> apack(m_strips * MR * std::min(k, kDepthBlock));

  for (std::size_t pc = 0; pc < k; pc += kDepthBlock) {
    const std::size_t kc = std::min(kDepthBlock, k - pc);

    const auto a_strips = static_cast<long>(m_strips);
#pragma omp parallel for schedule(static)
    for (long si = 0; si < a_strips; ++si) {
      const std::size_t i0 = static_cast<std::size_t>(si) * MR;
      const std::size_t height = std::min(MR, m - i0);
      T* dst = apack.data() + i0 * kc;
      for (std::size_t p = 0; p < kc; ++p) {
        for (std::size_t r = 0; r < MR; ++r) {
          dst[p * MR + r] = r < height ? a_at(i0 + r, pc + p) : T{0};
        }
      }
    }

    // One packed B strip stays in cache while every A strip passes over it.
    const auto n_strips = static_cast<long>((n + NR - 1) / NR);
#pragma omp parallel
    {
      std::vector<T> bpack(kc * NR);
#pragma omp for schedule(static)
      for (long s = 0; s < n_strips; ++s) {
        const std::size_t j0 = static_cast<std::size_t>(s) * NR;
        const std::size_t width = std::min(NR, n - j0);
        if (!trans_b) {
          for (std::size_t p = 0; p < kc; ++p) {
            T* row = bpack.data() + p * NR;
            std::copy_n(b + (pc + p) * ldb + j0, width, row);
            std::fill(row + width, row + NR, T{0});
          }
        } else {
          if (width < NR) std::fill(bpack.begin(), bpack.end(), T{0});
          for (std::size_t j = 0; j < width; ++j) {
            const T* src = b + (j0 + j) * ldb + pc;
            for (std::size_t p = 0; p < kc; ++p) bpack[p * NR + j] = src[p];
          }
        }
        for (std::size_t si = 0; si < m_strips; ++si) {
          const std::size_t i0 = si * MR;
          micro_kernel<T, MR, NR>(apack.data() + i0 * kc, bpack.data(), kc, c + i0 * ldc + j0,
                                  ldc, std::min(MR, m - i0), width, alpha);
        }
      }
    }
  }
}

template <typename T>
void im2col(const T* x, const ConvShape& s, T* cols) {
  const std::size_t plane = s.plane();
  const std::size_t cols_per_row = s.batch * plane;
  const auto pad = static_cast<long>(s.pad());
  const auto height = static_cast<long>(s.height);
  const auto width = static_cast<long>(s.width);
  const auto rows = static_cast<long>(s.patch());

#pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r) {
    const auto kw = static_cast<long>(r % static_cast<long>(s.kernel));
    const auto kh = static_cast<long>((r / static_cast<long>(s.kernel)) %
                                      static_cast<long>(s.kernel));
    const auto ci = static_cast<std::size_t>(r) / (s.kernel * s.kernel);
    T* row = cols + static_cast<std::size_t>(r) * cols_per_row;
    const long ow_lo = std::max(0L, pad - kw);
    const long ow_hi = std::min(width, width + pad - kw);
    for (std::size_t img = 0; img < s.batch; ++img) {
      const T* src = x + (img * s.in_channels + ci) * plane;
      T* dst = row + img * plane;
      for (long oh = 0; oh < height; ++oh) {
        T* out = dst + oh * width;
        const long ih = oh + kh - pad;
        if (ih < 0 || ih >= height || ow_lo >= ow_hi) {
          std::fill(out, out + width, T{0});
          continue;
        }
        std::fill(out, out + ow_lo, T{0});
        std::copy(src + ih * width + ow_lo + kw - pad,
                  src + ih * width + ow_hi + kw - pad, out + ow_lo);
        std::fill(out + ow_hi, out + width, T{0});
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvShape& s, T* dx) {
  const std::size_t plane = s.plane();
  const std::size_t cols_per_row = s.batch * plane;
  const auto pad = static_cast<long>(s.pad());
  const auto height = static_cast<long>(s.height);
  const auto width = static_cast<long>(s.width);
  const auto kernel = static_cast<long>(s.kernel);
  const auto channels = static_cast<long>(s.in_channels);

#pragma omp parallel for schedule(static)
  for (long ci = 0; ci < channels; ++ci) {
    for (std::size_t img = 0; img < s.batch; ++img) {
      T* dst = dx + (img * s.in_channels + static_cast<std::size_t>(ci)) * plane;
      std::fill(dst, dst + plane, T{0});
    }
    for (long kh = 0; kh < kernel; ++kh) {
      for (long kw = 0; kw < kernel; ++kw) {
        const T* row = cols + static_cast<std::size_t>((ci * kernel + kh) * kernel + kw) *
                                  cols_per_row;
        const long ow_lo = std::max(0L, pad - kw);
        const long ow_hi = std::min(width, width + pad - kw);
        for (std::size_t img = 0; img < s.batch; ++img) {
          T* dst = dx + (img * s.in_channels + static_cast<std::size_t>(ci)) * plane;
          const T* src = row + img * plane;
          for (long oh = 0; oh < height; ++oh) {
            const long ih = oh + kh - pad;
            if (ih < 0 || ih >= height) continue;
            T* out = dst + ih * width + kw - pad;
            const T* in = src + oh * width;
            for (long ow = ow_lo; ow < ow_hi; ++ow) out[ow] += in[ow];
          }
        }
      }
    }
  }
}

// Convolutions run over groups of images small enough that the unfolded
// patches stay in cache; each thread owns whole groups.
std::size_t conv_group(const ConvShape& s) {
  constexpr std::size_t kColsBudget = 1 << 18;
  return std::clamp<std::size_t>(kColsBudget / (s.patch() * s.plane()), 1, s.batch);
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const ConvShape& s, T* y) {
  const std::size_t plane = s.plane();
  const std::size_t group = conv_group(s);
  const auto groups = static_cast<long>((s.batch + group - 1) / group);
#pragma omp parallel
  {
    std::vector<T> cols(s.patch() * group * plane);
    std::vector<T> out(s.out_channels * group * plane);
#pragma omp for schedule(static)
    for (long g = 0; g < groups; ++g) {
      const std::size_t first = static_cast<std::size_t>(g) * group;
      ConvShape sub = s;
      sub.batch = std::min(group, s.batch - first);
      const std::size_t cols_n = sub.batch * plane;
      parallel::im2col(x + first * s.in_channels * plane, sub, cols.data());
      parallel::gemm(false, false, s.out_channels, cols_n, s.patch(), T{1}, w, s.patch(),
                     cols.data(), cols_n, T{0}, out.data(), cols_n);
      for (std::size_t img = 0; img < sub.batch; ++img) {
        for (std::size_t co = 0; co < s.out_channels; ++co) {
          std::copy_n(out.data() + co * cols_n + img * plane, plane,
                      y + ((first + img) * s.out_channels + co) * plane);
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const T* x, const T* w, const T* dy, const ConvShape& s,
                     T* dx, T* dw) {
  const std::size_t plane = s.plane();
  const std::size_t group = conv_group(s);
  const std::size_t wsize = s.out_channels * s.patch();
  const std::size_t group_count = (s.batch + group - 1) / group;
  const auto groups = static_cast<long>(group_count);
  // Per-group weight gradients, summed in group order afterwards so the
  // result does not depend on the thread count.
  std::vector<T> partial(group_count * wsize);
#pragma omp parallel
  {
    std::vector<T> cols(s.patch() * group * plane);
    std::vector<T> dymat(s.out_channels * group * plane);
#pragma omp for schedule(static)
    for (long g = 0; g < groups; ++g) {
      const std::size_t first = static_cast<std::size_t>(g) * group;
      ConvShape sub = s;
      sub.batch = std::min(group, s.batch - first);
      const std::size_t cols_n = sub.batch * plane;
      for (std::size_t img = 0; img < sub.batch; ++img) {
        for (std::size_t co = 0; co < s.out_channels; ++co) {
          std::copy_n(dy + ((first + img) * s.out_channels + co) * plane, plane,
                      dymat.data() + co * cols_n + img * plane);
        }
      }
      parallel::im2col(x + first * s.in_channels * plane, sub, cols.data());
      parallel::gemm(false, true, s.out_channels, s.patch(), cols_n, T{1}, dymat.data(),
                     cols_n, cols.data(), cols_n, T{0},
                     partial.data() + static_cast<std::size_t>(g) * wsize, s.patch());
      if (dx != nullptr) {
        parallel::gemm(true, false, s.patch(), cols_n, s.out_channels, T{1}, w, s.patch(),
                       dymat.data(), cols_n, T{0}, cols.data(), cols_n);
        parallel::col2im(cols.data(), sub, dx + first * s.in_channels * plane);
      }
    }
  }
  std::copy_n(partial.data(), wsize, dw);
  for (std::size_t g = 1; g < group_count; ++g) {
    const T* src = partial.data() + g * wsize;
    for (std::size_t i = 0; i < wsize; ++i) dw[i] += src[i];
  }
}

template <typename T>
void batchnorm_forward_train(const T* x, const T* gamma, const T* beta,
                             std::size_t n, std::size_t c, std::size_t p,
                             double eps, T* y, T* xhat, T* mean, T* var,
                             T* inv_std) {
  const double count = static_cast<double>(n * p);
  const auto channels = static_cast<long>(c);
#pragma omp parallel for schedule(static)
  for (long chl = 0; chl < channels; ++chl) {
    const auto ch = static_cast<std::size_t>(chl);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* src = x + (i * c + ch) * p;
      double plane_sum = 0.0;
#pragma omp simd reduction(+ : plane_sum)
      for (std::size_t j = 0; j < p; ++j) plane_sum += src[j];
      sum += plane_sum;
    }
    const double mu = sum / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* src = x + (i * c + ch) * p;
      double plane_sq = 0.0;
#pragma omp simd reduction(+ : plane_sq)
      for (std::size_t j = 0; j < p; ++j) {
        const double d = src[j] - mu;
        plane_sq += d * d;
      }
      sq += plane_sq;
    }
    const double v = sq / count;
    const double is = 1.0 / std::sqrt(v + eps);
    mean[ch] = static_cast<T>(mu);
    var[ch] = static_cast<T>(v);
    inv_std[ch] = static_cast<T>(is);
    const T g = gamma[ch];
    const T bt = beta[ch];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * p;
#pragma omp simd
      for (std::size_t j = 0; j < p; ++j) {
        const T h = static_cast<T>((x[off + j] - mu) * is);
        xhat[off + j] = h;
        y[off + j] = g * h + bt;
      }
    }
  }
}

template <typename T>
void batchnorm_forward_eval(const T* x, const T* gamma, const T* beta,
                            const T* running_mean, const T* running_var,
                            std::size_t n, std::size_t c, std::size_t p,
                            double eps, T* y) {
  const auto planes = static_cast<long>(n * c);
#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < planes; ++pl) {
    const std::size_t ch = static_cast<std::size_t>(pl) % c;
    const T scale = static_cast<T>(gamma[ch] / std::sqrt(running_var[ch] + eps));
    const T shift = beta[ch] - scale * running_mean[ch];
    const std::size_t off = static_cast<std::size_t>(pl) * p;
    for (std::size_t j = 0; j < p; ++j) y[off + j] = scale * x[off + j] + shift;
  }
}

template <typename T>
void batchnorm_backward(const T* dy, const T* xhat, const T* gamma,
                        const T* inv_std, std::size_t n, std::size_t c,
                        std::size_t p, T* dx, T* dgamma, T* dbeta) {
  const double count = static_cast<double>(n * p);
  const auto channels = static_cast<long>(c);
#pragma omp parallel for schedule(static)
  for (long chl = 0; chl < channels; ++chl) {
    const auto ch = static_cast<std::size_t>(chl);
    double sg = 0.0;
    double sb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * p;
      double plane_g = 0.0;
      double plane_b = 0.0;
#pragma omp simd reduction(+ : plane_g, plane_b)
      for (std::size_t j = 0; j < p; ++j) {
        plane_g += static_cast<double>(dy[off + j]) * xhat[off + j];
        plane_b += dy[off + j];
      }
      sg += plane_g;
      sb += plane_b;
    }
    dgamma[ch] = static_cast<T>(sg);
    dbeta[ch] = static_cast<T>(sb);
    const double k = static_cast<double>(gamma[ch]) * inv_std[ch] / count;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * p;
#pragma omp simd
      for (std::size_t j = 0; j < p; ++j) {
        dx[off + j] = static_cast<T>(
            k * (count * dy[off + j] - sb - xhat[off + j] * sg));
      }
    }
  }
}

template <typename T>
void maxpool2_forward(const T* x, const PoolShape& s, T* y,
                      std::uint32_t* argmax) {
  const std::size_t oh_n = s.out_height();
  const std::size_t ow_n = s.out_width();
  const auto planes = static_cast<long>(s.planes);
#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < planes; ++pl) {
    const T* src = x + static_cast<std::size_t>(pl) * s.height * s.width;
    const std::size_t base = static_cast<std::size_t>(pl) * oh_n * ow_n;
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      const bool row2 = 2 * oh + 1 < s.height;
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        const bool col2 = 2 * ow + 1 < s.width;
        auto best = static_cast<std::uint32_t>(2 * oh * s.width + 2 * ow);
        auto consider = [&](std::uint32_t idx) {
          if (src[idx] > src[best]) best = idx;
        };
        if (col2) consider(best + 1);
        if (row2) {
          const auto below = static_cast<std::uint32_t>((2 * oh + 1) * s.width + 2 * ow);
          consider(below);
          if (col2) consider(below + 1);
        }
        y[base + oh * ow_n + ow] = src[best];
        argmax[base + oh * ow_n + ow] = best;
      }
    }
  }
}

template <typename T>
void maxpool2_backward(const T* dy, const std::uint32_t* argmax,
                       const PoolShape& s, T* dx) {
  const std::size_t out_plane = s.out_height() * s.out_width();
  const std::size_t in_plane = s.height * s.width;
  const auto planes = static_cast<long>(s.planes);
#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < planes; ++pl) {
    T* dst = dx + static_cast<std::size_t>(pl) * in_plane;
    std::fill(dst, dst + in_plane, T{0});
    const std::size_t base = static_cast<std::size_t>(pl) * out_plane;
    for (std::size_t o = 0; o < out_plane; ++o) dst[argmax[base + o]] += dy[base + o];
  }
}

EQINV_INSTANTIATE(float)
EQINV_INSTANTIATE(double)

}  // namespace eqinv::kernels::parallel
