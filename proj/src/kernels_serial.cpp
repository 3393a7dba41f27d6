// Reference kernels: plain loops, no blocking, no threading.

#include <algorithm>
#include <cmath>
#include <vector>

#include "eqinv/kernels.hpp"
#include "kernels_instantiate.hpp"

namespace eqinv::kernels::serial {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T beta, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        sum += av * bv;
      }
      T& out = c[i * ldc + j];
      out = (beta == T{0} ? T{0} : beta * out) + alpha * sum;
    }
  }
}

template <typename T>
void im2col(const T* x, const ConvShape& s, T* cols) {
  const std::size_t plane = s.plane();
  const std::size_t cols_per_row = s.batch * plane;
  const auto pad = static_cast<long>(s.pad());
  for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
    for (std::size_t kh = 0; kh < s.kernel; ++kh) {
      for (std::size_t kw = 0; kw < s.kernel; ++kw) {
        T* row = cols + ((ci * s.kernel + kh) * s.kernel + kw) * cols_per_row;
        for (std::size_t img = 0; img < s.batch; ++img) {
          const T* src = x + (img * s.in_channels + ci) * plane;
          for (std::size_t oh = 0; oh < s.height; ++oh) {
            for (std::size_t ow = 0; ow < s.width; ++ow) {
              const long ih = static_cast<long>(oh + kh) - pad;
              const long iw = static_cast<long>(ow + kw) - pad;
              const bool inside = ih >= 0 && iw >= 0 &&
                                  ih < static_cast<long>(s.height) &&
                                  iw < static_cast<long>(s.width);
              row[img * plane + oh * s.width + ow] =
                  inside ? src[ih * static_cast<long>(s.width) + iw] : T{0};
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvShape& s, T* dx) {
  const std::size_t plane = s.plane();
  const std::size_t cols_per_row = s.batch * plane;
  const auto pad = static_cast<long>(s.pad());
  std::fill(dx, dx + s.batch * s.in_channels * plane, T{0});
  for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
    for (std::size_t kh = 0; kh < s.kernel; ++kh) {
      for (std::size_t kw = 0; kw < s.kernel; ++kw) {
        const T* row = cols + ((ci * s.kernel + kh) * s.kernel + kw) * cols_per_row;
        for (std::size_t img = 0; img < s.batch; ++img) {
          T* dst = dx + (img * s.in_channels + ci) * plane;
          for (std::size_t oh = 0; oh < s.height; ++oh) {
            for (std::size_t ow = 0; ow < s.width; ++ow) {
              const long ih = static_cast<long>(oh + kh) - pad;
              const long iw = static_cast<long>(ow + kw) - pad;
              if (ih >= 0 && iw >= 0 && ih < static_cast<long>(s.height) &&
                  iw < static_cast<long>(s.width)) {
                dst[ih * static_cast<long>(s.width) + iw] +=
                    row[img * plane + oh * s.width + ow];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const ConvShape& s, T* y) {
  const std::size_t plane = s.plane();
  const std::size_t cols_n = s.batch * plane;
  std::vector<T> cols(s.patch() * cols_n);
  serial::im2col(x, s, cols.data());
  std::vector<T> out(s.out_channels * cols_n);
  serial::gemm(false, false, s.out_channels, cols_n, s.patch(), T{1}, w, s.patch(),
       cols.data(), cols_n, T{0}, out.data(), cols_n);
  for (std::size_t img = 0; img < s.batch; ++img) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      std::copy_n(out.data() + co * cols_n + img * plane, plane,
                  y + (img * s.out_channels + co) * plane);
    }
  }
}

template <typename T>
void conv2d_backward(const T* x, const T* w, const T* dy, const ConvShape& s,
                     T* dx, T* dw) {
  const std::size_t plane = s.plane();
  const std::size_t cols_n = s.batch * plane;
  std::vector<T> dymat(s.out_channels * cols_n);
  for (std::size_t img = 0; img < s.batch; ++img) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      std::copy_n(dy + (img * s.out_channels + co) * plane, plane,
                  dymat.data() + co * cols_n + img * plane);
    }
  }
  std::vector<T> cols(s.patch() * cols_n);
  serial::im2col(x, s, cols.data());
  serial::gemm(false, true, s.out_channels, s.patch(), cols_n, T{1}, dymat.data(),
       cols_n, cols.data(), cols_n, T{0}, dw, s.patch());
  if (dx != nullptr) {
    serial::gemm(true, false, s.patch(), cols_n, s.out_channels, T{1}, w, s.patch(),
         dymat.data(), cols_n, T{0}, cols.data(), cols_n);
    serial::col2im(cols.data(), s, dx);
  }
}

template <typename T>
void batchnorm_forward_train(const T* x, const T* gamma, const T* beta,
                             std::size_t n, std::size_t c, std::size_t p,
                             double eps, T* y, T* xhat, T* mean, T* var,
                             T* inv_std) {
  const double count = static_cast<double>(n * p);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* src = x + (i * c + ch) * p;
      for (std::size_t j = 0; j < p; ++j) sum += src[j];
    }
    const double mu = sum / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* src = x + (i * c + ch) * p;
      for (std::size_t j = 0; j < p; ++j) {
        const double d = src[j] - mu;
        sq += d * d;
      }
    }
    const double v = sq / count;
    const double is = 1.0 / std::sqrt(v + eps);
    mean[ch] = static_cast<T>(mu);
    var[ch] = static_cast<T>(v);
    inv_std[ch] = static_cast<T>(is);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * p;
      for (std::size_t j = 0; j < p; ++j) {
        const T h = static_cast<T>((x[off + j] - mu) * is);
        xhat[off + j] = h;
        y[off + j] = gamma[ch] * h + beta[ch];
      }
    }
  }
}

template <typename T>
void batchnorm_forward_eval(const T* x, const T* gamma, const T* beta,
                            const T* running_mean, const T* running_var,
                            std::size_t n, std::size_t c, std::size_t p,
                            double eps, T* y) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T scale = static_cast<T>(gamma[ch] / std::sqrt(running_var[ch] + eps));
      const T shift = beta[ch] - scale * running_mean[ch];
      const std::size_t off = (i * c + ch) * p;
      for (std::size_t j = 0; j < p; ++j) y[off + j] = scale * x[off + j] + shift;
    }
  }
}

template <typename T>
void batchnorm_backward(const T* dy, const T* xhat, const T* gamma,
                        const T* inv_std, std::size_t n, std::size_t c,
                        std::size_t p, T* dx, T* dgamma, T* dbeta) {
  const double count = static_cast<double>(n * p);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sg = 0.0;
    double sb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * p;
      for (std::size_t j = 0; j < p; ++j) {
        sg += static_cast<double>(dy[off + j]) * xhat[off + j];
        sb += dy[off + j];
      }
    }
    dgamma[ch] = static_cast<T>(sg);
    dbeta[ch] = static_cast<T>(sb);
    const double k = static_cast<double>(gamma[ch]) * inv_std[ch] / count;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * p;
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
  for (std::size_t pl = 0; pl < s.planes; ++pl) {
    const T* src = x + pl * s.height * s.width;
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        std::uint32_t best = static_cast<std::uint32_t>(2 * oh * s.width + 2 * ow);
        for (std::size_t dh = 0; dh < 2; ++dh) {
          for (std::size_t dw = 0; dw < 2; ++dw) {
            const std::size_t ih = 2 * oh + dh;
            const std::size_t iw = 2 * ow + dw;
            if (ih >= s.height || iw >= s.width) continue;
            const auto idx = static_cast<std::uint32_t>(ih * s.width + iw);
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = pl * oh_n * ow_n + oh * ow_n + ow;
        y[o] = src[best];
        argmax[o] = best;
      }
    }
  }
}

template <typename T>
void maxpool2_backward(const T* dy, const std::uint32_t* argmax,
                       const PoolShape& s, T* dx) {
  const std::size_t out_plane = s.out_height() * s.out_width();
  std::fill(dx, dx + s.planes * s.height * s.width, T{0});
  for (std::size_t pl = 0; pl < s.planes; ++pl) {
    for (std::size_t o = 0; o < out_plane; ++o) {
      dx[pl * s.height * s.width + argmax[pl * out_plane + o]] +=
          dy[pl * out_plane + o];
    }
  }
}

EQINV_INSTANTIATE(float)
EQINV_INSTANTIATE(double)

}  // namespace eqinv::kernels::serial
