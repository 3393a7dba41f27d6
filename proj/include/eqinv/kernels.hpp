#pragma once

// Numeric kernels behind the model. Each kernel exists twice:
//   serial::   straightforward loops, the reference used by tests;
//   parallel:: blocked, OpenMP-parallel versions used in production.
// Parallel kernels split work only over independent outputs, so results do
// not depend on the thread count.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace eqinv::kernels {

enum class Exec { serial, parallel };

/// Selects the implementation used by the dispatching wrappers below.
void set_exec(Exec exec);
Exec current_exec();

/// Stride-1 "same" convolution with a square kernel (pad = kernel / 2).
struct ConvShape {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;

  std::size_t pad() const { return kernel / 2; }
  std::size_t plane() const { return height * width; }
  std::size_t patch() const { return in_channels * kernel * kernel; }
};

struct PoolShape {
  std::size_t planes = 0;  // batch * channels
  std::size_t height = 0;
  std::size_t width = 0;

  // Ceil mode: a trailing odd row/column forms its own window.
  std::size_t out_height() const { return (height + 1) / 2; }
  std::size_t out_width() const { return (width + 1) / 2; }
};

#define EQINV_KERNEL_DECLS                                                     \
  /* C = alpha * op(A) * op(B) + beta * C, row-major. */                       \
  template <typename T>                                                        \
  void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,          \
            std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,   \
            std::size_t ldb, T beta, T* c, std::size_t ldc);                   \
                                                                               \
  template <typename T>                                                        \
  void im2col(const T* x, const ConvShape& s, T* cols);                        \
                                                                               \
  template <typename T>                                                        \
  void col2im(const T* cols, const ConvShape& s, T* dx);                       \
                                                                               \
  /* x: N×Ci×H×W, w: Co×Ci×k×k, y: N×Co×H×W. */                                \
  template <typename T>                                                        \
  void conv2d_forward(const T* x, const T* w, const ConvShape& s, T* y);       \
                                                                               \
  /* dx may be null (input gradient not needed). dw is overwritten. */         \
  template <typename T>                                                        \
  void conv2d_backward(const T* x, const T* w, const T* dy,                    \
                       const ConvShape& s, T* dx, T* dw);                      \
                                                                               \
  /* Training-mode batch norm over N×C×P. var is the biased batch var. */      \
  template <typename T>                                                        \
  void batchnorm_forward_train(const T* x, const T* gamma, const T* beta,      \
                               std::size_t n, std::size_t c, std::size_t p,    \
                               double eps, T* y, T* xhat, T* mean, T* var,     \
                               T* inv_std);                                    \
                                                                               \
  template <typename T>                                                        \
  void batchnorm_forward_eval(const T* x, const T* gamma, const T* beta,       \
                              const T* running_mean, const T* running_var,     \
                              std::size_t n, std::size_t c, std::size_t p,     \
                              double eps, T* y);                               \
                                                                               \
  template <typename T>                                                        \
  void batchnorm_backward(const T* dy, const T* xhat, const T* gamma,          \
                          const T* inv_std, std::size_t n, std::size_t c,      \
                          std::size_t p, T* dx, T* dgamma, T* dbeta);          \
                                                                               \
  template <typename T>                                                        \
  void maxpool2_forward(const T* x, const PoolShape& s, T* y,                  \
                        std::uint32_t* argmax);                                \
                                                                               \
  template <typename T>                                                        \
  void maxpool2_backward(const T* dy, const std::uint32_t* argmax,             \
                         const PoolShape& s, T* dx);

namespace serial {
EQINV_KERNEL_DECLS
}  // namespace serial

namespace parallel {
EQINV_KERNEL_DECLS
}  // namespace parallel

// Dispatching wrappers; route to serial:: or parallel:: by current_exec().
EQINV_KERNEL_DECLS

#undef EQINV_KERNEL_DECLS

}  // namespace eqinv::kernels
