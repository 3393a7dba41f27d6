#include <atomic>

#include "eqinv/kernels.hpp"
#include "kernels_instantiate.hpp"

namespace eqinv::kernels {
namespace {
std::atomic<Exec> g_exec{Exec::parallel};
}

void set_exec(Exec exec) { g_exec.store(exec); }
Exec current_exec() { return g_exec.load(); }

#define EQINV_ROUTE(name, ...)                                   \
  do {                                                           \
    if (current_exec() == Exec::serial) {                        \
      serial::name(__VA_ARGS__);                                 \
    } else {                                                     \
      parallel::name(__VA_ARGS__);                               \
    }                                                            \
  } while (false)

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T beta, T* c, std::size_t ldc) {
  EQINV_ROUTE(gemm, trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
void im2col(const T* x, const ConvShape& s, T* cols) {
  EQINV_ROUTE(im2col, x, s, cols);
}

template <typename T>
void col2im(const T* cols, const ConvShape& s, T* dx) {
  EQINV_ROUTE(col2im, cols, s, dx);
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const ConvShape& s, T* y) {
  EQINV_ROUTE(conv2d_forward, x, w, s, y);
}

template <typename T>
void conv2d_backward(const T* x, const T* w, const T* dy, const ConvShape& s,
                     T* dx, T* dw) {
  EQINV_ROUTE(conv2d_backward, x, w, dy, s, dx, dw);
}

template <typename T>
void batchnorm_forward_train(const T* x, const T* gamma, const T* beta,
                             std::size_t n, std::size_t c, std::size_t p,
                             double eps, T* y, T* xhat, T* mean, T* var,
                             T* inv_std) {
  EQINV_ROUTE(batchnorm_forward_train, x, gamma, beta, n, c, p, eps, y, xhat, mean,
              var, inv_std);
}

template <typename T>
void batchnorm_forward_eval(const T* x, const T* gamma, const T* beta,
                            const T* running_mean, const T* running_var,
                            std::size_t n, std::size_t c, std::size_t p,
                            double eps, T* y) {
  EQINV_ROUTE(batchnorm_forward_eval, x, gamma, beta, running_mean, running_var, n,
              c, p, eps, y);
}

template <typename T>
void batchnorm_backward(const T* dy, const T* xhat, const T* gamma,
                        const T* inv_std, std::size_t n, std::size_t c,
                        std::size_t p, T* dx, T* dgamma, T* dbeta) {
  EQINV_ROUTE(batchnorm_backward, dy, xhat, gamma, inv_std, n, c, p, dx, dgamma,
              dbeta);
}

template <typename T>
void maxpool2_forward(const T* x, const PoolShape& s, T* y,
                      std::uint32_t* argmax) {
  EQINV_ROUTE(maxpool2_forward, x, s, y, argmax);
}

template <typename T>
void maxpool2_backward(const T* dy, const std::uint32_t* argmax,
                       const PoolShape& s, T* dx) {
  EQINV_ROUTE(maxpool2_backward, dy, argmax, s, dx);
}

#undef EQINV_ROUTE

EQINV_INSTANTIATE(float)
EQINV_INSTANTIATE(double)

}  // namespace eqinv::kernels
