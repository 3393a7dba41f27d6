#pragma once

// Explicit instantiations shared by the serial and parallel kernel units.

#define EQINV_INSTANTIATE(T)                                                   \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, T,  \
                        const T*, std::size_t, const T*, std::size_t, T, T*,   \
                        std::size_t);                                          \
  template void im2col<T>(const T*, const ConvShape&, T*);                     \
  template void col2im<T>(const T*, const ConvShape&, T*);                     \
  template void conv2d_forward<T>(const T*, const T*, const ConvShape&, T*);   \
  template void conv2d_backward<T>(const T*, const T*, const T*,               \
                                   const ConvShape&, T*, T*);                  \
  template void batchnorm_forward_train<T>(const T*, const T*, const T*,       \
                                           std::size_t, std::size_t,           \
                                           std::size_t, double, T*, T*, T*,    \
                                           T*, T*);                            \
  template void batchnorm_forward_eval<T>(const T*, const T*, const T*,        \
                                          const T*, const T*, std::size_t,     \
                                          std::size_t, std::size_t, double,    \
                                          T*);                                 \
  template void batchnorm_backward<T>(const T*, const T*, const T*, const T*,  \
                                      std::size_t, std::size_t, std::size_t,   \
                                      T*, T*, T*);                             \
  template void maxpool2_forward<T>(const T*, const PoolShape&, T*,            \
                                    std::uint32_t*);                           \
  template void maxpool2_backward<T>(const T*, const std::uint32_t*,           \
                                     const PoolShape&, T*);
