#include "eqinv/image.hpp"

namespace eqinv {

template <typename T>
Tensor<T> to_tensor(std::span<const Image> images) {
  if (images.empty()) return Tensor<T>({0, 0, 0, 0});
  const Image& first = images.front();
  const std::size_t plane = first.height * first.width;
  Tensor<T> out({images.size(), first.channels, first.height, first.width});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.height != first.height || img.width != first.width ||
        img.channels != first.channels) {
      throw ArgumentError("images in a batch must share one shape");
    }
    T* dst = out.data() + n * first.channels * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        dst[c * plane + p] =
            static_cast<T>((img.pixels[p * img.channels + c] - kInputMean) / kInputStd);
      }
    }
  }
  return out;
}

template Tensor<float> to_tensor<float>(std::span<const Image>);
template Tensor<double> to_tensor<double>(std::span<const Image>);

}  // namespace eqinv
