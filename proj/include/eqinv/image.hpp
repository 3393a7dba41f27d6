#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "eqinv/tensor.hpp"

namespace eqinv {

/// Floating-point image, interleaved H×W×C, values nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t ch) {
    return pixels[(y * width + x) * channels + ch];
  }
  float at(std::size_t y, std::size_t x, std::size_t ch) const {
    return pixels[(y * width + x) * channels + ch];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Per-channel input normalization applied when packing images for the model.
inline constexpr float kInputMean = 0.5f;
inline constexpr float kInputStd = 0.25f;

/// Packs equally-shaped images into an N×C×H×W tensor, normalized.
template <typename T>
Tensor<T> to_tensor(std::span<const Image> images);

}  // namespace eqinv
