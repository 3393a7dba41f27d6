#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "eqinv/error.hpp"

namespace eqinv {

/// Dense row-major tensor. Images use NCHW, matrices use (rows, cols).
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T{0})
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != element_count(shape_)) {
      throw ArgumentError("tensor value count does not match shape");
    }
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Element (r, c) of a rank-2 tensor.
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  /// Contiguous view of row r (rank ≥ 1, leading axis).
  std::span<T> row(std::size_t r) {
    const std::size_t stride = shape_.empty() ? 0 : data_.size() / shape_[0];
    return std::span<T>(data_).subspan(r * stride, stride);
  }
  std::span<const T> row(std::size_t r) const {
    const std::size_t stride = shape_.empty() ? 0 : data_.size() / shape_[0];
    return std::span<const T>(data_).subspan(r * stride, stride);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  void reshape(std::vector<std::size_t> shape) {
    if (element_count(shape) != data_.size()) {
      throw ArgumentError("reshape changes element count");
    }
    shape_ = std::move(shape);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

}  // namespace eqinv
