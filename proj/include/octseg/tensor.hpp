#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "octseg/error.hpp"

namespace octseg {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape);

/// Dense row-major array. 4-D tensors use NCHW order, 3-D volumes SHW.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_size(shape_)), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_size(shape_)) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
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

  // NCHW accessors; only valid on rank-4 tensors.
  T& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }

  // SHW / HW accessors.
  T& at(std::int64_t s, std::int64_t y, std::int64_t x) {
    return data_[static_cast<std::size_t>((s * shape_[1] + y) * shape_[2] + x)];
  }
  const T& at(std::int64_t s, std::int64_t y, std::int64_t x) const {
    return data_[static_cast<std::size_t>((s * shape_[1] + y) * shape_[2] + x)];
  }
  T& at(std::int64_t y, std::int64_t x) {
    return data_[static_cast<std::size_t>(y * shape_[1] + x)];
  }
  const T& at(std::int64_t y, std::int64_t x) const {
    return data_[static_cast<std::size_t>(y * shape_[1] + x)];
  }

  /// Contiguous view of the leading-axis entry `i` (a slice of a volume,
  /// a sample of a batch).
  std::span<T> outer(std::int64_t i) {
    const auto stride = static_cast<std::size_t>(shape_size(Shape(shape_.begin() + 1, shape_.end())));
    return std::span<T>(data_).subspan(static_cast<std::size_t>(i) * stride, stride);
  }
  std::span<const T> outer(std::int64_t i) const {
    const auto stride = static_cast<std::size_t>(shape_size(Shape(shape_.begin() + 1, shape_.end())));
    return std::span<const T>(data_).subspan(static_cast<std::size_t>(i) * stride, stride);
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

}  // namespace octseg
