#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "almond/errors.hpp"
#include "almond/nn/layer_spec.hpp"

namespace almond::nn {

// Dense row-major array. Rank and extents are runtime values; the batch axis,
// when present, is axis 0.
template <typename T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    for (int d : shape_) {
      if (d < 0) throw ShapeMismatch("negative tensor extent");
    }
    data_.assign(count(shape_), fill);
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw ShapeMismatch("data length " + std::to_string(data_.size()) + " != product of shape " +
                          shape_str(shape_));
    }
  }

  static std::size_t count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4-D N,H,W,C element access.
  T& at(int n, int y, int x, int c) { return data_[index4(n, y, x, c)]; }
  const T& at(int n, int y, int x, int c) const { return data_[index4(n, y, x, c)]; }
  // 2-D element access.
  T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

  Tensor reshaped(Shape shape) const {
    if (count(shape) != data_.size()) throw ShapeMismatch("reshape to " + shape_str(shape) + " changes size");
    return Tensor(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

private:
  std::size_t index4(int n, int y, int x, int c) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + y) * shape_[2] + x) * shape_[3] + c;
  }

  Shape shape_;
  std::vector<T> data_;
};

// Shape with a leading batch axis prepended.
inline Shape batched(int n, const Shape& per_sample) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

inline Shape per_sample(const Shape& batched_shape) { return Shape(batched_shape.begin() + 1, batched_shape.end()); }

}  // namespace almond::nn
