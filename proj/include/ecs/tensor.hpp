#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ecs/error.hpp"

namespace ecs {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  return out.str();
}

/// Dense row-major array with an explicit shape. A default-constructed tensor
/// is empty (rank 0, no storage) and stands for "no parameter".
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (shape_size(shape_) != data_.size()) {
      fail(ErrorCode::shape, "tensor shape " + shape_string(shape_) +
                                 " does not match " +
                                 std::to_string(data_.size()) + " values");
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
      fail(ErrorCode::shape, "cannot reshape " + shape_string(shape_) +
                                 " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    if (empty()) return {};
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (std::size_t extent : shape_) {
      if (extent == 0) {
        fail(ErrorCode::shape, "tensor extents must be >= 1, got " +
                                   shape_string(shape_));
      }
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

}  // namespace ecs
