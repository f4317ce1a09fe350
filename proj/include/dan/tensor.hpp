#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "dan/error.hpp"

namespace dan {

using Shape = std::vector<std::int64_t>;

std::string ShapeString(const Shape& shape);
std::size_t ShapeNumel(const Shape& shape);

// Dense row-major n-dimensional array. float for training, double for
// gradient checking.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    ValidateShape();
    data_.assign(ShapeNumel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    ValidateShape();
    Require(data_.size() == ShapeNumel(shape_), ErrorKind::kDimension,
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                ShapeString(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::initializer_list<std::int64_t> index) { return data_[Offset(index)]; }
  const T& at(std::initializer_list<std::int64_t> index) const { return data_[Offset(index)]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor reshaped(Shape shape) const {
    Require(ShapeNumel(shape) == numel(), ErrorKind::kDimension,
            "cannot reshape " + ShapeString(shape_) + " to " + ShapeString(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const Tensor& other) const = default;

 private:
  void ValidateShape() const {
    for (auto d : shape_) {
      Require(d > 0, ErrorKind::kDimension, "tensor dimensions must be positive: " + ShapeString(shape_));
    }
  }

  std::size_t Offset(std::initializer_list<std::int64_t> index) const {
    Require(index.size() == shape_.size(), ErrorKind::kDimension, "index rank mismatch");
    std::size_t offset = 0;
    std::size_t axis = 0;
    for (auto i : index) {
      Require(i >= 0 && i < shape_[axis], ErrorKind::kDimension, "index out of range");
      offset = offset * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
      ++axis;
    }
    return offset;
  }

  Shape shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
void RequireFinite(const Tensor<T>& t, const char* what) {
  Require(t.all_finite(), ErrorKind::kNumeric, std::string("non-finite values in ") + what);
}

}  // namespace dan
