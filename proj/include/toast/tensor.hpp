// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace toast {

using Shape = std::vector<std::size_t>;

/// Raised on incompatible tensor extents.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or Inf is produced and finite checking is enabled,
/// or when a training loss blows up.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Dense row-major tensor. Values are owned; the gradient buffer is
/// allocated lazily and kept only for parameters that take part in
/// reverse-mode differentiation.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool empty() const { return shape_.empty(); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }
  const T& at(std::size_t row, std::size_t col) const {
    return data_[row * shape_[1] + col];
  }

  T item() const {
    if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor");
    return data_[0];
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool flag) { requires_grad_ = flag; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<T> grad() const { return grad_; }
  void zero_grad() const { grad_.assign(data_.size(), T{0}); }
  void clear_grad() const { grad_.clear(); }

  // The gradient buffer is bookkeeping attached to a parameter and may be
  // filled while the parameter is only read.
  void accumulate_grad(std::span<const T> g) const {
    if (g.size() != data_.size()) throw ShapeError("gradient length mismatch");
    if (grad_.empty()) grad_.assign(data_.size(), T{0});
    for (std::size_t i = 0; i < g.size(); ++i) grad_[i] += g[i];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    out.set_requires_grad(requires_grad_);
    return out;
  }

  Tensor reshaped(Shape shape) const {
    Tensor out(std::move(shape), data_);
    return out;
  }

  bool same_bytes(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() ||
            std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0);
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
  mutable std::vector<T> grad_;
};

}  // namespace toast
