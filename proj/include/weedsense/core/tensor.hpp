#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "weedsense/core/errors.hpp"

namespace weedsense {

using Index = std::int64_t;

/// Extent list of a dense tensor. Every extent is >= 1.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) { validate(); }

  int rank() const { return static_cast<int>(dims_.size()); }
  Index operator[](int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
  Index back() const { return dims_.back(); }
  const std::vector<Index>& dims() const { return dims_; }

  Index numel() const {
    Index n = dims_.empty() ? 0 : 1;
    for (Index d : dims_) n *= d;
    return n;
  }

  std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }
  friend bool operator!=(const Shape& a, const Shape& b) { return !(a == b); }

 private:
  void validate() const {
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (dims_[i] < 1) {
        throw DimensionError("axis " + std::to_string(i) + " has non-positive extent " +
                             std::to_string(dims_[i]));
      }
    }
  }

  std::vector<Index> dims_;
};

/// Dense row-major tensor backed by an Eigen vector.
///
/// A default-constructed tensor is "empty" (rank 0, no storage); it is used
/// as the unallocated state of gradients and optional inputs.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(shape_.numel())) {}
  Tensor(Shape shape, Scalar fill)
      : shape_(std::move(shape)), data_(Vector::Constant(shape_.numel(), fill)) {}
  Tensor(Shape shape, const std::vector<Scalar>& values) : shape_(std::move(shape)) {
    if (static_cast<Index>(values.size()) != shape_.numel()) {
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_.str());
    }
    data_ = Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  static Tensor full(Shape shape, Scalar v) { return Tensor(std::move(shape), v); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

  bool empty() const { return shape_.rank() == 0; }
  const Shape& shape() const { return shape_; }
  int rank() const { return shape_.rank(); }
  Index dim(int axis) const { return shape_[axis]; }
  Index numel() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// NCHW accessor for rank-4 tensors.
  Scalar& at(Index n, Index c, Index h, Index w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar at(Index n, Index c, Index h, Index w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Same storage, new extents (element count must agree).
  Tensor reshaped(Shape shape) const {
    if (shape.numel() != numel()) {
      throw DimensionError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  template <typename To>
  Tensor<To> cast() const {
    Tensor<To> out(shape_);
    out.vec() = data_.template cast<To>();
    return out;
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    data_ += other.data_;
    return *this;
  }

  void require_same_shape(const Tensor& other, const char* what) const {
    if (shape_ != other.shape_) {
      throw DimensionError(std::string(what) + ": shape " + shape_.str() + " vs " +
                           other.shape_.str());
    }
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  Shape shape_;
  Vector data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace weedsense
