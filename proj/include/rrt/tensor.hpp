#pragma once

#include <Eigen/Core>

#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rrt/errors.hpp"

namespace rrt {

/// Dense tensor: a shape plus a flat row-major Eigen array. The scalar type
/// is a template parameter; the library instantiates double so gradient
/// checks meet their finite-difference tolerances.
template <typename Scalar_>
class TensorT {
 public:
  using Scalar = Scalar_;
  using Index = Eigen::Index;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap =
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  TensorT() = default;

  explicit TensorT(std::vector<Index> shape)
      : shape_(std::move(shape)), data_(Storage::Zero(checked_numel(shape_))) {}

  TensorT(std::vector<Index> shape, std::initializer_list<Scalar> values)
      : shape_(std::move(shape)), data_(checked_numel(shape_)) {
    if (static_cast<Index>(values.size()) != data_.size())
      throw shape_error("tensor literal size does not match shape");
    Index i = 0;
    for (Scalar v : values) data_[i++] = v;
  }

  static TensorT zeros(std::vector<Index> shape) { return TensorT(std::move(shape)); }

  static TensorT constant(std::vector<Index> shape, Scalar value) {
    TensorT t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const std::vector<Index>& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index numel() const { return data_.size(); }
  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Flat data viewed as a rows x cols row-major matrix.
  MatrixMap matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  TensorT reshaped(std::vector<Index> shape) const {
    TensorT out = *this;
    if (checked_numel(shape) != numel())
      throw shape_error("reshape changes element count: " + shape_string(shape_) +
                        " -> " + shape_string(shape));
    out.shape_ = std::move(shape);
    return out;
  }

  static std::string shape_string(const std::vector<Index>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
  }

 private:
  static Index checked_numel(const std::vector<Index>& shape) {
    Index n = 1;
    for (Index d : shape) {
      if (d <= 0) throw shape_error("tensor extents must be positive");
      n *= d;
    }
    return n;
  }
  void check_view(Index rows, Index cols) const {
    if (rows * cols != numel())
      throw shape_error("matrix view does not cover tensor storage");
  }

  std::vector<Index> shape_;
  Storage data_;
};

using Tensor = TensorT<double>;

}  // namespace rrt
