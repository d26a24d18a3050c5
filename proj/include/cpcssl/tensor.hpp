#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "cpcssl/error.hpp"

namespace cpcssl {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense n-dimensional array stored as a flat row-major buffer.
///
/// Rank 0 is a scalar holding one element. Rank-1 and rank-2 tensors expose
/// Eigen views through vec() and mat(); higher ranks are addressed through
/// mat(rows, cols) reshapes of the same buffer.
template <typename Scalar>
class BasicTensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  BasicTensor() : data_(Vector::Zero(1)) {}

  explicit BasicTensor(Shape shape)
      : shape_(std::move(shape)), data_(Vector::Zero(numel(shape_))) {}

  BasicTensor(Shape shape, Vector data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
      throw Error(ErrorCode::shape_mismatch,
                  "tensor buffer of length " + std::to_string(data_.size()) +
                      " does not fill shape " + to_string(shape_));
    }
  }

  static BasicTensor scalar(Scalar value) {
    BasicTensor t;
    t.data_[0] = value;
    return t;
  }

  static BasicTensor vector(std::initializer_list<Scalar> values) {
    BasicTensor t(Shape{static_cast<Index>(values.size())});
    Index i = 0;
    for (Scalar v : values) t.data_[i++] = v;
    return t;
  }

  template <typename Derived>
  static BasicTensor from_vector(const Eigen::MatrixBase<Derived>& v) {
    return BasicTensor(Shape{v.size()}, Vector(v.reshaped()));
  }

  static BasicTensor matrix(
      std::initializer_list<std::initializer_list<Scalar>> rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r == 0 ? 0 : static_cast<Index>(rows.begin()->size());
    BasicTensor t(Shape{r, c});
    Index i = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != c) {
        throw Error(ErrorCode::shape_mismatch, "ragged matrix literal");
      }
      for (Scalar v : row) t.data_[i++] = v;
    }
    return t;
  }

  template <typename Derived>
  static BasicTensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    BasicTensor t(Shape{m.rows(), m.cols()});
    t.mat() = m;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const noexcept { return data_.size(); }

  Vector& vec() noexcept { return data_; }
  const Vector& vec() const noexcept { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar item() const {
    if (data_.size() != 1) {
      throw Error(ErrorCode::shape_mismatch,
                  "item() on tensor of shape " + to_string(shape_));
    }
    return data_[0];
  }

  /// Rank-2 view. A rank-1 tensor is viewed as a column.
  MatrixMap mat() {
    const auto [r, c] = matrix_dims();
    return MatrixMap(data_.data(), r, c);
  }
  ConstMatrixMap mat() const {
    const auto [r, c] = matrix_dims();
    return ConstMatrixMap(data_.data(), r, c);
  }

  MatrixMap mat(Index rows, Index cols) {
    check_reshape(rows, cols);
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap mat(Index rows, Index cols) const {
    check_reshape(rows, cols);
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::pair<Index, Index> matrix_dims() const {
    if (shape_.size() == 2) return {shape_[0], shape_[1]};
    if (shape_.size() <= 1) return {data_.size(), 1};
    throw Error(ErrorCode::shape_mismatch,
                "rank-2 view of tensor with shape " + to_string(shape_));
  }

  void check_reshape(Index rows, Index cols) const {
    if (rows * cols != data_.size()) {
      throw Error(ErrorCode::shape_mismatch,
                  "cannot view shape " + to_string(shape_) + " as " +
                      std::to_string(rows) + "x" + std::to_string(cols));
    }
  }

  Shape shape_;
  Vector data_;
};

using Tensor = BasicTensor<double>;

}  // namespace cpcssl
