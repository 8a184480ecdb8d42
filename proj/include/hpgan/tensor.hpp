#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace hpgan {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major tensor. Image batches use NCHW; feature batches use [N, F].
template <typename Scalar>
struct Tensor {
  Shape shape;
  ArrayX<Scalar> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(ArrayX<Scalar>::Zero(numel(shape))) {}
  Tensor(Shape s, ArrayX<Scalar> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape)) {
      throw std::invalid_argument("tensor data size does not match shape " + shape_string(shape));
    }
  }

  static Tensor constant(Shape s, Scalar value) {
    Tensor t(std::move(s));
    t.data.setConstant(value);
    return t;
  }

  static Tensor from_matrix(const MatrixX<Scalar>& m) {
    Tensor t({m.rows(), m.cols()});
    matrix_view(t) = m;
    return t;
  }

  Index size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  Index dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  bool empty() const { return data.size() == 0; }

  Scalar* ptr() { return data.data(); }
  const Scalar* ptr() const { return data.data(); }

  // NCHW element access.
  Scalar& at(Index n, Index c, Index h, Index w) {
    return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  Scalar at(Index n, Index c, Index h, Index w) const {
    return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  friend Eigen::Map<RowMatrixX<Scalar>> matrix_view(Tensor& t) {
    const Index rows = t.shape.empty() ? 1 : t.shape[0];
    return {t.ptr(), rows, rows == 0 ? 0 : t.size() / rows};
  }
  friend Eigen::Map<const RowMatrixX<Scalar>> matrix_view(const Tensor& t) {
    const Index rows = t.shape.empty() ? 1 : t.shape[0];
    return {t.ptr(), rows, rows == 0 ? 0 : t.size() / rows};
  }

  MatrixX<Scalar> to_matrix() const { return matrix_view(*this); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape, data.template cast<Other>());
  }
};

inline void require_shape(const Shape& got, const Shape& want, const char* what) {
  if (got != want) {
    throw std::invalid_argument(std::string(what) + ": shape " + shape_string(got) +
                                " != " + shape_string(want));
  }
}

}  // namespace hpgan
