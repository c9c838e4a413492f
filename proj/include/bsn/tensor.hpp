#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "bsn/error.hpp"

namespace bsn {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         [](std::int64_t a, int d) { return a * d; });
}

inline std::string shape_string(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

/// Dense row-major tensor: a shape plus a contiguous Eigen vector.
template <typename Scalar>
struct Tensor {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Vector data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(Vector::Zero(numel(shape))) {}
  Tensor(Shape s, Vector d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape)) {
      throw Error(Errc::ShapeMismatch, "tensor data length does not match shape " + shape_string(shape));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor constant(Shape s, Scalar v) {
    Tensor t(std::move(s));
    t.data.setConstant(v);
    return t;
  }

  Eigen::Index size() const { return data.size(); }
  Scalar& operator[](Eigen::Index i) { return data[i]; }
  Scalar operator[](Eigen::Index i) const { return data[i]; }

  /// Channel-major view of a [C, H, W] (or [C]) tensor as a C x (H*W) matrix.
  auto as_matrix() {
    const Eigen::Index rows = shape.empty() ? 1 : shape[0];
    return Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data.data(), rows, data.size() / rows);
  }
  auto as_matrix() const {
    const Eigen::Index rows = shape.empty() ? 1 : shape[0];
    return Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data.data(), rows, data.size() / rows);
  }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape, data.template cast<To>());
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace bsn
