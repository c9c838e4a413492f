#pragma once

#include <algorithm>
#include <cmath>

#include "bsn/error.hpp"
#include "bsn/tensor.hpp"

namespace bsn {

enum class LossKind { CrossEntropy, SquaredError };

template <typename Scalar>
struct LossValue {
  Scalar value = 0;
  Tensor<Scalar> grad;  // d loss / d pred
};

/// CrossEntropy: pred holds logits over the first axis (per pixel for
/// [C, H, W] maps, averaged over pixels); target holds class probabilities
/// of the same shape. Uses a max-shifted log-softmax.
/// SquaredError: 0.5 * ||pred - target||^2.
template <typename Scalar>
LossValue<Scalar> loss_with_grad(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, LossKind kind) {
  if (pred.shape != target.shape) {
    throw Error(Errc::ShapeMismatch, "prediction " + shape_string(pred.shape) + " vs target " + shape_string(target.shape));
  }
  LossValue<Scalar> out{Scalar(0), Tensor<Scalar>(pred.shape)};
  if (kind == LossKind::SquaredError) {
    out.grad.data = pred.data - target.data;
    out.value = Scalar(0.5) * out.grad.data.squaredNorm();
    return out;
  }
  const auto logits = pred.as_matrix();  // classes x pixels
  const auto t = target.as_matrix();
  auto g = out.grad.as_matrix();
  const Eigen::Index pixels = logits.cols();
  double total = 0.0;
  for (Eigen::Index p = 0; p < pixels; ++p) {
    const Scalar shift = logits.col(p).maxCoeff();
    const auto shifted = (logits.col(p).array() - shift).eval();
    const Scalar log_z = std::log(shifted.exp().sum());
    const auto log_softmax = (shifted - log_z).eval();
    total -= static_cast<double>((t.col(p).array() * log_softmax).sum());
    g.col(p) = (log_softmax.exp() * t.col(p).sum() - t.col(p).array()).matrix() / static_cast<Scalar>(pixels);
  }
  out.value = static_cast<Scalar>(std::max(0.0, total / static_cast<double>(pixels)));
  return out;
}

template <typename Scalar>
Scalar loss_delta(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, LossKind kind) {
  return loss_with_grad(pred, target, kind).value;
}

/// Index of the largest logit (first on ties).
template <typename Scalar>
int argmax_class(const Tensor<Scalar>& pred) {
  Eigen::Index best = 0;
  pred.data.maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace bsn
