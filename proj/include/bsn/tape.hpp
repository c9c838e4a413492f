#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "bsn/parameters.hpp"
#include "bsn/tensor.hpp"

namespace bsn {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode record of one forward pass. Each recorded operation keeps a
/// closure that maps the gradient of its output to gradients of its inputs
/// and of the parameters it read.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using Backward = std::function<void(const TensorT& grad_out, Tape& tape, ParameterStore<Scalar>& params)>;

  Var leaf(TensorT value) {
    values_.push_back(std::move(value));
    grads_.emplace_back();
    backward_.emplace_back();
    return {static_cast<int>(values_.size()) - 1};
  }

  Var record(TensorT value, Backward backward) {
    Var v = leaf(std::move(value));
    backward_[v.id] = std::move(backward);
    ops_.push_back(v.id);
    return v;
  }

  const TensorT& value(Var v) const { return values_.at(v.id); }

  void accumulate_grad(Var v, const TensorT& g) {
    auto& slot = grads_.at(v.id);
    if (!slot) {
      slot = g;
    } else {
      slot->data += g.data;
    }
  }

  /// Gradient reaching v after backward(), or nullptr if none did.
  const TensorT* grad(Var v) const { return grads_.at(v.id) ? &*grads_[v.id] : nullptr; }

  std::size_t num_ops() const { return ops_.size(); }
  bool empty() const { return ops_.empty(); }
  /// The most recently recorded operation's output.
  Var output() const { return ops_.empty() ? Var{} : Var{ops_.back()}; }

  void clear() {
    values_.clear();
    grads_.clear();
    backward_.clear();
    ops_.clear();
  }

  void run_backward(const TensorT& seed, ParameterStore<Scalar>& params) {
    if (ops_.empty()) throw Error(Errc::EmptyTape, "backward on an empty tape");
    const Var out = output();
    if (seed.shape != value(out).shape) {
      throw Error(Errc::ShapeMismatch, "loss gradient " + shape_string(seed.shape) + " vs output " + shape_string(value(out).shape));
    }
    for (auto& g : grads_) g.reset();
    grads_[out.id] = seed;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      if (!grads_[*it]) continue;
      backward_[*it](*grads_[*it], *this, params);
    }
  }

 private:
  std::vector<TensorT> values_;
  std::vector<std::optional<TensorT>> grads_;
  std::vector<Backward> backward_;
  std::vector<int> ops_;
};

/// Accumulates dLoss/dtheta into params given dLoss/d(output) of the tape.
template <typename Scalar>
void backward(Tape<Scalar>& tape, const Tensor<Scalar>& loss_grad, ParameterStore<Scalar>& params) {
  tape.run_backward(loss_grad, params);
}

}  // namespace bsn
