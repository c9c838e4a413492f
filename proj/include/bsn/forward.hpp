#pragma once

#include <vector>

#include "bsn/graph.hpp"
#include "bsn/modules.hpp"

namespace bsn {

/// Masked forward pass. l_1 <- x; every live layer i (in topological order)
/// becomes the sum of f_{k,i}(l_k) over its selected, live incoming edges,
/// taken in ascending source order, followed by the layer activation.
/// Only edges on a selected l_1 -> l_N path are evaluated; the others cannot
/// influence l_N. Returns the handle of l_N.
template <typename Scalar>
Var ssn_forward(const SuperNetGraph& g, const Mask& h, const Tensor<Scalar>& x, ParameterStore<Scalar>& params,
                Tape<Scalar>& tape) {
  using T = Tensor<Scalar>;
  if (x.shape != g.layer(0).shape) {
    throw Error(Errc::ShapeMismatch, "input " + shape_string(x.shape) + " vs l_1 " + shape_string(g.layer(0).shape));
  }
  const Mask live = live_edges(g, h);
  if (!is_output_connected(g, h)) throw Error(Errc::NotConnected, "sampled mask does not reach the output layer");

  std::vector<Var> value(g.num_layers());
  value[0] = tape.leaf(x);
  for (int i = 1; i < g.num_layers(); ++i) {
    std::vector<Var> parts;
    for (int e : g.in_edges(i)) {
      if (live[e]) parts.push_back(apply_module(g.edge(e).module, value[g.edge(e).src], params, tape));
    }
    if (parts.empty()) continue;
    Var sum = parts.front();
    if (parts.size() > 1) {
      T acc = tape.value(parts.front());
      for (std::size_t p = 1; p < parts.size(); ++p) acc.data += tape.value(parts[p]).data;
      sum = tape.record(std::move(acc), [parts](const T& grad, Tape<Scalar>& t, ParameterStore<Scalar>&) {
        for (Var v : parts) t.accumulate_grad(v, grad);
      });
    }
    if (g.layer(i).activation == Activation::ReLU) {
      sum = tape.record(detail::relu(tape.value(sum)), [sum](const T& grad, Tape<Scalar>& t, ParameterStore<Scalar>&) {
        t.accumulate_grad(sum, detail::relu_grad(t.value(sum), grad));
      });
    }
    value[i] = sum;
  }
  return value[g.sink()];
}

/// Plain S-network forward over every edge of E.
template <typename Scalar>
Var forward(const SuperNetGraph& g, const Tensor<Scalar>& x, ParameterStore<Scalar>& params, Tape<Scalar>& tape) {
  return ssn_forward(g, Mask::full(g), x, params, tape);
}

/// Forward pass without keeping the tape around.
template <typename Scalar>
Tensor<Scalar> predict(const SuperNetGraph& g, const Mask& h, const Tensor<Scalar>& x, ParameterStore<Scalar>& params) {
  Tape<Scalar> tape;
  return tape.value(ssn_forward(g, h, x, params, tape));
}

}  // namespace bsn
