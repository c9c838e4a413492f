#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bsn/graph.hpp"

namespace bsn::test {

inline LayerSpec flat(int id, int width, Activation act = Activation::None) { return {id, {width}, act}; }

inline EdgeSpec dense_edge(int src, int dst, int in, int out, bool fixed = false) {
  return {src, dst, ModuleSpec::dense(in, out, "d" + std::to_string(src) + "_" + std::to_string(dst)), fixed, std::nullopt};
}

// 0 -> 1 -> 2 plus a 0 -> 2 skip, all width w
inline SuperNetGraph triangle(int w = 3) {
  return build_graph({flat(0, w), flat(1, w, Activation::ReLU), flat(2, w)},
                     {dense_edge(0, 1, w, w), dense_edge(1, 2, w, w), dense_edge(0, 2, w, w)});
}

// 0 -> 1 -> ... -> len, every edge Dense w->w
inline SuperNetGraph chain(int len, int w = 2) {
  std::vector<LayerSpec> layers;
  std::vector<EdgeSpec> edges;
  for (int i = 0; i <= len; ++i) layers.push_back(flat(i, w));
  for (int i = 0; i < len; ++i) edges.push_back(dense_edge(i, i + 1, w, w));
  return build_graph(layers, edges);
}

// m parallel two-edge paths 0 -> i -> m+1
inline SuperNetGraph parallel_paths(int m, int w = 2) {
  std::vector<LayerSpec> layers{flat(0, w)};
  std::vector<EdgeSpec> edges;
  for (int i = 1; i <= m; ++i) {
    layers.push_back(flat(i, w));
    edges.push_back(dense_edge(0, i, w, w));
    edges.push_back(dense_edge(i, m + 1, w, w));
  }
  layers.push_back(flat(m + 1, w));
  return build_graph(layers, edges);
}

// m parallel single edges from a shared stage: 0 -> 1 fixed, 1 -> 2..m+1, all -> m+2.
// Only the middle stage has width; used for ceil(m/n) checks.
inline SuperNetGraph fan(int m, int w = 2) {
  std::vector<LayerSpec> layers{flat(0, w)};
  std::vector<EdgeSpec> edges;
  for (int i = 1; i <= m; ++i) {
    layers.push_back(flat(i, w));
    edges.push_back(dense_edge(0, i, w, w));
    edges.push_back({i, m + 1, ModuleSpec::identity(), false, std::nullopt});
  }
  layers.push_back(flat(m + 1, w));
  return build_graph(layers, edges);
}

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace bsn::test
