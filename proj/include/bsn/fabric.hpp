#pragma once

#include <optional>
#include <vector>

#include "bsn/graph.hpp"

namespace bsn {

struct ResNetFabricConfig {
  int groups = 3;  // k
  int width = 3;   // n
  int base_filters = 16;
  Shape input_shape{3, 32, 32};
  int num_classes = 10;
  // Toy scale keeps the topology, trains on toy_input_shape with
  // toy_filters in the first group, and carries the full-size costs as
  // per-edge cost metadata.
  bool toy_scale = false;
  int toy_filters = 4;
  Shape toy_input_shape{3, 8, 8};
};

/// Layer ids: input 0, stem node (1,0) is 1, block node (g,j) is
/// 1 + (g-1)*n + j, output is k*n + 2.
int resnet_node_id(const ResNetFabricConfig& cfg, int group, int block);

/// Group g has n nodes (g,1..n) joined by a BasicBlock chain, at 32/2^(g-1)
/// resolution and base*2^(g-1) filters. For g >= 2 node (g,j) also takes a
/// stride-2 projected BasicBlock from (g-1,m), m in {n-j, n+1-j, n+2-j}
/// within [1, n]: two inputs for the first and last block, three otherwise.
/// Stem conv and classifier head are fixed edges.
SuperNetGraph resnet_fabric(const ResNetFabricConfig& cfg);

/// Plain ResNet-(6n+2) path: chains, (g-1,n) -> (g,1) transitions, stem, head.
Mask resnet_path_mask(const SuperNetGraph& g, const ResNetFabricConfig& cfg);

enum class CnfTask { Classify, Segment };

struct CnfConfig {
  int width = 8;   // W columns
  int height = 6;  // H scales
  int filters = 128;
  Shape input_shape{3, 32, 32};
  CnfTask task = CnfTask::Classify;
  int num_classes = 10;
  bool toy_scale = false;
  int toy_filters = 4;
  Shape toy_input_shape{3, 8, 8};
};

/// Node (c,s), c in 1..W, s in 0..H-1, has id 1 + (c-1)*H + s; input 0,
/// output W*H + 1.
int cnf_node_id(const CnfConfig& cfg, int column, int scale);

SuperNetGraph cnf(const CnfConfig& cfg);

/// Edge count implied by the grid rules.
int cnf_edge_count(const CnfConfig& cfg);

/// Complete DAG over layers of the given widths (input first, output last):
/// one Dense edge for every ordered pair, ReLU on hidden layers.
SuperNetGraph dense_supernet(const std::vector<int>& widths);

/// Chain-then-fork network (9 modules) and twin-chain network (10 modules)
/// used to illustrate distributed cost; every module is a Dense layer.
SuperNetGraph fork_network(int width = 4);
SuperNetGraph twin_chain_network(int width = 4);

}  // namespace bsn
