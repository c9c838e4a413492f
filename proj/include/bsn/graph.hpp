#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bsn/tensor.hpp"

namespace bsn {

enum class Activation { None, ReLU };

/// A node of the super network: a representation space with an explicit shape.
struct LayerSpec {
  int id = 0;
  Shape shape;
  Activation activation = Activation::None;
};

enum class ModuleKind {
  Identity,
  Dense,
  Conv2d,
  Projection,
  DownsampleConv,
  UpsampleConv,
  BasicBlock,
  Classifier,  // global average pooling followed by a dense layer
};

std::string_view module_kind_name(ModuleKind kind);
std::optional<ModuleKind> parse_module_kind(std::string_view name);

/// Hyper-parameters of one edge function f_{k,i}.
///
/// Dense and Classifier use in_channels/out_channels as feature counts.
/// Conv-like kinds use "same" padding (kernel / 2); Projection is a 1x1
/// convolution without padding. UpsampleConv convolves at the input
/// resolution then repeats pixels `factor` times along each spatial axis.
/// BasicBlock is relu(conv(relu(conv_s(x))) + shortcut(x)) where the shortcut
/// is the identity or, when stride or channels change, a 1x1 projection.
struct ModuleSpec {
  ModuleKind kind = ModuleKind::Identity;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int factor = 2;
  bool bias = true;
  std::string slot;  // parameter-store prefix; empty for Identity

  static ModuleSpec identity() { return {}; }
  static ModuleSpec dense(int in, int out, std::string slot);
  static ModuleSpec conv2d(int in, int out, int kernel, int stride, std::string slot);
  static ModuleSpec projection(int in, int out, int stride, std::string slot);
  static ModuleSpec downsample_conv(int in, int out, int kernel, std::string slot);
  static ModuleSpec upsample_conv(int in, int out, int kernel, int factor, std::string slot);
  static ModuleSpec basic_block(int in, int out, int stride, std::string slot);
  static ModuleSpec classifier(int in, int classes, std::string slot);

  bool operator==(const ModuleSpec&) const = default;
};

struct ParamDecl {
  std::string name;  // suffix under the module slot, e.g. "w" or "conv1.b"
  Shape shape;
  int fan_in = 1;
};

std::optional<Shape> module_output_shape(const ModuleSpec& m, const Shape& in);
std::vector<ParamDecl> module_params(const ModuleSpec& m);
std::int64_t module_param_count(const ModuleSpec& m);
/// Multiply-accumulate count (one Mult-Add = 1) for one application.
double module_mult_adds(const ModuleSpec& m, const Shape& in, const Shape& out);
bool basic_block_has_projection(const ModuleSpec& m);

/// Externally supplied cost metadata; overrides the analytic values.
struct CostMeta {
  double mult_adds = 0.0;
  double params = 0.0;
  bool operator==(const CostMeta&) const = default;
};

/// Edge as supplied to build_graph (endpoints are layer ids).
struct EdgeSpec {
  int src = 0;
  int dst = 0;
  ModuleSpec module;
  bool fixed = false;  // structural edge: always present, never sampled
  std::optional<CostMeta> cost_meta;
};

/// Validated edge; src/dst are topological positions.
struct Edge {
  int src = 0;
  int dst = 0;
  ModuleSpec module;
  bool fixed = false;
  std::optional<CostMeta> cost_meta;
  double mult_adds = 0.0;
  double param_count = 0.0;
};

/// Immutable, validated super-network DAG. Layers are stored in topological
/// order (position 0 is the input l_1, the last position is the output l_N);
/// edges are sorted by (dst, src) position.
class SuperNetGraph {
 public:
  int num_layers() const { return static_cast<int>(layers_.size()); }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(int pos) const { return layers_[pos]; }
  const std::vector<Edge>& edges() const { return edges_; }
  const Edge& edge(int e) const { return edges_[e]; }
  int source() const { return 0; }
  int sink() const { return num_layers() - 1; }

  /// Edge indices entering / leaving a layer, ordered by the other endpoint.
  std::span<const int> in_edges(int pos) const { return in_edges_[pos]; }
  std::span<const int> out_edges(int pos) const { return out_edges_[pos]; }

  std::optional<int> position_of(int layer_id) const;
  std::optional<int> find_edge(int src_pos, int dst_pos) const;
  std::optional<int> find_edge_by_id(int src_id, int dst_id) const;

  /// Dense N x N adjacency view E (rows: source, cols: destination).
  Eigen::MatrixXi adjacency() const;

  /// Edges that are candidates for sampling (not fixed).
  int num_sampled_edges() const;

 private:
  friend SuperNetGraph build_graph(std::vector<LayerSpec>, std::vector<EdgeSpec>);

  std::vector<LayerSpec> layers_;
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> in_edges_;
  std::vector<std::vector<int>> out_edges_;
};

/// Validates and freezes a graph. Throws Error with CycleDetected,
/// ShapeMismatch, DisconnectedLayer, MultipleSinks or InvalidGraph.
/// The first listed layer is the input l_1.
SuperNetGraph build_graph(std::vector<LayerSpec> layers, std::vector<EdgeSpec> edges);

/// Binary selection H over the edges of E (stored sparsely, one bit per edge).
struct Mask {
  std::vector<std::uint8_t> bits;

  static Mask full(const SuperNetGraph& g) { return {std::vector<std::uint8_t>(g.num_edges(), 1)}; }
  static Mask none(const SuperNetGraph& g) { return {std::vector<std::uint8_t>(g.num_edges(), 0)}; }
  /// Mask whose bit e is (code >> e) & 1.
  static Mask from_code(const SuperNetGraph& g, std::uint64_t code);

  bool operator[](int e) const { return bits[e] != 0; }
  int count() const;
  /// Dense N x N view of H (zero outside E).
  Eigen::MatrixXi dense(const SuperNetGraph& g) const;

  bool operator==(const Mask&) const = default;
};

void check_conforms(const SuperNetGraph& g, const Mask& h);

/// Layers reachable from l_1 through selected edges.
std::vector<std::uint8_t> forward_reachable(const SuperNetGraph& g, const Mask& h);

/// Selected edges lying on at least one selected l_1 -> l_N path.
Mask live_edges(const SuperNetGraph& g, const Mask& h);

bool is_output_connected(const SuperNetGraph& g, const Mask& h);

/// The graph restricted to live edges and the layers they touch.
/// Throws NotConnected when l_N is unreachable.
SuperNetGraph sub_architecture(const SuperNetGraph& g, const Mask& h);

}  // namespace bsn
