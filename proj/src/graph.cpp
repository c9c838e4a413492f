#include "bsn/graph.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <queue>
#include <set>

namespace bsn {

namespace {

constexpr std::pair<ModuleKind, std::string_view> kKindNames[] = {
    {ModuleKind::Identity, "Identity"},
    {ModuleKind::Dense, "Dense"},
    {ModuleKind::Conv2d, "Conv2d"},
    {ModuleKind::Projection, "Projection"},
    {ModuleKind::DownsampleConv, "DownsampleConv"},
    {ModuleKind::UpsampleConv, "UpsampleConv"},
    {ModuleKind::BasicBlock, "BasicBlock"},
    {ModuleKind::Classifier, "Classifier"},
};

int conv_out(int size, int kernel, int stride, int pad) { return (size + 2 * pad - kernel) / stride + 1; }

bool is_image(const Shape& s) { return s.size() == 3; }

}  // namespace

std::string_view module_kind_name(ModuleKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

std::optional<ModuleKind> parse_module_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

ModuleSpec ModuleSpec::dense(int in, int out, std::string slot) {
  ModuleSpec m;
  m.kind = ModuleKind::Dense;
  m.in_channels = in;
  m.out_channels = out;
  m.kernel = 1;
  m.slot = std::move(slot);
  return m;
}

ModuleSpec ModuleSpec::conv2d(int in, int out, int kernel, int stride, std::string slot) {
  ModuleSpec m;
  m.kind = ModuleKind::Conv2d;
  m.in_channels = in;
  m.out_channels = out;
  m.kernel = kernel;
  m.stride = stride;
  m.slot = std::move(slot);
  return m;
}

ModuleSpec ModuleSpec::projection(int in, int out, int stride, std::string slot) {
  ModuleSpec m = conv2d(in, out, 1, stride, std::move(slot));
  m.kind = ModuleKind::Projection;
  return m;
}

ModuleSpec ModuleSpec::downsample_conv(int in, int out, int kernel, std::string slot) {
  ModuleSpec m = conv2d(in, out, kernel, 2, std::move(slot));
  m.kind = ModuleKind::DownsampleConv;
  return m;
}

ModuleSpec ModuleSpec::upsample_conv(int in, int out, int kernel, int factor, std::string slot) {
  ModuleSpec m = conv2d(in, out, kernel, 1, std::move(slot));
  m.kind = ModuleKind::UpsampleConv;
  m.factor = factor;
  return m;
}

ModuleSpec ModuleSpec::basic_block(int in, int out, int stride, std::string slot) {
  ModuleSpec m = conv2d(in, out, 3, stride, std::move(slot));
  m.kind = ModuleKind::BasicBlock;
  return m;
}

ModuleSpec ModuleSpec::classifier(int in, int classes, std::string slot) {
  ModuleSpec m = dense(in, classes, std::move(slot));
  m.kind = ModuleKind::Classifier;
  return m;
}

bool basic_block_has_projection(const ModuleSpec& m) {
  return m.kind == ModuleKind::BasicBlock && (m.stride != 1 || m.in_channels != m.out_channels);
}

std::optional<Shape> module_output_shape(const ModuleSpec& m, const Shape& in) {
  switch (m.kind) {
    case ModuleKind::Identity:
      return in;
    case ModuleKind::Dense:
      if (numel(in) != m.in_channels || m.out_channels < 1) return std::nullopt;
      return Shape{m.out_channels};
    case ModuleKind::Classifier:
      if (in.empty() || in[0] != m.in_channels || m.out_channels < 1) return std::nullopt;
      return Shape{m.out_channels};
    case ModuleKind::Conv2d:
    case ModuleKind::DownsampleConv:
    case ModuleKind::BasicBlock: {
      if (!is_image(in) || in[0] != m.in_channels || m.kernel < 1 || m.stride < 1) return std::nullopt;
      const int pad = m.kernel / 2;
      return Shape{m.out_channels, conv_out(in[1], m.kernel, m.stride, pad), conv_out(in[2], m.kernel, m.stride, pad)};
    }
    case ModuleKind::Projection:
      if (!is_image(in) || in[0] != m.in_channels || m.stride < 1) return std::nullopt;
      return Shape{m.out_channels, conv_out(in[1], 1, m.stride, 0), conv_out(in[2], 1, m.stride, 0)};
    case ModuleKind::UpsampleConv:
      if (!is_image(in) || in[0] != m.in_channels || m.factor < 1) return std::nullopt;
      return Shape{m.out_channels, in[1] * m.factor, in[2] * m.factor};
  }
  return std::nullopt;
}

std::vector<ParamDecl> module_params(const ModuleSpec& m) {
  std::vector<ParamDecl> out;
  const auto conv = [&](const std::string& prefix, int cin, int cout, int k) {
    out.push_back({prefix + "w", {cout, cin, k, k}, cin * k * k});
    if (m.bias) out.push_back({prefix + "b", {cout}, cin * k * k});
  };
  switch (m.kind) {
    case ModuleKind::Identity:
      break;
    case ModuleKind::Dense:
    case ModuleKind::Classifier:
      out.push_back({"w", {m.out_channels, m.in_channels}, m.in_channels});
      if (m.bias) out.push_back({"b", {m.out_channels}, m.in_channels});
      break;
    case ModuleKind::Conv2d:
    case ModuleKind::DownsampleConv:
    case ModuleKind::UpsampleConv:
      conv("", m.in_channels, m.out_channels, m.kernel);
      break;
    case ModuleKind::Projection:
      conv("", m.in_channels, m.out_channels, 1);
      break;
    case ModuleKind::BasicBlock:
      conv("conv1.", m.in_channels, m.out_channels, m.kernel);
      conv("conv2.", m.out_channels, m.out_channels, m.kernel);
      if (basic_block_has_projection(m)) conv("proj.", m.in_channels, m.out_channels, 1);
      break;
  }
  return out;
}

std::int64_t module_param_count(const ModuleSpec& m) {
  std::int64_t n = 0;
  for (const auto& p : module_params(m)) n += numel(p.shape);
  return n;
}

double module_mult_adds(const ModuleSpec& m, const Shape& in, const Shape& out) {
  const auto spatial = [](const Shape& s) { return s.size() == 3 ? double(s[1]) * s[2] : 1.0; };
  const double cin = m.in_channels;
  const double cout = m.out_channels;
  const double k2 = double(m.kernel) * m.kernel;
  switch (m.kind) {
    case ModuleKind::Identity:
      return 0.0;
    case ModuleKind::Dense:
    case ModuleKind::Classifier:
      return cin * cout;
    case ModuleKind::Conv2d:
    case ModuleKind::DownsampleConv:
      return spatial(out) * cin * cout * k2;
    case ModuleKind::UpsampleConv:
      return spatial(in) * cin * cout * k2;
    case ModuleKind::Projection:
      return spatial(out) * cin * cout;
    case ModuleKind::BasicBlock: {
      double total = spatial(out) * (cin * cout * k2 + cout * cout * k2);
      if (basic_block_has_projection(m)) total += spatial(out) * cin * cout;
      return total;
    }
  }
  return 0.0;
}

std::optional<int> SuperNetGraph::position_of(int layer_id) const {
  for (int i = 0; i < num_layers(); ++i) {
    if (layers_[i].id == layer_id) return i;
  }
  return std::nullopt;
}

std::optional<int> SuperNetGraph::find_edge(int src_pos, int dst_pos) const {
  if (dst_pos < 0 || dst_pos >= num_layers()) return std::nullopt;
  for (int e : in_edges_[dst_pos]) {
    if (edges_[e].src == src_pos) return e;
  }
  return std::nullopt;
}

std::optional<int> SuperNetGraph::find_edge_by_id(int src_id, int dst_id) const {
  const auto s = position_of(src_id);
  const auto d = position_of(dst_id);
  if (!s || !d) return std::nullopt;
  return find_edge(*s, *d);
}

Eigen::MatrixXi SuperNetGraph::adjacency() const {
  Eigen::MatrixXi a = Eigen::MatrixXi::Zero(num_layers(), num_layers());
  for (const auto& e : edges_) a(e.src, e.dst) = 1;
  return a;
}

int SuperNetGraph::num_sampled_edges() const {
  return static_cast<int>(std::count_if(edges_.begin(), edges_.end(), [](const Edge& e) { return !e.fixed; }));
}

SuperNetGraph build_graph(std::vector<LayerSpec> layers, std::vector<EdgeSpec> edges) {
  const int n = static_cast<int>(layers.size());
  if (n < 2) throw Error(Errc::InvalidGraph, "a super network needs at least an input and an output layer");

  std::map<int, int> index_of;
  for (int i = 0; i < n; ++i) {
    const auto& l = layers[i];
    if (l.shape.empty() || std::any_of(l.shape.begin(), l.shape.end(), [](int d) { return d < 1; })) {
      throw Error(Errc::InvalidGraph, "layer " + std::to_string(l.id) + " has an invalid shape");
    }
    if (!index_of.emplace(l.id, i).second) {
      throw Error(Errc::InvalidGraph, "duplicate layer id " + std::to_string(l.id));
    }
  }

  std::vector<std::vector<int>> succ(n), pred(n);
  std::set<std::pair<int, int>> seen;
  for (const auto& e : edges) {
    const auto s = index_of.find(e.src);
    const auto d = index_of.find(e.dst);
    if (s == index_of.end() || d == index_of.end()) {
      throw Error(Errc::InvalidGraph, "edge (" + std::to_string(e.src) + "," + std::to_string(e.dst) +
                                          ") references an unknown layer");
    }
    if (s->second == d->second) throw Error(Errc::CycleDetected, "self loop on layer " + std::to_string(e.src));
    if (!seen.emplace(s->second, d->second).second) {
      throw Error(Errc::InvalidGraph, "duplicate edge (" + std::to_string(e.src) + "," + std::to_string(e.dst) + ")");
    }
    succ[s->second].push_back(d->second);
    pred[d->second].push_back(s->second);
  }

  // Kahn's algorithm, smallest listed index first, so an already
  // topologically listed graph keeps its order.
  std::vector<int> indegree(n);
  for (int i = 0; i < n; ++i) indegree[i] = static_cast<int>(pred[i].size());
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push(i);
  }
  std::vector<int> order;
  order.reserve(n);
  while (!ready.empty()) {
    const int v = ready.top();
    ready.pop();
    order.push_back(v);
    for (int w : succ[v]) {
      if (--indegree[w] == 0) ready.push(w);
    }
  }
  if (static_cast<int>(order.size()) != n) throw Error(Errc::CycleDetected, "edge set contains a cycle");
  if (!pred[0].empty()) throw Error(Errc::InvalidGraph, "the input layer has incoming edges");

  std::vector<std::uint8_t> reach(n, 0);
  reach[0] = 1;
  for (int v : order) {
    if (!reach[v]) continue;
    for (int w : succ[v]) reach[w] = 1;
  }
  for (int v : order) {
    if (!reach[v]) throw Error(Errc::DisconnectedLayer, "layer " + std::to_string(layers[v].id) + " is not reachable from the input");
  }
  int sinks = 0;
  for (int i = 0; i < n; ++i) sinks += succ[i].empty() ? 1 : 0;
  if (sinks != 1) throw Error(Errc::MultipleSinks, std::to_string(sinks) + " layers have no outgoing edge");

  std::vector<int> pos(n);
  for (int p = 0; p < n; ++p) pos[order[p]] = p;

  SuperNetGraph g;
  g.layers_.reserve(n);
  for (int v : order) g.layers_.push_back(std::move(layers[v]));

  std::map<std::string, std::vector<ParamDecl>> slot_params;
  for (auto& spec : edges) {
    Edge e;
    e.src = pos[index_of[spec.src]];
    e.dst = pos[index_of[spec.dst]];
    const Shape& in = g.layers_[e.src].shape;
    const Shape& out = g.layers_[e.dst].shape;
    const auto produced = module_output_shape(spec.module, in);
    const std::string where = "edge (" + std::to_string(spec.src) + "," + std::to_string(spec.dst) + ")";
    if (!produced || *produced != out) {
      throw Error(Errc::ShapeMismatch, where + ": " + std::string(module_kind_name(spec.module.kind)) + " maps " +
                                           shape_string(in) + " to " + (produced ? shape_string(*produced) : "nothing") +
                                           ", layer expects " + shape_string(out));
    }
    if (spec.module.kind != ModuleKind::Identity) {
      if (spec.module.slot.empty()) throw Error(Errc::InvalidGraph, where + " has no parameter slot");
      auto decls = module_params(spec.module);
      auto [it, inserted] = slot_params.emplace(spec.module.slot, decls);
      if (!inserted) {
        const bool same = it->second.size() == decls.size() &&
                          std::equal(decls.begin(), decls.end(), it->second.begin(),
                                     [](const ParamDecl& a, const ParamDecl& b) { return a.name == b.name && a.shape == b.shape; });
        if (!same) throw Error(Errc::InvalidGraph, where + " shares slot '" + spec.module.slot + "' with an incompatible module");
      }
    }
    e.module = std::move(spec.module);
    e.fixed = spec.fixed;
    e.cost_meta = spec.cost_meta;
    e.mult_adds = e.cost_meta ? e.cost_meta->mult_adds : module_mult_adds(e.module, in, out);
    e.param_count = e.cost_meta ? e.cost_meta->params : static_cast<double>(module_param_count(e.module));
    g.edges_.push_back(std::move(e));
  }
  std::sort(g.edges_.begin(), g.edges_.end(),
            [](const Edge& a, const Edge& b) { return std::tie(a.dst, a.src) < std::tie(b.dst, b.src); });

  g.in_edges_.assign(n, {});
  g.out_edges_.assign(n, {});
  for (int e = 0; e < g.num_edges(); ++e) {
    g.in_edges_[g.edges_[e].dst].push_back(e);
    g.out_edges_[g.edges_[e].src].push_back(e);
  }
  for (auto& list : g.out_edges_) {
    std::sort(list.begin(), list.end(), [&](int a, int b) { return g.edges_[a].dst < g.edges_[b].dst; });
  }
  return g;
}

Mask Mask::from_code(const SuperNetGraph& g, std::uint64_t code) {
  Mask h = none(g);
  for (int e = 0; e < g.num_edges() && e < 64; ++e) h.bits[e] = (code >> e) & 1U;
  return h;
}

int Mask::count() const { return static_cast<int>(std::count(bits.begin(), bits.end(), std::uint8_t{1})); }

Eigen::MatrixXi Mask::dense(const SuperNetGraph& g) const {
  Eigen::MatrixXi d = Eigen::MatrixXi::Zero(g.num_layers(), g.num_layers());
  for (int e = 0; e < g.num_edges(); ++e) d(g.edge(e).src, g.edge(e).dst) = bits[e] ? 1 : 0;
  return d;
}

void check_conforms(const SuperNetGraph& g, const Mask& h) {
  if (static_cast<int>(h.bits.size()) != g.num_edges()) {
    throw Error(Errc::ShapeMismatch, "mask has " + std::to_string(h.bits.size()) + " bits, graph has " +
                                         std::to_string(g.num_edges()) + " edges");
  }
}

std::vector<std::uint8_t> forward_reachable(const SuperNetGraph& g, const Mask& h) {
  check_conforms(g, h);
  std::vector<std::uint8_t> reach(g.num_layers(), 0);
  reach[0] = 1;
  for (int i = 1; i < g.num_layers(); ++i) {
    for (int e : g.in_edges(i)) {
      if (h[e] && reach[g.edge(e).src]) {
        reach[i] = 1;
        break;
      }
    }
  }
  return reach;
}

Mask live_edges(const SuperNetGraph& g, const Mask& h) {
  const auto reach = forward_reachable(g, h);
  std::vector<std::uint8_t> coreach(g.num_layers(), 0);
  coreach[g.sink()] = 1;
  for (int k = g.num_layers() - 2; k >= 0; --k) {
    for (int e : g.out_edges(k)) {
      if (h[e] && coreach[g.edge(e).dst]) {
        coreach[k] = 1;
        break;
      }
    }
  }
  Mask live = Mask::none(g);
  for (int e = 0; e < g.num_edges(); ++e) {
    live.bits[e] = (h[e] && reach[g.edge(e).src] && coreach[g.edge(e).dst]) ? 1 : 0;
  }
  return live;
}

bool is_output_connected(const SuperNetGraph& g, const Mask& h) { return forward_reachable(g, h)[g.sink()] != 0; }

SuperNetGraph sub_architecture(const SuperNetGraph& g, const Mask& h) {
  if (!is_output_connected(g, h)) throw Error(Errc::NotConnected, "the selected edges do not connect input to output");
  const Mask live = live_edges(g, h);
  std::vector<std::uint8_t> keep(g.num_layers(), 0);
  std::vector<EdgeSpec> edges;
  for (int e = 0; e < g.num_edges(); ++e) {
    if (!live[e]) continue;
    const Edge& edge = g.edge(e);
    keep[edge.src] = keep[edge.dst] = 1;
    edges.push_back({g.layer(edge.src).id, g.layer(edge.dst).id, edge.module, edge.fixed, edge.cost_meta});
  }
  std::vector<LayerSpec> layers;
  for (int i = 0; i < g.num_layers(); ++i) {
    if (keep[i]) layers.push_back(g.layer(i));
  }
  return build_graph(std::move(layers), std::move(edges));
}

}  // namespace bsn
