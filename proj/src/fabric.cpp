#include "bsn/fabric.hpp"

#include <string>

namespace bsn {

namespace {

struct Builder {
  std::vector<LayerSpec> layers;
  std::vector<EdgeSpec> edges;

  void layer(int id, Shape shape, Activation act = Activation::None) { layers.push_back({id, std::move(shape), act}); }

  void edge(int src, int dst, ModuleSpec m, bool fixed = false) {
    if (m.slot.empty() && m.kind != ModuleKind::Identity) m.slot = "e" + std::to_string(src) + "_" + std::to_string(dst);
    edges.push_back({src, dst, std::move(m), fixed, std::nullopt});
  }

  const Shape& shape_of(int id) const {
    for (const auto& l : layers)
      if (l.id == id) return l.shape;
    throw Error(Errc::InvalidGraph, "unknown layer id " + std::to_string(id));
  }
};

// Copies full-size analytic costs onto the toy edges (same edge order).
SuperNetGraph with_full_costs(Builder toy, const Builder& full) {
  for (std::size_t i = 0; i < toy.edges.size(); ++i) {
    const EdgeSpec& f = full.edges[i];
    const Shape& in = full.shape_of(f.src);
    const Shape& out = full.shape_of(f.dst);
    toy.edges[i].cost_meta = CostMeta{module_mult_adds(f.module, in, out), static_cast<double>(module_param_count(f.module))};
  }
  return build_graph(std::move(toy.layers), std::move(toy.edges));
}

void check_image_shape(const Shape& s, const char* what) {
  if (s.size() != 3 || s[0] < 1 || s[1] < 1 || s[2] < 1) {
    throw Error(Errc::InvalidConfig, std::string(what) + " must be CxHxW with positive sizes, got " + shape_string(s));
  }
}

Builder resnet_builder(const ResNetFabricConfig& cfg, const Shape& input, int base) {
  const int k = cfg.groups, n = cfg.width;
  Builder b;
  b.layer(0, input);
  const auto res = [&](int g, int axis) { return std::max(1, input[axis] >> (g - 1)); };
  const auto filters = [&](int g) { return base << (g - 1); };
  b.layer(resnet_node_id(cfg, 1, 0), {filters(1), res(1, 1), res(1, 2)}, Activation::ReLU);
  for (int g = 1; g <= k; ++g)
    for (int j = 1; j <= n; ++j) b.layer(resnet_node_id(cfg, g, j), {filters(g), res(g, 1), res(g, 2)});
  const int out = resnet_node_id(cfg, k, n) + 1;
  b.layer(out, {cfg.num_classes});

  b.edge(0, resnet_node_id(cfg, 1, 0), ModuleSpec::conv2d(input[0], filters(1), 3, 1, "stem"), true);
  for (int g = 1; g <= k; ++g) {
    for (int j = 1; j <= n; ++j) {
      const int dst = resnet_node_id(cfg, g, j);
      if (g == 1 || j > 1) {
        const int prev = resnet_node_id(cfg, g, j - 1);
        b.edge(prev, dst, ModuleSpec::basic_block(filters(g), filters(g), 1, ""));
      }
      if (g == 1) continue;
      for (int m = std::max(1, n - j); m <= std::min(n, n + 2 - j); ++m) {
        b.edge(resnet_node_id(cfg, g - 1, m), dst, ModuleSpec::basic_block(filters(g - 1), filters(g), 2, ""));
      }
    }
  }
  b.edge(resnet_node_id(cfg, k, n), out, ModuleSpec::classifier(filters(k), cfg.num_classes, "head"), true);
  return b;
}

Builder cnf_builder(const CnfConfig& cfg, const Shape& input, int filters) {
  const int W = cfg.width, H = cfg.height;
  Builder b;
  b.layer(0, input);
  std::vector<int> res(H);
  for (int s = 0; s < H; ++s) res[s] = std::max(1, input[1] >> s);
  for (int c = 1; c <= W; ++c)
    for (int s = 0; s < H; ++s) b.layer(cnf_node_id(cfg, c, s), {filters, res[s], res[s]}, Activation::ReLU);
  const int out = cnf_node_id(cfg, W, H - 1) + 1;
  const auto down = [&] { return ModuleSpec::downsample_conv(filters, filters, 3, ""); };
  const auto same = [&] { return ModuleSpec::conv2d(filters, filters, 3, 1, ""); };
  const auto up = [&](int s) { return ModuleSpec::upsample_conv(filters, filters, 3, res[s] / res[s + 1], ""); };

  b.edge(0, cnf_node_id(cfg, 1, 0), ModuleSpec::conv2d(input[0], filters, 3, 1, "stem"), true);
  for (int s = 1; s < H; ++s) b.edge(cnf_node_id(cfg, 1, s - 1), cnf_node_id(cfg, 1, s), down());
  for (int c = 2; c <= W; ++c) {
    for (int s = 0; s < H; ++s) {
      const int dst = cnf_node_id(cfg, c, s);
      if (s > 0) b.edge(cnf_node_id(cfg, c - 1, s - 1), dst, down());
      b.edge(cnf_node_id(cfg, c - 1, s), dst, same());
      if (s + 1 < H) b.edge(cnf_node_id(cfg, c - 1, s + 1), dst, up(s));
    }
  }
  if (cfg.task == CnfTask::Classify) {
    if (W >= 2)
      for (int s = 1; s < H; ++s) b.edge(cnf_node_id(cfg, W, s - 1), cnf_node_id(cfg, W, s), down());
    b.layer(out, {cfg.num_classes});
    b.edge(cnf_node_id(cfg, W, H - 1), out, ModuleSpec::classifier(filters, cfg.num_classes, "head"), true);
  } else {
    for (int s = H - 2; s >= 0; --s) b.edge(cnf_node_id(cfg, W, s + 1), cnf_node_id(cfg, W, s), up(s));
    b.layer(out, {cfg.num_classes, res[0], res[0]});
    ModuleSpec head = ModuleSpec::conv2d(filters, cfg.num_classes, 1, 1, "head");
    b.edge(cnf_node_id(cfg, W, 0), out, head, true);
  }
  return b;
}

}  // namespace

int resnet_node_id(const ResNetFabricConfig& cfg, int group, int block) {
  return group == 1 && block == 0 ? 1 : 1 + (group - 1) * cfg.width + block;
}

SuperNetGraph resnet_fabric(const ResNetFabricConfig& cfg) {
  if (cfg.groups < 1 || cfg.width < 1) throw Error(Errc::InvalidConfig, "resnet fabric needs groups >= 1 and width >= 1");
  if (cfg.base_filters < 1 || cfg.num_classes < 1) throw Error(Errc::InvalidConfig, "filters and classes must be positive");
  check_image_shape(cfg.input_shape, "input_shape");
  Builder full = resnet_builder(cfg, cfg.input_shape, cfg.base_filters);
  if (!cfg.toy_scale) return build_graph(std::move(full.layers), std::move(full.edges));
  check_image_shape(cfg.toy_input_shape, "toy_input_shape");
  if (cfg.toy_filters < 1) throw Error(Errc::InvalidConfig, "toy_filters must be positive");
  return with_full_costs(resnet_builder(cfg, cfg.toy_input_shape, cfg.toy_filters), full);
}

Mask resnet_path_mask(const SuperNetGraph& g, const ResNetFabricConfig& cfg) {
  Mask h = Mask::none(g);
  const auto set = [&](int src, int dst) {
    const auto e = g.find_edge_by_id(src, dst);
    if (!e) throw Error(Errc::InvalidGraph, "graph is not a resnet fabric of this configuration");
    h.bits[*e] = 1;
  };
  const int k = cfg.groups, n = cfg.width;
  set(0, resnet_node_id(cfg, 1, 0));
  for (int g2 = 1; g2 <= k; ++g2) {
    set(g2 == 1 ? resnet_node_id(cfg, 1, 0) : resnet_node_id(cfg, g2 - 1, n), resnet_node_id(cfg, g2, 1));
    for (int j = 2; j <= n; ++j) set(resnet_node_id(cfg, g2, j - 1), resnet_node_id(cfg, g2, j));
  }
  set(resnet_node_id(cfg, k, n), resnet_node_id(cfg, k, n) + 1);
  return h;
}

int cnf_node_id(const CnfConfig& cfg, int column, int scale) { return 1 + (column - 1) * cfg.height + scale; }

SuperNetGraph cnf(const CnfConfig& cfg) {
  if (cfg.width < 1 || cfg.height < 1) throw Error(Errc::InvalidConfig, "cnf needs width >= 1 and height >= 1");
  if (cfg.filters < 1 || cfg.num_classes < 1) throw Error(Errc::InvalidConfig, "filters and classes must be positive");
  if (cfg.task == CnfTask::Segment && cfg.width < 2) throw Error(Errc::InvalidConfig, "segmentation fabric needs width >= 2");
  check_image_shape(cfg.input_shape, "input_shape");
  const int res = cfg.input_shape[1];
  if (cfg.input_shape[2] != res) throw Error(Errc::InvalidConfig, "cnf input must be square");
  const int span = 1 << (cfg.height - 1);
  if (cfg.height > 30 || res % span != 0 || (cfg.task == CnfTask::Classify && res != span)) {
    throw Error(Errc::InvalidConfig, "height " + std::to_string(cfg.height) + " does not halve resolution " +
                                         std::to_string(res) + (cfg.task == CnfTask::Classify ? " down to 1x1" : " evenly"));
  }
  Builder full = cnf_builder(cfg, cfg.input_shape, cfg.filters);
  if (!cfg.toy_scale) return build_graph(std::move(full.layers), std::move(full.edges));
  check_image_shape(cfg.toy_input_shape, "toy_input_shape");
  if (cfg.toy_input_shape[1] != cfg.toy_input_shape[2]) throw Error(Errc::InvalidConfig, "cnf toy input must be square");
  if (cfg.toy_filters < 1) throw Error(Errc::InvalidConfig, "toy_filters must be positive");
  return with_full_costs(cnf_builder(cfg, cfg.toy_input_shape, cfg.toy_filters), full);
}

int cnf_edge_count(const CnfConfig& cfg) {
  const int W = cfg.width, H = cfg.height;
  return (H - 1) + (W - 1) * (3 * H - 2) + (W >= 2 ? H - 1 : 0) + 2;
}

SuperNetGraph dense_supernet(const std::vector<int>& widths) {
  if (widths.size() < 2) throw Error(Errc::InvalidConfig, "dense supernet needs at least an input and an output layer");
  Builder b;
  const int last = static_cast<int>(widths.size()) - 1;
  for (int i = 0; i <= last; ++i) {
    if (widths[i] < 1) throw Error(Errc::InvalidConfig, "layer widths must be positive");
    b.layer(i, {widths[i]}, i > 0 && i < last ? Activation::ReLU : Activation::None);
  }
  for (int j = 1; j <= last; ++j)
    for (int i = 0; i < j; ++i) b.edge(i, j, ModuleSpec::dense(widths[i], widths[j], ""));
  return build_graph(std::move(b.layers), std::move(b.edges));
}

SuperNetGraph fork_network(int width) {
  Builder b;
  for (int i = 0; i <= 8; ++i) b.layer(i, {width});
  const auto dense = [&] { return ModuleSpec::dense(width, width, ""); };
  b.edge(0, 1, dense());
  b.edge(1, 2, dense());
  b.edge(2, 3, dense());
  // two branches of three modules from layer 3 into the output 8
  b.edge(3, 4, dense());
  b.edge(4, 5, dense());
  b.edge(5, 8, dense());
  b.edge(3, 6, dense());
  b.edge(6, 7, dense());
  b.edge(7, 8, dense());
  return build_graph(std::move(b.layers), std::move(b.edges));
}

SuperNetGraph twin_chain_network(int width) {
  Builder b;
  b.layer(0, {width});
  for (int i = 1; i <= 8; ++i) b.layer(i, {width});
  b.layer(9, {width});
  const auto dense = [&] { return ModuleSpec::dense(width, width, ""); };
  for (int branch = 0; branch < 2; ++branch) {
    int prev = 0;
    for (int step = 1; step <= 4; ++step) {
      const int id = branch * 4 + step;
      b.edge(prev, id, dense());
      prev = id;
    }
    b.edge(prev, 9, dense());
  }
  return build_graph(std::move(b.layers), std::move(b.edges));
}

}  // namespace bsn
