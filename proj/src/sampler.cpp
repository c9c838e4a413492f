#include "bsn/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace bsn {

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

double binary_entropy(double p) {
  constexpr double kClip = 1e-7;
  p = std::clamp(p, kClip, 1.0 - kClip);
  return -p * std::log(p) - (1.0 - p) * std::log1p(-p);
}

double ArchitectureDistribution::gamma(int e) const { return sigmoid(logits[e]); }
double ArchitectureDistribution::log_gamma(int e) const { return -softplus(-logits[e]); }
double ArchitectureDistribution::log_one_minus_gamma(int e) const { return -softplus(logits[e]); }

void check_covers(const SuperNetGraph& g, const ArchitectureDistribution& dist) {
  if (static_cast<int>(dist.logits.size()) != g.num_edges()) {
    throw Error(Errc::ShapeMismatch, "distribution has " + std::to_string(dist.logits.size()) + " logits, graph has " +
                                         std::to_string(g.num_edges()) + " edges");
  }
}

SampleRecord sample_mask(const SuperNetGraph& g, const ArchitectureDistribution& dist, Rng& rng) {
  check_covers(g, dist);
  SampleRecord rec{Mask::none(g), 0.0, {}};
  std::vector<std::uint8_t> reach(g.num_layers(), 0);
  reach[0] = 1;
  for (int i = 1; i < g.num_layers(); ++i) {
    for (int e : g.in_edges(i)) {
      const Edge& edge = g.edge(e);
      if (!reach[edge.src]) continue;
      if (edge.fixed) {
        rec.mask.bits[e] = 1;
      } else {
        const bool on = rng.bernoulli(dist.gamma(e));
        rec.mask.bits[e] = on ? 1 : 0;
        rec.log_prob += on ? dist.log_gamma(e) : dist.log_one_minus_gamma(e);
        rec.sampled_edges.push_back(e);
      }
      if (rec.mask.bits[e]) reach[i] = 1;
    }
  }
  return rec;
}

std::optional<double> log_prob_of(const SuperNetGraph& g, const ArchitectureDistribution& dist, const Mask& h) {
  check_covers(g, dist);
  check_conforms(g, h);
  double lp = 0.0;
  std::vector<std::uint8_t> reach(g.num_layers(), 0);
  reach[0] = 1;
  for (int i = 1; i < g.num_layers(); ++i) {
    for (int e : g.in_edges(i)) {
      const Edge& edge = g.edge(e);
      if (!reach[edge.src]) {
        if (h[e]) return std::nullopt;
        continue;
      }
      if (edge.fixed) {
        if (!h[e]) return std::nullopt;
      } else {
        lp += h[e] ? dist.log_gamma(e) : dist.log_one_minus_gamma(e);
      }
      if (h[e]) reach[i] = 1;
    }
  }
  return lp;
}

double entropy(const SuperNetGraph& g, const ArchitectureDistribution& dist) {
  check_covers(g, dist);
  double total = 0.0;
  for (int e = 0; e < g.num_edges(); ++e) {
    if (!g.edge(e).fixed) total += binary_entropy(dist.gamma(e));
  }
  return total;
}

std::vector<double> grad_log_prob(const SuperNetGraph& g, const ArchitectureDistribution& dist, const SampleRecord& record) {
  check_covers(g, dist);
  std::vector<double> grad(g.num_edges(), 0.0);
  for (int e : record.sampled_edges) grad[e] = (record.mask[e] ? 1.0 : 0.0) - dist.gamma(e);
  return grad;
}

void enumerate_masks(const SuperNetGraph& g, const ArchitectureDistribution& dist,
                     const std::function<void(const Mask&, double)>& visit, int max_sampled_edges) {
  check_covers(g, dist);
  if (g.num_sampled_edges() > max_sampled_edges) {
    throw Error(Errc::TooLarge, std::to_string(g.num_sampled_edges()) + " candidate edges exceed the enumeration limit of " +
                                    std::to_string(max_sampled_edges));
  }
  // Edges in draw order: by destination layer, then ascending source.
  std::vector<int> order;
  for (int i = 1; i < g.num_layers(); ++i)
    for (int e : g.in_edges(i)) order.push_back(e);

  Mask h = Mask::none(g);
  std::vector<std::uint8_t> reach(g.num_layers(), 0);
  reach[0] = 1;
  std::function<void(std::size_t, double)> recurse = [&](std::size_t pos, double prob) {
    if (pos == order.size()) {
      visit(h, prob);
      return;
    }
    const int e = order[pos];
    const Edge& edge = g.edge(e);
    const int dst = edge.dst;
    if (!reach[edge.src]) {
      recurse(pos + 1, prob);
      return;
    }
    const auto with_bit = [&](bool on, double p) {
      const std::uint8_t saved = reach[dst];
      h.bits[e] = on ? 1 : 0;
      if (on) reach[dst] = 1;
      recurse(pos + 1, p);
      reach[dst] = saved;
      h.bits[e] = 0;
    };
    if (edge.fixed) {
      with_bit(true, prob);
    } else {
      with_bit(true, prob * dist.gamma(e));
      with_bit(false, prob * (1.0 - dist.gamma(e)));
    }
  };
  recurse(0, 1.0);
}

double sampling_entropy(const SuperNetGraph& g, const ArchitectureDistribution& dist) {
  double h = 0.0;
  enumerate_masks(g, dist, [&](const Mask&, double p) {
    if (p > 0.0) h -= p * std::log(p);
  });
  return h;
}

ConnectedSample sample_connected(const SuperNetGraph& g, const ArchitectureDistribution& dist, Rng& rng, int resample_limit) {
  ConnectedSample out;
  for (int attempt = 0; attempt <= resample_limit; ++attempt) {
    out.record = sample_mask(g, dist, rng);
    out.attempts = attempt + 1;
    if (is_output_connected(g, out.record.mask)) return out;
  }
  out.substituted = true;
  out.record = SampleRecord{Mask::full(g), 0.0, {}};
  return out;
}

std::vector<WeightedMask> effective_mask_distribution(const SuperNetGraph& g, const ArchitectureDistribution& dist,
                                                      int resample_limit, int max_sampled_edges) {
  std::vector<WeightedMask> connected;
  double disconnected = 0.0;
  enumerate_masks(
      g, dist,
      [&](const Mask& h, double p) {
        if (is_output_connected(g, h)) {
          connected.push_back({h, p});
        } else {
          disconnected += p;
        }
      },
      max_sampled_edges);
  // Each attempt succeeds with probability 1 - q; after resample_limit + 1
  // failures the full mask is used.
  const double q = disconnected;
  const double fail_all = std::pow(q, resample_limit + 1);
  const double scale = q < 1.0 ? (1.0 - fail_all) / (1.0 - q) : 0.0;
  for (auto& wm : connected) wm.probability *= scale;
  if (fail_all > 0.0) {
    const Mask full = Mask::full(g);
    auto it = std::find_if(connected.begin(), connected.end(), [&](const WeightedMask& wm) { return wm.mask == full; });
    if (it != connected.end()) {
      it->probability += fail_all;
    } else {
      connected.push_back({full, fail_all});
    }
  }
  return connected;
}

Mask argmax_mask(const SuperNetGraph& g, const ArchitectureDistribution& dist, double threshold) {
  check_covers(g, dist);
  Mask h = Mask::none(g);
  for (int e = 0; e < g.num_edges(); ++e) h.bits[e] = (g.edge(e).fixed || dist.gamma(e) >= threshold) ? 1 : 0;
  return live_edges(g, h);
}

std::string serialize_distribution(const SuperNetGraph& g, const ArchitectureDistribution& dist) {
  check_covers(g, dist);
  std::ostringstream out;
  out << "bsn-dist 1\nseed " << dist.rng_seed << '\n';
  char buf[40];
  for (int e = 0; e < g.num_edges(); ++e) {
    std::snprintf(buf, sizeof buf, "%.17g", dist.logits[e]);
    out << "edge " << g.layer(g.edge(e).src).id << ' ' << g.layer(g.edge(e).dst).id << ' ' << buf << '\n';
  }
  return out.str();
}

ArchitectureDistribution parse_distribution(const SuperNetGraph& g, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string magic, version;
  if (!(in >> magic >> version) || magic != "bsn-dist") throw Error(Errc::ParseError, "missing 'bsn-dist' header");
  if (version != "1") throw Error(Errc::ParseError, "unsupported bsn-dist version " + version);
  ArchitectureDistribution dist{std::vector<double>(g.num_edges(), 0.0), 0};
  std::vector<std::uint8_t> seen(g.num_edges(), 0);
  std::string key;
  while (in >> key) {
    if (key == "seed") {
      if (!(in >> dist.rng_seed)) throw Error(Errc::ParseError, "bad seed");
    } else if (key == "edge") {
      int src = 0, dst = 0;
      double logit = 0.0;
      if (!(in >> src >> dst >> logit)) throw Error(Errc::ParseError, "bad edge record");
      const auto e = g.find_edge_by_id(src, dst);
      if (!e) throw Error(Errc::ParseError, "edge (" + std::to_string(src) + "," + std::to_string(dst) + ") not in graph");
      dist.logits[*e] = logit;
      seen[*e] = 1;
    } else {
      throw Error(Errc::ParseError, "unknown record '" + key + "'");
    }
  }
  for (int e = 0; e < g.num_edges(); ++e) {
    if (!seen[e]) throw Error(Errc::ParseError, "distribution misses an edge");
  }
  return dist;
}

}  // namespace bsn
