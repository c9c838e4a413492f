#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bsn/graph.hpp"
#include "bsn/rng.hpp"

namespace bsn {

/// Edge-probability parameters Gamma: one logit per edge of E,
/// gamma_e = sigmoid(logit_e). Fixed edges ignore their logit.
struct ArchitectureDistribution {
  std::vector<double> logits;
  std::uint64_t rng_seed = 0;

  static ArchitectureDistribution uniform_logit(const SuperNetGraph& g, double logit, std::uint64_t seed = 0) {
    return {std::vector<double>(g.num_edges(), logit), seed};
  }

  double gamma(int e) const;
  double log_gamma(int e) const;             // log sigmoid(l), stable
  double log_one_minus_gamma(int e) const;   // log sigmoid(-l), stable
};

double sigmoid(double x);
double binary_entropy(double p);

struct SampleRecord {
  Mask mask;
  double log_prob = 0.0;
  /// Edges for which a Bernoulli draw occurred, in draw order.
  std::vector<int> sampled_edges;
};

void check_covers(const SuperNetGraph& g, const ArchitectureDistribution& dist);

/// Visits layers in topological order and, within a layer, incoming edges by
/// ascending source. An edge whose source is already connected to l_1 is
/// drawn from Bernoulli(gamma) (fixed edges are set to 1 without a draw);
/// otherwise it is forced to 0 and contributes no probability factor.
SampleRecord sample_mask(const SuperNetGraph& g, const ArchitectureDistribution& dist, Rng& rng);

/// Exact log-probability that sample_mask emits h, or nullopt when h cannot
/// be produced (a selected edge with unreachable source, or a dropped fixed
/// edge with reachable source).
std::optional<double> log_prob_of(const SuperNetGraph& g, const ArchitectureDistribution& dist, const Mask& h);

/// Sum over non-fixed edges of the binary entropy of gamma, with gamma
/// clipped to [1e-7, 1 - 1e-7].
double entropy(const SuperNetGraph& g, const ArchitectureDistribution& dist);

/// d log P(H | Gamma) / d logit: (h - gamma) on drawn edges, 0 elsewhere.
std::vector<double> grad_log_prob(const SuperNetGraph& g, const ArchitectureDistribution& dist, const SampleRecord& record);

/// Calls visit(mask, probability) for every mask sample_mask can emit,
/// enumerating outcome sequences of the draws. Throws TooLarge above
/// max_sampled_edges candidate edges.
void enumerate_masks(const SuperNetGraph& g, const ArchitectureDistribution& dist,
                     const std::function<void(const Mask&, double)>& visit, int max_sampled_edges = 20);

/// Entropy (nats) of the mask distribution actually produced by sample_mask.
/// Unlike entropy(), edges that can no longer be drawn do not count.
double sampling_entropy(const SuperNetGraph& g, const ArchitectureDistribution& dist);

/// Sampling with the disconnected-output rule used for training: a draw whose
/// output is disconnected is redrawn up to resample_limit times, after which
/// the full mask is substituted (substituted = true, no usable record).
struct ConnectedSample {
  SampleRecord record;
  int attempts = 0;
  bool substituted = false;
};
ConnectedSample sample_connected(const SuperNetGraph& g, const ArchitectureDistribution& dist, Rng& rng, int resample_limit);

/// Exact distribution of sample_connected outputs: each reachable connected
/// mask with its effective probability, plus the full-mask substitution mass.
struct WeightedMask {
  Mask mask;
  double probability = 0.0;
};
std::vector<WeightedMask> effective_mask_distribution(const SuperNetGraph& g, const ArchitectureDistribution& dist,
                                                      int resample_limit, int max_sampled_edges = 20);

/// Deterministic extraction: non-fixed edges with gamma >= threshold, fixed
/// edges always, then pruned to live edges. The result may be disconnected.
Mask argmax_mask(const SuperNetGraph& g, const ArchitectureDistribution& dist, double threshold = 0.5);

// Text checkpoint, version 1:
//   bsn-dist 1
//   seed <u64>
//   edge <src> <dst> <logit>
std::string serialize_distribution(const SuperNetGraph& g, const ArchitectureDistribution& dist);
ArchitectureDistribution parse_distribution(const SuperNetGraph& g, std::string_view text);

}  // namespace bsn
