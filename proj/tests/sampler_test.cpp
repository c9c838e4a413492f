#include <doctest.h>

#include <cmath>
#include <map>

#include "bsn/acceptance.hpp"
#include "bsn/fabric.hpp"
#include "bsn/sampler.hpp"
#include "helpers.hpp"

using namespace bsn;
using namespace bsn::test;

namespace {

// five sampled edges: 0->1, 0->2, 1->2, 1->3, 2->3
SuperNetGraph five_edges() {
  return build_graph({flat(0, 2), flat(1, 2), flat(2, 2), flat(3, 2)},
                     {dense_edge(0, 1, 2, 2), dense_edge(0, 2, 2, 2), dense_edge(1, 2, 2, 2), dense_edge(1, 3, 2, 2),
                      dense_edge(2, 3, 2, 2)});
}

ArchitectureDistribution some_logits(const SuperNetGraph& g, std::uint64_t seed) {
  Rng rng(seed);
  ArchitectureDistribution d = ArchitectureDistribution::uniform_logit(g, 0.0);
  for (auto& l : d.logits) l = rng.uniform(-2.0, 2.0);
  return d;
}

bool has_orphan(const SuperNetGraph& g, const Mask& h) {
  const auto reach = forward_reachable(g, h);
  for (int e = 0; e < g.num_edges(); ++e)
    if (h[e] && !reach[g.edge(e).src]) return true;
  return false;
}

}  // namespace

TEST_CASE("sampler: saturated logits give the full mask") {
  const auto g = five_edges();
  Rng rng(1);
  const auto rec = sample_mask(g, ArchitectureDistribution::uniform_logit(g, 50.0), rng);
  CHECK(rec.mask == Mask::full(g));
  CHECK(std::abs(rec.log_prob) < 1e-15);
  CHECK(rec.sampled_edges.size() == 5);
}

TEST_CASE("sampler: a dropped first edge silences the rest of a chain") {
  const auto g = chain(4);
  auto d = ArchitectureDistribution::uniform_logit(g, 0.0);
  d.logits[0] = -60.0;
  Rng rng(3);
  const auto rec = sample_mask(g, d, rng);
  CHECK(rec.mask.count() == 0);
  REQUIRE(rec.sampled_edges.size() == 1);
  CHECK(rec.sampled_edges[0] == 0);
  CHECK(rec.log_prob == d.log_one_minus_gamma(0));
  const auto grad = grad_log_prob(g, d, rec);
  for (int e = 1; e < 4; ++e) CHECK(grad[e] == 0.0);
}

TEST_CASE("sampler: inclusion frequencies match enumeration") {
  const auto g = five_edges();
  const auto d = some_logits(g, 11);
  std::vector<double> exact(g.num_edges(), 0.0);
  enumerate_masks(g, d, [&](const Mask& h, double p) {
    for (int e = 0; e < g.num_edges(); ++e) exact[e] += h[e] * p;
  });
  const int n = 100000;
  std::vector<double> hits(g.num_edges(), 0.0);
  Rng rng(12);
  for (int k = 0; k < n; ++k) {
    const auto rec = sample_mask(g, d, rng);
    for (int e = 0; e < g.num_edges(); ++e) hits[e] += rec.mask[e];
  }
  for (int e = 0; e < g.num_edges(); ++e) {
    const double se = std::sqrt(exact[e] * (1 - exact[e]) / n);
    INFO("edge " << e << " freq " << hits[e] / n << " exact " << exact[e]);
    CHECK(std::abs(hits[e] / n - exact[e]) <= 3 * se);
  }
}

TEST_CASE("sampler: recorded and recomputed log-probabilities agree") {
  const auto g = dense_supernet({2, 3, 3, 2});
  const auto d = some_logits(g, 5);
  Rng rng(6);
  for (int k = 0; k < 500; ++k) {
    const auto rec = sample_mask(g, d, rng);
    CHECK_FALSE(has_orphan(g, rec.mask));
    const auto lp = log_prob_of(g, d, rec.mask);
    REQUIRE(lp.has_value());
    CHECK(*lp == rec.log_prob);
  }
}

TEST_CASE("sampler: orphan edges are impossible") {
  const auto g = chain(3);
  const auto d = ArchitectureDistribution::uniform_logit(g, 0.0);
  CHECK_FALSE(log_prob_of(g, d, Mask{{0, 1, 1}}).has_value());
  CHECK(log_prob_of(g, d, Mask{{0, 0, 0}}).has_value());
  CHECK(*log_prob_of(g, d, Mask{{0, 0, 0}}) == doctest::Approx(std::log(0.5)));

  // a fixed edge with a reachable source cannot be dropped
  const auto t = always_connected_toy();
  const auto dt = ArchitectureDistribution::uniform_logit(t, 0.0);
  CHECK_FALSE(log_prob_of(t, dt, Mask::none(t)).has_value());
}

TEST_CASE("sampler: probabilities normalize over every mask") {
  for (const auto& g : {five_edges(), dense_supernet({2, 2, 2, 2}), dense_supernet({2, 2, 2, 2, 2}), always_connected_toy()}) {
    const auto d = some_logits(g, 7);
    double total = 0.0;
    for (std::uint64_t code = 0; code < (1ULL << g.num_edges()); ++code) {
      if (auto lp = log_prob_of(g, d, Mask::from_code(g, code))) total += std::exp(*lp);
    }
    CHECK(std::abs(total - 1.0) < 1e-9);

    double enumerated = 0.0;
    enumerate_masks(g, d, [&](const Mask&, double p) { enumerated += p; });
    CHECK(std::abs(enumerated - 1.0) < 1e-9);
  }
}

TEST_CASE("sampler: entropy values") {
  const auto g = five_edges();
  CHECK(entropy(g, ArchitectureDistribution::uniform_logit(g, 0.0)) == doctest::Approx(5 * std::log(2.0)));
  const double s3 = sigmoid(3.0);
  CHECK(s3 == doctest::Approx(0.9526).epsilon(1e-4));
  CHECK(entropy(g, ArchitectureDistribution::uniform_logit(g, 3.0)) == doctest::Approx(5 * binary_entropy(s3)));
  CHECK(binary_entropy(0.9) == doctest::Approx(-0.9 * std::log(0.9) - 0.1 * std::log(0.1)));
  CHECK(entropy(g, ArchitectureDistribution::uniform_logit(g, 80.0)) < 1e-5);
  CHECK(entropy(g, ArchitectureDistribution::uniform_logit(g, -80.0)) >= 0.0);

  // fixed edges carry no entropy
  const auto t = always_connected_toy();
  CHECK(entropy(t, ArchitectureDistribution::uniform_logit(t, 0.0)) == doctest::Approx(5 * std::log(2.0)));
}

TEST_CASE("sampler: sampling entropy against the enumerated distribution") {
  const auto g = five_edges();
  const auto d = some_logits(g, 9);
  double h = 0.0;
  enumerate_masks(g, d, [&](const Mask&, double p) {
    if (p > 0) h -= p * std::log(p);
  });
  CHECK(sampling_entropy(g, d) == doctest::Approx(h).epsilon(1e-12));
  CHECK(sampling_entropy(g, d) <= entropy(g, d) + 1e-12);
}

TEST_CASE("sampler: score is h - gamma on drawn edges") {
  const auto g = chain(1);
  auto d = ArchitectureDistribution::uniform_logit(g, std::log(9.0));  // gamma = 0.9
  SampleRecord rec{Mask{{1}}, d.log_gamma(0), {0}};
  CHECK(grad_log_prob(g, d, rec)[0] == doctest::Approx(0.1));
}

TEST_CASE("sampler: score matches finite differences of the log-probability") {
  const auto g = dense_supernet({2, 3, 3, 2});
  auto d = some_logits(g, 13);
  Rng rng(14);
  for (int k = 0; k < 40; ++k) {
    const auto rec = sample_mask(g, d, rng);
    const auto grad = grad_log_prob(g, d, rec);
    for (int e = 0; e < g.num_edges(); ++e) {
      auto up = d, dn = d;
      up.logits[e] += 1e-5;
      dn.logits[e] -= 1e-5;
      const double num = (*log_prob_of(g, up, rec.mask) - *log_prob_of(g, dn, rec.mask)) / 2e-5;
      if (grad[e] == 0.0) {
        CHECK(num == 0.0);
      } else {
        CHECK(rel_err(grad[e], num) < 1e-5);
      }
    }
  }
}

TEST_CASE("sampler: score has zero mean") {
  const auto g = five_edges();
  const auto d = some_logits(g, 15);
  const int n = 100000;
  std::vector<double> s(g.num_edges(), 0.0), q(g.num_edges(), 0.0);
  Rng rng(16);
  for (int k = 0; k < n; ++k) {
    const auto grad = grad_log_prob(g, d, sample_mask(g, d, rng));
    for (int e = 0; e < g.num_edges(); ++e) {
      s[e] += grad[e];
      q[e] += grad[e] * grad[e];
    }
  }
  for (int e = 0; e < g.num_edges(); ++e) {
    const double mean = s[e] / n;
    const double se = std::sqrt((q[e] / n - mean * mean) / n);
    CHECK(std::abs(mean) <= 3 * se);
  }
}

TEST_CASE("sampler: same seed, same sequence") {
  const auto g = dense_supernet({2, 3, 3, 2});
  const auto d = some_logits(g, 1);
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int k = 0; k < 100; ++k) {
    const auto ra = sample_mask(g, d, a);
    CHECK(ra.mask == sample_mask(g, d, b).mask);
    differs = differs || !(ra.mask == sample_mask(g, d, c).mask);
  }
  CHECK(differs);
}

TEST_CASE("sampler: resampling rule and its exact distribution") {
  const auto g = chain(3);
  const auto d = ArchitectureDistribution::uniform_logit(g, 0.5);
  const int limit = 2;
  const auto eff = effective_mask_distribution(g, d, limit);
  double total = 0.0;
  std::map<std::vector<std::uint8_t>, double> exact;
  for (const auto& w : eff) {
    CHECK(is_output_connected(g, w.mask));
    total += w.probability;
    exact[w.mask.bits] += w.probability;
  }
  CHECK(std::abs(total - 1.0) < 1e-12);
  // the only connected chain mask is the full one, so it carries everything
  CHECK(exact.size() == 1);

  const auto g5 = five_edges();
  const auto d5 = some_logits(g5, 3);
  const auto eff5 = effective_mask_distribution(g5, d5, limit);
  std::map<std::vector<std::uint8_t>, double> p5, hits;
  for (const auto& w : eff5) p5[w.mask.bits] += w.probability;
  Rng rng(4);
  const int n = 100000;
  int substituted = 0;
  for (int k = 0; k < n; ++k) {
    const auto s = sample_connected(g5, d5, rng, limit);
    CHECK(s.attempts <= limit + 1);
    substituted += s.substituted;
    hits[s.substituted ? Mask::full(g5).bits : s.record.mask.bits] += 1;
  }
  CHECK(substituted > 0);
  for (const auto& [bits, p] : p5) {
    const double se = std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(hits[bits] / n - p) <= 3 * se + 1e-12);
  }
}

TEST_CASE("sampler: argmax mask") {
  const auto t = always_connected_toy();
  auto d = ArchitectureDistribution::uniform_logit(t, -1.0);
  CHECK(argmax_mask(t, d).count() == 1);  // only the fixed edge survives
  d = ArchitectureDistribution::uniform_logit(t, 1.0);
  CHECK(argmax_mask(t, d) == Mask::full(t));

  const auto g = five_edges();
  auto e = ArchitectureDistribution::uniform_logit(g, 1.0);
  e.logits[*g.find_edge_by_id(1, 3)] = -1.0;
  e.logits[*g.find_edge_by_id(1, 2)] = -1.0;
  const Mask h = argmax_mask(g, e);
  CHECK_FALSE(h[*g.find_edge_by_id(0, 1)]);  // pruned: 1 leads nowhere
  CHECK(h.count() == 2);
}

TEST_CASE("sampler: argument checks") {
  const auto g = five_edges();
  CHECK_THROWS_AS(check_covers(g, ArchitectureDistribution{{0.0, 0.0}, 0}), Error);
  const auto big = dense_supernet({1, 1, 1, 1, 1, 1, 1});  // 21 edges
  CHECK_THROWS_AS(enumerate_masks(big, ArchitectureDistribution::uniform_logit(big, 0.0), [](const Mask&, double) {}),
                  Error);
}
