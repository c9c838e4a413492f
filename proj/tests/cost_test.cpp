#include <doctest.h>

#include <functional>

#include "bsn/cost.hpp"
#include "bsn/fabric.hpp"
#include "helpers.hpp"

using namespace bsn;
using namespace bsn::test;

namespace {

int op_count(const SuperNetGraph& g, const Mask& h) { return static_cast<int>(unit_ops(g, h).size()); }

// Random two-terminal series-parallel graph of k Dense edges; nullopt when
// the composition would need a duplicate edge.
std::optional<SuperNetGraph> random_series_parallel(Rng& rng, int k) {
  int next = 2;
  std::vector<std::pair<int, int>> edges;
  bool bad = false;
  std::function<void(int, int, int)> build = [&](int s, int t, int m) {
    if (m == 1) {
      for (auto& e : edges) bad = bad || (e.first == s && e.second == t);
      edges.push_back({s, t});
      return;
    }
    const int a = 1 + int(rng.below(m - 1));
    if (rng.bernoulli(0.5)) {
      const int mid = next++;
      build(s, mid, a);
      build(mid, t, m - a);
    } else {
      build(s, t, a);
      build(s, t, m - a);
    }
  };
  build(0, 1, k);
  if (bad) return std::nullopt;
  const auto id = [](int v) { return v == 1 ? 1000 : v; };
  std::vector<LayerSpec> layers;
  for (int v = 0; v < next; ++v) layers.push_back(flat(id(v), 2));
  std::vector<EdgeSpec> specs;
  for (auto [s, t] : edges) specs.push_back(dense_edge(id(s), id(t), 2, 2));
  return build_graph(layers, specs);
}

}  // namespace

TEST_CASE("cost: flops and params of single modules") {
  const auto g = build_graph({flat(0, 10), flat(1, 5)}, {dense_edge(0, 1, 10, 5)});
  CHECK(flops_cost(g, Mask::full(g)) == 50.0);
  CHECK(params_cost(g, Mask::full(g)) == 55.0);
  CHECK(flops_cost(g, Mask::none(g)) == 0.0);
  CHECK(params_cost(g, Mask::none(g)) == 0.0);
}

TEST_CASE("cost: only live edges count") {
  const auto g = triangle(3);
  Mask h = Mask::full(g);
  h.bits[*g.find_edge_by_id(1, 2)] = 0;
  CHECK(flops_cost(g, h) == 9.0);  // 0 -> 1 leads nowhere
}

TEST_CASE("cost: shared slots are counted once in params") {
  const auto m = ModuleSpec::dense(3, 3, "shared");
  const auto g = build_graph({flat(0, 3), flat(1, 3), flat(2, 3)}, {{0, 1, m, false, {}}, {1, 2, m, false, {}}});
  CHECK(params_cost(g, Mask::full(g)) == 12.0);
  CHECK(flops_cost(g, Mask::full(g)) == 18.0);
}

TEST_CASE("cost: metadata overrides the analytic value") {
  auto e = dense_edge(0, 1, 2, 2);
  e.cost_meta = CostMeta{1234.0, 77.0};
  const auto g = build_graph({flat(0, 2), flat(1, 2)}, {e});
  CHECK(flops_cost(g, Mask::full(g)) == 1234.0);
  CHECK(params_cost(g, Mask::full(g)) == 77.0);
}

TEST_CASE("cost: adding an edge never lowers flops or params") {
  const auto g = dense_supernet({3, 4, 4, 2});
  Rng rng(1);
  for (int k = 0; k < 300; ++k) {
    Mask h = Mask::from_code(g, rng.below(1ULL << g.num_edges()));
    const int e = int(rng.below(g.num_edges()));
    Mask bigger = h;
    bigger.bits[e] = 1;
    CHECK(flops_cost(g, bigger) >= flops_cost(g, h));
    CHECK(params_cost(g, bigger) >= params_cost(g, h));
  }
}

TEST_CASE("cost: one machine runs every op in sequence") {
  const auto g = dense_supernet({2, 2, 2, 2, 2});
  Rng rng(2);
  for (int k = 0; k < 100; ++k) {
    const Mask h = Mask::from_code(g, rng.below(1ULL << g.num_edges()));
    if (!is_output_connected(g, h)) continue;
    for (auto p : {SchedulePolicy::GreedyList, SchedulePolicy::BruteForceOptimal})
      CHECK(distributed_cost(g, h, 1, p).makespan == op_count(g, h));
  }
  CHECK(distributed_cost(chain(7), Mask::full(chain(7)), 3, SchedulePolicy::GreedyList).makespan == 7);
}

TEST_CASE("cost: a parallel stage takes ceil(m / n) cycles") {
  for (int m = 1; m <= 7; ++m) {
    const auto g = fan(m);
    for (int n = 1; n <= 4; ++n) {
      const int want = (m + n - 1) / n;
      CHECK(distributed_cost(g, Mask::full(g), n, SchedulePolicy::GreedyList).makespan == want);
      if (2 * m <= kBruteForceEdgeLimit)
        CHECK(distributed_cost(g, Mask::full(g), n, SchedulePolicy::BruteForceOptimal).makespan == want);
    }
  }
  // two-op paths: both stages fill the machines
  const auto p = parallel_paths(3);
  CHECK(distributed_cost(p, Mask::full(p), 3, SchedulePolicy::GreedyList).makespan == 2);
  CHECK(distributed_cost(p, Mask::full(p), 2, SchedulePolicy::BruteForceOptimal).makespan == 3);
}

TEST_CASE("cost: unit op expansion") {
  const auto g = build_graph({{0, {2, 4, 4}}, {1, {2, 4, 4}}, {2, {2, 4, 4}}, {3, {4, 2, 2}}},
                             {{0, 1, ModuleSpec::basic_block(2, 2, 1, "a"), false, {}},
                              {0, 2, ModuleSpec::identity(), false, {}},
                              {1, 2, ModuleSpec::basic_block(2, 2, 1, "b"), false, {}},
                              {2, 3, ModuleSpec::basic_block(2, 4, 2, "p"), false, {}}});
  const Mask h = Mask::full(g);
  const auto ops = unit_ops(g, h);
  CHECK(ops.size() == 7);  // 2 + 0 + 2 + 3
  for (std::size_t i = 0; i < ops.size(); ++i)
    for (int p : ops[i].preds) CHECK(p < int(i));
  CHECK(distributed_cost(g, h, 1, SchedulePolicy::GreedyList).makespan == 7);
  CHECK(distributed_cost(g, h, 4, SchedulePolicy::GreedyList).makespan == 6);
  CHECK(distributed_cost(g, h, 4, SchedulePolicy::BruteForceOptimal).makespan == 6);
  CHECK(unit_ops(g, h, {.identity_free = false}).size() == 8);
  CHECK(unit_ops(g, h, {.identity_free = true, .expand_blocks = false}).size() == 3);
}

TEST_CASE("cost: greedy is never better than the optimum and both are valid") {
  const auto g = dense_supernet({2, 2, 2, 2, 2, 2});  // 15 edges
  Rng rng(3);
  int compared = 0;
  while (compared < 150) {
    const Mask h = Mask::from_code(g, rng.below(1ULL << g.num_edges()));
    if (!is_output_connected(g, h) || live_edges(g, h).count() > kBruteForceEdgeLimit) continue;
    ++compared;
    int prev_greedy = 1 << 30, prev_opt = 1 << 30;
    for (int n = 1; n <= 4; ++n) {
      const auto greedy = distributed_cost(g, h, n, SchedulePolicy::GreedyList);
      const auto opt = distributed_cost(g, h, n, SchedulePolicy::BruteForceOptimal);
      CHECK_FALSE(validate_schedule(g, h, greedy).has_value());
      CHECK_FALSE(validate_schedule(g, h, opt).has_value());
      CHECK(greedy.makespan >= opt.makespan);
      CHECK(greedy.makespan <= prev_greedy);
      CHECK(opt.makespan <= prev_opt);
      prev_greedy = greedy.makespan;
      prev_opt = opt.makespan;
    }
  }
}

TEST_CASE("cost: greedy is optimal on series-parallel graphs") {
  Rng rng(4);
  int compared = 0;
  while (compared < 500) {
    const auto g = random_series_parallel(rng, 2 + int(rng.below(9)));
    if (!g) continue;
    ++compared;
    for (int n : {2, 3})
      CHECK(distributed_cost(*g, Mask::full(*g), n, SchedulePolicy::GreedyList).makespan ==
            distributed_cost(*g, Mask::full(*g), n, SchedulePolicy::BruteForceOptimal).makespan);
  }
}

TEST_CASE("cost: illustrated networks on two machines") {
  for (auto p : {SchedulePolicy::GreedyList, SchedulePolicy::BruteForceOptimal}) {
    const auto fork = fork_network();
    CHECK(distributed_cost(fork, Mask::full(fork), 2, p).makespan == 6);
    const auto twin = twin_chain_network();
    CHECK(distributed_cost(twin, Mask::full(twin), 2, p).makespan == 5);
  }
}

TEST_CASE("cost: validator rejects broken schedules") {
  const auto g = parallel_paths(2);
  const Mask h = Mask::full(g);
  const auto good = distributed_cost(g, h, 2, SchedulePolicy::GreedyList);
  REQUIRE_FALSE(validate_schedule(g, h, good).has_value());

  auto swapped = good;  // second stage before the first
  for (auto& op : swapped.ops) op.cycle = 3 - op.cycle;
  CHECK(validate_schedule(g, h, swapped).has_value());

  auto crowded = good;
  for (auto& op : crowded.ops) op.machine = 1;
  CHECK(validate_schedule(g, h, crowded).has_value());

  auto missing = good;
  missing.ops.pop_back();
  CHECK(validate_schedule(g, h, missing).has_value());

  auto off = good;
  off.ops[0].machine = 3;
  CHECK(validate_schedule(g, h, off).has_value());

  auto wrong_span = good;
  wrong_span.makespan = 1;
  CHECK(validate_schedule(g, h, wrong_span).has_value());
}

TEST_CASE("cost: distributed errors") {
  const auto g = chain(2);
  CHECK_THROWS_AS(distributed_cost(g, Mask{{1, 0}}, 2, SchedulePolicy::GreedyList), Error);
  CHECK_THROWS_AS(distributed_cost(g, Mask::full(g), 0, SchedulePolicy::GreedyList), Error);
  const auto long_chain = chain(kBruteForceEdgeLimit + 1);
  try {
    distributed_cost(long_chain, Mask::full(long_chain), 2, SchedulePolicy::BruteForceOptimal);
    FAIL("expected TooLargeForBruteForce");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TooLargeForBruteForce);
  }
  CHECK(distributed_cost(long_chain, Mask::full(long_chain), 2, SchedulePolicy::GreedyList).makespan == 13);
}

TEST_CASE("cost: schedule csv") {
  const auto g = chain(2);
  const auto s = distributed_cost(g, Mask::full(g), 1, SchedulePolicy::GreedyList);
  CHECK(schedule_csv(g, s) == "edge_src,edge_dst,op,machine,cycle\n0,1,0,1,1\n1,2,0,1,2\n");
}

TEST_CASE("cost: evaluators") {
  const auto g = dense_supernet({3, 4, 2});
  const Mask h = Mask::full(g);
  CHECK(CostEvaluator::flops().evaluate(g, h) == flops_cost(g, h));
  CHECK(CostEvaluator::params().evaluate(g, h) == params_cost(g, h));
  CHECK(CostEvaluator::distributed(2).evaluate(g, h) == 2.0);
  CHECK(CostEvaluator::flops().unit() == "mult-adds");
  CHECK(CostEvaluator::distributed(2).unit() == "cycles");
  CHECK(CostEvaluator::flops().deterministic());

  const auto quiet = CostEvaluator::stochastic(CostEvaluator::flops(), {NoiseKind::None, 0.0}, 1);
  CHECK(quiet.deterministic());
  CHECK(quiet.evaluate(g, h) == flops_cost(g, h));
  CHECK(CostEvaluator::stochastic(CostEvaluator::flops(), {NoiseKind::Uniform, 0.0}, 1).evaluate(g, h) == flops_cost(g, h));
}

TEST_CASE("cost: noisy evaluator is centred on its base") {
  const auto g = dense_supernet({3, 4, 2});
  const Mask h = Mask::full(g);
  const double base = flops_cost(g, h);
  for (auto kind : {NoiseKind::Uniform, NoiseKind::Gaussian}) {
    const double scale = 5.0;
    const auto noisy = CostEvaluator::stochastic(CostEvaluator::flops(), {kind, scale}, 7);
    CHECK_FALSE(noisy.deterministic());
    const int n = 10000;
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += noisy.evaluate(g, h);
    const double sd = kind == NoiseKind::Uniform ? scale / std::sqrt(3.0) : scale;
    CHECK(std::abs(s / n - base) <= 3 * sd / std::sqrt(double(n)));
  }
  // clamped at zero
  const auto wild = CostEvaluator::stochastic(CostEvaluator::flops(), {NoiseKind::Gaussian, 1e6}, 3);
  for (int k = 0; k < 100; ++k) CHECK(wild.evaluate(g, h) >= 0.0);
  // seeded
  const auto a = CostEvaluator::stochastic(CostEvaluator::flops(), {NoiseKind::Uniform, 3.0}, 9);
  const auto b = CostEvaluator::stochastic(CostEvaluator::flops(), {NoiseKind::Uniform, 3.0}, 9);
  for (int k = 0; k < 10; ++k) CHECK(a.evaluate(g, h) == b.evaluate(g, h));
}
