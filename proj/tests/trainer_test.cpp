#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "bsn/acceptance.hpp"
#include "bsn/data.hpp"
#include "bsn/fabric.hpp"
#include "bsn/trainer.hpp"
#include "helpers.hpp"

using namespace bsn;
using namespace bsn::test;

namespace {

SuperNetGraph five_edges() {
  return build_graph({flat(0, 2), flat(1, 3, Activation::ReLU), flat(2, 3, Activation::ReLU), flat(3, 2)},
                     {dense_edge(0, 1, 2, 3), dense_edge(0, 2, 2, 3), dense_edge(1, 2, 3, 3), dense_edge(1, 3, 3, 2),
                      dense_edge(2, 3, 3, 2)});
}

// fixed 0 -> 2 and 1 -> 2, one sampled edge 0 -> 1: exactly two masks
SuperNetGraph two_masks() {
  return build_graph({flat(0, 2), flat(1, 2, Activation::ReLU), flat(2, 2)},
                     {dense_edge(0, 1, 2, 2), dense_edge(1, 2, 2, 2, true), dense_edge(0, 2, 2, 2, true)});
}

std::vector<std::size_t> all_indices(const Dataset& d) {
  std::vector<std::size_t> v(d.size());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

TrainConfig quick_config(int epochs, int burn_in) {
  TrainConfig c;
  c.epochs = epochs;
  c.burn_in_epochs = burn_in;
  c.lr.initial = 0.05;
  c.batch_size = 8;
  return c;
}

}  // namespace

TEST_CASE("trainer: hinge penalty") {
  BudgetConfig b{10.0, 2.0, CostEvaluator::flops()};
  CHECK(hinge_penalty(b, 11.0) == 2.0);
  CHECK(hinge_penalty(b, 10.0) == 0.0);
  CHECK(hinge_penalty(b, 3.0) == 0.0);
  CHECK(hinge_penalty(b, 14.5) == 9.0);
  CHECK_THROWS_AS(validate(BudgetConfig{10.0, -1.0, CostEvaluator::flops()}), Error);
  CHECK_THROWS_AS(validate(BudgetConfig{-1.0, 1.0, CostEvaluator::flops()}), Error);
  CHECK_NOTHROW(validate(BudgetConfig{0.0, 0.0, CostEvaluator::flops()}));
}

TEST_CASE("trainer: objective is loss plus hinge on the observed cost") {
  const auto g = five_edges();
  const Dataset data = make_moons(20, 0.1, 1);
  Params p;
  init_parameters(g, p, 3);
  Rng rng(2);
  for (int k = 0; k < 30; ++k) {
    const Mask h = Mask::from_code(g, rng.below(32));
    if (!is_output_connected(g, h)) {
      CHECK_THROWS_AS(objective_D(g, h, p, BudgetConfig{}, data), Error);
      continue;
    }
    const double cost = flops_cost(g, h);
    const BudgetConfig under{cost + 1.0, 3.0, CostEvaluator::flops()};
    const BudgetConfig over{cost - 4.0, 0.5, CostEvaluator::flops()};
    double loss = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) loss += loss_delta(predict(g, h, data.inputs[i], p), data.targets[i], data.loss);
    loss /= double(data.size());

    const auto a = objective_D(g, h, p, under, data);
    CHECK(a.penalty == 0.0);
    CHECK(a.total == a.loss);
    CHECK(a.loss == doctest::Approx(loss).epsilon(1e-12));
    const auto b = objective_D(g, h, p, over, data);
    CHECK(b.cost == cost);
    CHECK(b.penalty == 2.0);
    CHECK(b.total == doctest::Approx(loss + 2.0).epsilon(1e-12));

    const auto one = objective_D(g, h, p, over, data.inputs[0], data.targets[0], data.loss);
    CHECK(one.total == doctest::Approx(loss_delta(predict(g, h, data.inputs[0], p), data.targets[0], data.loss) + 2.0));
  }
}

TEST_CASE("trainer: expected objective of a point mass") {
  const auto g = five_edges();
  const Dataset data = make_moons(16, 0.1, 2);
  Params p;
  init_parameters(g, p, 1);
  const BudgetConfig budget{20.0, 0.1, CostEvaluator::flops()};
  ArchitectureDistribution d = ArchitectureDistribution::uniform_logit(g, 60.0);
  d.logits[*g.find_edge_by_id(0, 2)] = -60.0;
  Mask h = Mask::full(g);
  h.bits[*g.find_edge_by_id(0, 2)] = 0;
  CHECK(exact_expected_objective(g, d, p, budget, data, 10) == doctest::Approx(objective_D(g, h, p, budget, data).total).epsilon(1e-12));
}

TEST_CASE("trainer: expected objective over two equally likely masks") {
  const auto g = two_masks();
  const Dataset data = make_moons(16, 0.1, 3);
  Params p;
  init_parameters(g, p, 2);
  const BudgetConfig budget{5.0, 0.3, CostEvaluator::flops()};
  const auto d = ArchitectureDistribution::uniform_logit(g, 0.0);
  const Mask with = Mask::full(g);
  Mask without = Mask::none(g);
  without.bits[*g.find_edge_by_id(0, 2)] = 1;
  const double want = 0.5 * (objective_D(g, with, p, budget, data).total + objective_D(g, without, p, budget, data).total);
  CHECK(exact_expected_objective(g, d, p, budget, data, 10) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("trainer: expected objective matches Monte Carlo under the resample rule") {
  const auto g = five_edges();
  const Dataset data = make_moons(12, 0.1, 4);
  Params p;
  init_parameters(g, p, 5);
  const BudgetConfig budget{40.0, 0.05, CostEvaluator::flops()};
  ArchitectureDistribution d{{0.4, -0.7, 0.2, -0.3, 0.9}, 0};
  const int limit = 2;
  const double exact = exact_expected_objective(g, d, p, budget, data, limit);

  std::map<std::vector<std::uint8_t>, double> cache;
  const auto D = [&](const Mask& h) {
    auto it = cache.find(h.bits);
    if (it == cache.end()) it = cache.emplace(h.bits, objective_D(g, h, p, budget, data).total).first;
    return it->second;
  };
  Rng rng(6);
  const int n = 100000;
  double s = 0.0, q = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto cs = sample_connected(g, d, rng, limit);
    const double v = D(cs.substituted ? Mask::full(g) : cs.record.mask);
    s += v;
    q += v * v;
  }
  const double mean = s / n, se = std::sqrt((q / n - mean * mean) / n);
  CHECK(std::abs(mean - exact) <= 3 * se);
}

TEST_CASE("trainer: expected objective needs a deterministic cost and few edges") {
  const auto g = five_edges();
  const Dataset data = make_moons(4, 0.1, 4);
  Params p;
  init_parameters(g, p, 5);
  const BudgetConfig noisy{1.0, 1.0, CostEvaluator::stochastic(CostEvaluator::flops(), {NoiseKind::Uniform, 1.0}, 0)};
  CHECK_THROWS_AS(exact_expected_objective(g, ArchitectureDistribution::uniform_logit(g, 0), p, noisy, data, 10), Error);
  const auto big = dense_supernet({2, 2, 2, 2, 2, 2});  // 15 edges
  Params q;
  init_parameters(big, q, 0);
  CHECK_THROWS_AS(exact_expected_objective(big, ArchitectureDistribution::uniform_logit(big, 0), q, BudgetConfig{}, data, 10),
                  Error);
}

TEST_CASE("trainer: burn-in steps use the full mask and leave the logits alone") {
  const auto g = five_edges();
  const Dataset data = make_moons(16, 0.1, 5);
  const auto batch = all_indices(data);
  Params a, b;
  init_parameters(g, a, 7);
  init_parameters(g, b, 7);
  auto da = ArchitectureDistribution::uniform_logit(g, 0.3);
  auto db = da;
  const BudgetConfig budget{1.0, 1.0, CostEvaluator::flops()};
  Trainer ta(g, da, a, budget, quick_config(4, 2));
  Trainer tb(g, db, b, budget, quick_config(4, 2));
  const Mask full = Mask::full(g);
  for (int step = 0; step < 3; ++step) {
    const auto rep = ta.train_step(data, batch, MaskMode::Full, 0.05);
    tb.train_step(data, batch, MaskMode::Fixed, 0.05, &full, false);
    for (double v : rep.gamma_grad) CHECK(v == 0.0);
    for (auto e : rep.eligible) CHECK(e == 0);
    for (const auto& m : rep.masks) CHECK(m == full);
  }
  CHECK(da.logits == std::vector<double>(g.num_edges(), 0.3));
  for (const auto& [name, slot] : a.slots()) CHECK(b.at(name).value.data == slot.value.data);
}

TEST_CASE("trainer: zero advantage leaves the logits unchanged") {
  const auto g = five_edges();
  const Dataset data = make_moons(16, 0.1, 6);
  Params p;
  init_parameters(g, p, 1);
  for (auto& [name, slot] : p.slots()) slot.value.data.setZero();  // every mask predicts the same
  auto d = ArchitectureDistribution::uniform_logit(g, 1.0);
  const auto before = d.logits;
  Trainer t(g, d, p, BudgetConfig{1e9, 1.0, CostEvaluator::flops()}, quick_config(4, 0));
  const auto rep = t.train_step(data, all_indices(data), MaskMode::Sampled, 0.05);
  CHECK(d.logits == before);
  for (double v : rep.gamma_grad) CHECK(v == 0.0);

  SampleRecord rec{Mask::full(g), 0.0, {0, 1, 2, 3, 4}};
  for (double v : gamma_gradient_estimate(g, d, rec, 1.25, 1.25)) CHECK(v == 0.0);
}

TEST_CASE("trainer: theta gradients stay on the used subgraph") {
  const auto g = five_edges();
  const Dataset data = make_moons(40, 0.1, 7);
  Params p;
  init_parameters(g, p, 2);
  auto d = ArchitectureDistribution::uniform_logit(g, 0.0);
  Trainer t(g, d, p, BudgetConfig{10.0, 0.01, CostEvaluator::flops()}, quick_config(4, 0));
  int checked = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t one[] = {i};
    const auto rep = t.compute_gradients(data, one, MaskMode::Sampled);
    const Mask live = live_edges(g, rep.masks[0]);
    for (int e = 0; e < g.num_edges(); ++e) {
      const double norm = p.at(g.edge(e).module.slot + "/w").grad.data.norm();
      if (!live[e]) {
        CHECK(norm == 0.0);
        ++checked;
      }
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("trainer: hinge holds on every step") {
  const auto g = five_edges();
  const Dataset data = make_moons(64, 0.1, 8);
  Params p;
  init_parameters(g, p, 3);
  auto d = ArchitectureDistribution::uniform_logit(g, 0.5);
  const BudgetConfig budget{20.0, 0.2, CostEvaluator::flops()};
  Trainer t(g, d, p, budget, quick_config(4, 0));
  const auto idx = all_indices(data);
  for (std::size_t s = 0; s < idx.size(); s += 8) {
    const auto rep = t.train_step(data, std::span(idx).subspan(s, 8), MaskMode::Sampled, 0.05);
    for (std::size_t k = 0; k < rep.parts.size(); ++k) {
      const auto& part = rep.parts[k];
      CHECK(part.cost == flops_cost(g, rep.masks[k]));
      CHECK(part.penalty == (part.cost <= budget.max_cost ? 0.0 : budget.lambda * (part.cost - budget.max_cost)));
      CHECK(part.total == part.loss + part.penalty);
    }
  }
}

TEST_CASE("trainer: baseline trackers") {
  const std::vector<double> d{1.0, 2.0, 6.0};
  BaselineTracker mean{BaselineMode::BatchMean};
  CHECK(mean.value_for(d) == 3.0);
  BaselineTracker none{BaselineMode::None};
  CHECK(none.value_for(d) == 0.0);
  BaselineTracker ema{BaselineMode::Ema, 0.5};
  CHECK(ema.value_for(d) == 3.0);
  ema.update(d);
  CHECK(ema.current == 3.0);
  ema.update(std::vector<double>{5.0});
  CHECK(ema.current == 4.0);
  CHECK(ema.value_for(d) == 4.0);
}

TEST_CASE("trainer: learning-rate schedule and lambda grid") {
  LrSchedule lr{0.1, {150, 225}, 0.1};
  CHECK(lr.at(0) == 0.1);
  CHECK(lr.at(149) == 0.1);
  CHECK(lr.at(150) == doctest::Approx(0.01));
  CHECK(lr.at(300) == doctest::Approx(0.001));

  const auto grid = lambda_grid(300.0, 5);
  REQUIRE(grid.size() == 5);
  CHECK(grid.front() == doctest::Approx(10.0));
  CHECK(grid.back() == doctest::Approx(1000.0));
  CHECK(grid[2] == doctest::Approx(100.0));
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] / grid[i - 1] == doctest::Approx(std::sqrt(10.0)));
  const auto small = lambda_grid(0.5, 3);  // order of magnitude -1
  REQUIRE(small.size() == 3);
  CHECK(small[0] == doctest::Approx(0.01));
  CHECK(small[1] == doctest::Approx(0.1));
  CHECK(small[2] == doctest::Approx(1.0));
}

TEST_CASE("trainer: config validation") {
  CHECK_NOTHROW(validate(quick_config(10, 2)));
  CHECK_NOTHROW(validate(quick_config(0, 0)));
  CHECK_THROWS_AS(validate(quick_config(5, 5)), Error);
  auto c = quick_config(5, 1);
  c.batch_size = 0;
  CHECK_THROWS_AS(validate(c), Error);
  c = quick_config(5, 1);
  c.lr.initial = 0.0;
  CHECK_THROWS_AS(validate(c), Error);
}

TEST_CASE("trainer: zero epochs log only the init record") {
  const auto g = five_edges();
  const Dataset data = make_moons(16, 0.1, 9);
  Params p;
  init_parameters(g, p, 0);
  auto d = ArchitectureDistribution::uniform_logit(g, 3.0);
  const auto log = run_training(g, d, p, BudgetConfig{}, quick_config(0, 0), data, data);
  REQUIRE(log.records.size() == 1);
  CHECK(log.records[0]["record"] == "init");
  CHECK(log.checkpoints.empty());
}

TEST_CASE("trainer: empty inputs") {
  const auto g = five_edges();
  Params p;
  init_parameters(g, p, 0);
  Dataset empty;
  CHECK_THROWS_AS(accuracy(g, Mask::full(g), p, empty), Error);
  CHECK_THROWS_AS(mean_loss(g, Mask::full(g), p, empty), Error);
  auto d = ArchitectureDistribution::uniform_logit(g, 0.0);
  Trainer t(g, d, p, BudgetConfig{}, quick_config(2, 0));
  CHECK_THROWS_AS(t.compute_gradients(make_moons(4, 0.1, 0), {}, MaskMode::Full), Error);
}

TEST_CASE("trainer: toy runs shed entropy and cost under a binding budget") {
  const auto g = dense_supernet({2, 16, 16, 2});
  const auto [train, val] = split_dataset(make_moons(400, 0.15, 7), 0.25, 0);
  const double start = 6 * binary_entropy(sigmoid(3.0));
  int marginal_drops = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Params p;
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.burn_in_epochs = 10;
    cfg.lr.initial = 0.05;
    cfg.batch_size = 16;
    cfg.logit_lr_scale = 15.0;
    cfg.seed = seed;
    init_parameters(g, p, derive_seed(cfg.seed, 0));
    auto d = ArchitectureDistribution::uniform_logit(g, 0.0);
    const BudgetConfig budget{100.0, 0.004, CostEvaluator::flops()};
    const auto log = run_training(g, d, p, budget, cfg, train, val);
    REQUIRE(log.records.size() == 62);

    const auto& first = log.records[cfg.burn_in_epochs + 1];
    const auto& last = log.records[cfg.epochs];
    CHECK(first["phase"] == "sampling");
    CHECK(log.records[cfg.burn_in_epochs]["phase"] == "burn-in");
    for (std::size_t r = 1; r <= std::size_t(cfg.epochs); ++r) CHECK(std::isfinite(log.records[r]["entropy"].get<double>()));
    // The distribution over sampled architectures becomes (nearly) deterministic
    CHECK(last["sampling_entropy"].get<double>() < start);
    CHECK(last["mean_cost"].get<double>() < first["mean_cost"].get<double>());
    CHECK(log.records.back()["record"] == "summary");
    marginal_drops += last["entropy"].get<double>() < start;
  }
  // Edges cut off from the input stop receiving a signal and keep whatever
  // gamma they had, so the per-edge sum need not fall on every seed.
  CHECK(marginal_drops >= 4);
}

TEST_CASE("trainer: zero lambda carries no penalty") {
  const auto g = five_edges();
  const auto data = make_moons(32, 0.1, 10);
  Params p;
  init_parameters(g, p, 0);
  auto d = ArchitectureDistribution::uniform_logit(g, 0.0);
  const auto log = run_training(g, d, p, BudgetConfig{0.0, 0.0, CostEvaluator::flops()}, quick_config(4, 2), data, data);
  for (std::size_t r = 1; r <= 4; ++r) CHECK(log.records[r]["mean_penalty"].get<double>() == 0.0);
}

TEST_CASE("trainer: identical seeds give identical logs") {
  const auto g = five_edges();
  const auto data = make_moons(48, 0.1, 11);
  std::string logs[2];
  for (auto& text : logs) {
    Params p;
    init_parameters(g, p, 4);
    auto d = ArchitectureDistribution::uniform_logit(g, 0.0);
    text = run_training(g, d, p, BudgetConfig{20.0, 0.05, CostEvaluator::flops()}, quick_config(6, 2), data, data).jsonl();
  }
  CHECK(logs[0] == logs[1]);
}

TEST_CASE("trainer: optimality report on a single-architecture graph") {
  const auto g = chain(1);
  OptimalityConfig cfg;
  cfg.train = quick_config(3, 1);
  const auto rep = check_optimality(g, BudgetConfig{1.0, 0.1, CostEvaluator::flops()}, make_moons(32, 0.1, 12), cfg);
  CHECK(rep.architectures == 1);
  CHECK(rep.final_connected);
  CHECK(rep.final_mask == rep.optimum_mask);
  CHECK(rep.gap == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rep.within_epsilon);
}

TEST_CASE("trainer: loose budget leaves the brute-force optimum unchanged") {
  const auto g = dense_supernet({2, 4, 2});
  OptimalityConfig cfg;
  cfg.train = quick_config(5, 1);
  const auto data = make_moons(48, 0.1, 13);
  const auto free = check_optimality(g, BudgetConfig{0.0, 0.0, CostEvaluator::flops()}, data, cfg);
  const auto loose = check_optimality(g, BudgetConfig{1e6, 5.0, CostEvaluator::flops()}, data, cfg);
  CHECK(free.architectures == 3);
  CHECK(loose.optimum == free.optimum);
  CHECK(loose.optimum_mask == free.optimum_mask);
}
