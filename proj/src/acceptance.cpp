#include "bsn/acceptance.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "bsn/graph_io.hpp"

namespace bsn {

namespace {

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct ModuleCase {
  ModuleSpec module;
  Shape input;
  std::string label;
};

std::vector<ModuleCase> module_cases() {
  return {
      {ModuleSpec::identity(), {3, 4, 4}, "identity"},
      {ModuleSpec::dense(6, 4, "m"), {6}, "dense 6->4"},
      {ModuleSpec::conv2d(2, 3, 3, 1, "m"), {2, 5, 5}, "conv 3x3 s1"},
      {ModuleSpec::conv2d(2, 3, 3, 2, "m"), {2, 5, 5}, "conv 3x3 s2"},
      {ModuleSpec::projection(2, 3, 2, "m"), {2, 6, 6}, "projection s2"},
      {ModuleSpec::downsample_conv(2, 3, 3, "m"), {2, 6, 6}, "downsample conv"},
      {ModuleSpec::upsample_conv(2, 3, 3, 2, "m"), {2, 3, 3}, "upsample conv x2"},
      {ModuleSpec::basic_block(2, 2, 1, "m"), {2, 4, 4}, "basic block identity shortcut"},
      {ModuleSpec::basic_block(2, 3, 2, "m"), {2, 6, 6}, "basic block projection shortcut"},
      {ModuleSpec::classifier(3, 4, "m"), {3, 4, 4}, "classifier"},
  };
}

// L = sum(w * f(x)) recorded as a final scalar op so that even parameter-free
// modules leave a non-empty tape.
double weighted_output(const ModuleSpec& m, const TensorD& x, const TensorD& w, Params& params, Tape<double>* keep, Var* input) {
  Tape<double> local;
  Tape<double>& tape = keep ? *keep : local;
  const Var in = tape.leaf(x);
  if (input) *input = in;
  const Var y = apply_module(m, in, params, tape);
  const double value = tape.value(y).data.dot(w.data);
  TensorD out = TensorD::constant({1}, value);
  tape.record(std::move(out), [y, w](const TensorD& g, Tape<double>& t, Params&) {
    TensorD gy = w;
    gy.data *= g.data[0];
    t.accumulate_grad(y, gy);
  });
  return value;
}

double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4}); }

}  // namespace

std::vector<GradCheck> module_gradient_checks(std::uint64_t seed) {
  std::vector<GradCheck> out;
  constexpr double h = 1e-5;
  for (const ModuleCase& c : module_cases()) {
    Rng rng(seed);
    Params params;
    for (const auto& decl : module_params(c.module)) {
      auto& slot = params.declare(param_name(c.module, decl.name), decl.shape);
      for (Eigen::Index i = 0; i < slot.value.data.size(); ++i) slot.value.data[i] = rng.uniform(-1.0, 1.0);
    }
    TensorD x(c.input);
    for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data[i] = rng.normal();
    const Shape out_shape = *module_output_shape(c.module, c.input);
    TensorD w(out_shape);
    for (Eigen::Index i = 0; i < w.data.size(); ++i) w.data[i] = rng.normal();

    Tape<double> tape;
    Var in;
    params.zero_grad();
    weighted_output(c.module, x, w, params, &tape, &in);
    backward(tape, TensorD::constant({1}, 1.0), params);
    const TensorD gx = tape.grad(in) ? *tape.grad(in) : TensorD::zeros(c.input);

    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.data.size(); ++i) {
      TensorD xp = x, xm = x;
      xp.data[i] += h;
      xm.data[i] -= h;
      const double num = (weighted_output(c.module, xp, w, params, nullptr, nullptr) -
                          weighted_output(c.module, xm, w, params, nullptr, nullptr)) / (2 * h);
      worst = std::max(worst, rel_error(gx.data[i], num));
    }
    for (auto& [name, slot] : params.slots()) {
      const Eigen::VectorXd analytic = slot.grad.data;
      for (Eigen::Index i = 0; i < slot.value.data.size(); ++i) {
        const double keep = slot.value.data[i];
        slot.value.data[i] = keep + h;
        const double up = weighted_output(c.module, x, w, params, nullptr, nullptr);
        slot.value.data[i] = keep - h;
        const double down = weighted_output(c.module, x, w, params, nullptr, nullptr);
        slot.value.data[i] = keep;
        worst = std::max(worst, rel_error(analytic[i], (up - down) / (2 * h)));
      }
    }
    out.push_back({c.module.kind, c.label, worst});
  }
  return out;
}

SuperNetGraph always_connected_toy() {
  std::vector<LayerSpec> layers{{0, {2}, Activation::None}, {1, {4}, Activation::ReLU}, {2, {4}, Activation::ReLU}, {3, {2}, Activation::None}};
  const auto e = [](int s, int d, int in, int out, bool fixed = false) {
    return EdgeSpec{s, d, ModuleSpec::dense(in, out, "e" + std::to_string(s) + std::to_string(d)), fixed, std::nullopt};
  };
  return build_graph(layers, {e(0, 1, 2, 4), e(0, 2, 2, 4), e(1, 2, 4, 4), e(1, 3, 4, 2), e(2, 3, 4, 2), e(0, 3, 2, 2, true)});
}

OptimalityToy optimality_toy(std::uint64_t seed) {
  OptimalityToy t{dense_supernet({2, 16, 16, 2}), make_moons(200, 0.15, 7), BudgetConfig{100.0, 0.004, CostEvaluator::flops()}, {}};
  TrainConfig& c = t.config.train;
  c.epochs = 150;
  c.burn_in_epochs = 10;
  c.lr.initial = 0.05;
  c.batch_size = 16;
  c.logit_lr_scale = 15.0;
  c.seed = seed;
  return t;
}

Json toy_experiment_config() {
  return Json::parse(R"({
    "graph": {"type": "dense", "widths": [2, 16, 16, 2]},
    "dataset": {"name": "moons", "count": 400, "noise": 0.15, "seed": 7, "val_fraction": 0.25, "split_seed": 0},
    "budget": {"cost": "flops", "max_cost": 100, "lambda": 0.004},
    "train": {"epochs": 60, "burn_in_epochs": 10, "lr": 0.05, "batch_size": 16, "seed": 0, "logit_lr_scale": 15}
  })");
}

CheckResult check_cost_tables(const AcceptanceOptions& o) {
  CheckResult r{"1", "cost tables: fabric ResNet paths and CNF flops/params", true, {}};
  const auto within = [&](const std::string& what, double got, double want, double tol) {
    const double rel = (got - want) / want;
    const bool ok = std::abs(rel) <= tol;
    r.pass = r.pass && ok;
    r.details.push_back(what + fmt(" %.4gM vs %.4gM (%+.2f%%, tol %.0f%%) ", got / 1e6, want / 1e6, 100 * rel, 100 * tol) + (ok ? "ok" : "MISS"));
  };
  const int widths[] = {3, 5, 7, 9, 18};
  const double flops[] = {40.90e6, 69.27e6, 97.64e6, 126.01e6, 253.70e6};
  const double params[] = {0.27e6, 0.47e6, 0.66e6, 0.86e6, 1.73e6};
  for (int i = 0; i < 5; ++i) {
    ResNetFabricConfig c;
    c.width = widths[i];
    const SuperNetGraph g = resnet_fabric(c);
    const Mask h = resnet_path_mask(g, c);
    const std::string name = "ResNet-" + std::to_string(6 * widths[i] + 2);
    within(name + " flops", o.flops(g, h), flops[i], 0.02);
    within(name + " params", o.params(g, h), params[i], 0.02);
  }
  const int cols[] = {1, 2, 4, 8};
  const double cnf_flops[] = {54e6, 406e6, 1010e6, 2219e6};
  for (int i = 0; i < 4; ++i) {
    CnfConfig c;
    c.width = cols[i];
    const SuperNetGraph g = cnf(c);
    within("CNF W=" + std::to_string(cols[i]) + " flops", o.flops(g, Mask::full(g)), cnf_flops[i], 0.05);
    if (cols[i] == 8) within("CNF W=8 params", o.params(g, Mask::full(g)), 18.04e6, 0.05);
  }
  return r;
}

CheckResult check_distributed_tables(const AcceptanceOptions&) {
  CheckResult r{"2", "distributed cost: ResNet sequential ops and figure networks", true, {}};
  const int widths[] = {3, 5, 7, 9, 18};
  const int seq1[] = {22, 34, 46, 58, 112};
  const int seq2[] = {20, 32, 44, 56, 110};
  for (int i = 0; i < 5; ++i) {
    ResNetFabricConfig c;
    c.width = widths[i];
    const SuperNetGraph g = resnet_fabric(c);
    const Mask h = resnet_path_mask(g, c);
    for (int n : {1, 2, 4}) {
      const Schedule s = distributed_cost(g, h, n, SchedulePolicy::GreedyList);
      const int want = n == 1 ? seq1[i] : seq2[i];
      const bool ok = std::abs(s.makespan - want) <= 2 && !validate_schedule(g, h, s);
      r.pass = r.pass && ok;
      r.details.push_back("ResNet-" + std::to_string(6 * widths[i] + 2) + " n=" + std::to_string(n) + ": " +
                          std::to_string(s.makespan) + " cycles vs " + std::to_string(want) + (ok ? " ok" : " MISS"));
    }
  }
  const std::pair<SuperNetGraph, int> figures[] = {{fork_network(), 6}, {twin_chain_network(), 5}};
  for (const auto& [g, want] : figures) {
    const Mask full = Mask::full(g);
    const int greedy = distributed_cost(g, full, 2, SchedulePolicy::GreedyList).makespan;
    const int best = distributed_cost(g, full, 2, SchedulePolicy::BruteForceOptimal).makespan;
    const bool ok = greedy == want && best == want;
    r.pass = r.pass && ok;
    r.details.push_back(std::to_string(g.num_edges()) + "-module network n=2: greedy " + std::to_string(greedy) + ", optimal " +
                        std::to_string(best) + " vs " + std::to_string(want) + (ok ? " ok" : " MISS"));
  }
  return r;
}

CheckResult check_optimality_property(const AcceptanceOptions& o) {
  CheckResult r{"3", "stochastic training reaches the brute-force optimum and becomes deterministic", false, {}};
  int good = 0;
  for (int seed = 0; seed < o.optimality_seeds; ++seed) {
    OptimalityToy t = optimality_toy(static_cast<std::uint64_t>(seed));
    const OptimalityReport rep = check_optimality(t.graph, t.budget, t.train, t.config);
    const bool det = rep.sampling_entropy_per_edge < 0.05;
    const bool ok = rep.within_epsilon && det;
    good += ok ? 1 : 0;
    r.details.push_back(fmt("seed %2.0f: gap %.4f (eps %.4f), entropy/edge %.4f", seed, rep.gap, rep.epsilon, rep.sampling_entropy_per_edge) +
                        fmt(" (marginal %.4f) ", rep.entropy_per_edge) + (ok ? "ok" : "miss"));
  }
  const int need = (8 * o.optimality_seeds + 9) / 10;
  r.pass = good >= need;
  r.details.push_back(std::to_string(good) + "/" + std::to_string(o.optimality_seeds) + " seeds within eps and below 0.05 nats/edge (need " +
                      std::to_string(need) + ")");
  return r;
}

CheckResult check_gradients(const AcceptanceOptions& o) {
  CheckResult r{"4", "gradients: modules vs finite differences, unbiased score estimator, baseline", true, {}};
  double worst = 0.0;
  for (const GradCheck& c : module_gradient_checks(3)) {
    worst = std::max(worst, c.max_rel_error);
    r.details.push_back("(a) " + c.label + fmt(": max rel err %.2e", c.max_rel_error));
  }
  const bool a_ok = worst < 1e-3;

  const SuperNetGraph g = always_connected_toy();
  const Dataset data = make_moons(16, 0.15, 3);
  Params params;
  init_parameters(g, params, 11);
  const BudgetConfig budget{20.0, 0.02, CostEvaluator::flops()};
  ArchitectureDistribution dist{{0.3, -0.5, 1.0, 0.2, -0.8, 0.0}, 0};
  // edges are sorted by (dst, src); map logits by position
  const int m = g.num_edges();

  std::map<std::vector<std::uint8_t>, double> d_of;
  const auto objective = [&](const Mask& h) {
    auto it = d_of.find(h.bits);
    if (it != d_of.end()) return it->second;
    const double d = objective_D(g, h, params, budget, data).total;
    d_of.emplace(h.bits, d);
    return d;
  };
  std::vector<double> fd(m, 0.0);
  constexpr double h = 1e-5;
  for (int e = 0; e < m; ++e) {
    ArchitectureDistribution up = dist, down = dist;
    up.logits[e] += h;
    down.logits[e] -= h;
    fd[e] = (exact_expected_objective(g, up, params, budget, data, 10) - exact_expected_objective(g, down, params, budget, data, 10)) / (2 * h);
  }
  const double expected_d = exact_expected_objective(g, dist, params, budget, data, 10);

  Rng rng(derive_seed(5, 1));
  const int n = o.gradient_samples;
  std::vector<double> s0(m, 0.0), q0(m, 0.0), s1(m, 0.0), q1(m, 0.0);
  for (int k = 0; k < n; ++k) {
    const SampleRecord rec = sample_mask(g, dist, rng);
    const double d = objective(rec.mask);
    const std::vector<double> plain = gamma_gradient_estimate(g, dist, rec, d, 0.0);
    const std::vector<double> based = gamma_gradient_estimate(g, dist, rec, d, expected_d);
    for (int e = 0; e < m; ++e) {
      s0[e] += plain[e];
      q0[e] += plain[e] * plain[e];
      s1[e] += based[e];
      q1[e] += based[e] * based[e];
    }
  }
  bool b_ok = true, c_ok = true;
  double var0 = 0.0, var1 = 0.0;
  for (int e = 0; e < m; ++e) {
    const double mean0 = s0[e] / n, mean1 = s1[e] / n;
    const double v0 = q0[e] / n - mean0 * mean0, v1 = q1[e] / n - mean1 * mean1;
    const double se0 = std::sqrt(v0 / n), se1 = std::sqrt(v1 / n);
    var0 += v0;
    var1 += v1;
    const bool fixed = g.edge(e).fixed;
    const bool ok0 = fixed ? (s0[e] == 0.0 && std::abs(fd[e]) < 1e-9) : std::abs(mean0 - fd[e]) <= 3 * se0;
    const bool ok1 = fixed ? s1[e] == 0.0 : std::abs(mean1 - fd[e]) <= 3 * se1;
    b_ok = b_ok && ok0;
    c_ok = c_ok && ok1;
    r.details.push_back(fmt("(b) logit %.0f: MC %.5f +- %.5f vs exact %.5f", e, mean0, se0, fd[e]) +
                        fmt(" | (c) with baseline %.5f +- %.5f", mean1, se1) + (ok0 && ok1 ? " ok" : " MISS"));
  }
  c_ok = c_ok && var1 < var0;
  r.details.push_back(fmt("(c) total variance without baseline %.5f, with baseline %.5f", var0, var1));
  r.pass = a_ok && b_ok && c_ok;
  return r;
}

namespace {

SuperNetGraph random_dag(Rng& rng, int layers, int max_edges) {
  std::vector<LayerSpec> ls;
  for (int i = 0; i < layers; ++i) ls.push_back({i, {2}, i + 1 < layers && i > 0 ? Activation::ReLU : Activation::None});
  std::vector<EdgeSpec> es;
  const auto add = [&](int s, int d) {
    es.push_back({s, d, ModuleSpec::dense(2, 2, "e" + std::to_string(s) + "_" + std::to_string(d)), rng.bernoulli(0.1), std::nullopt});
  };
  for (int j = 1; j < layers; ++j) add(j - 1, j);
  for (int j = 2; j < layers; ++j)
    for (int i = 0; i + 1 < j; ++i)
      if (static_cast<int>(es.size()) < max_edges && rng.bernoulli(0.5)) add(i, j);
  return build_graph(ls, es);
}

}  // namespace

CheckResult check_sampler(const AcceptanceOptions& o) {
  CheckResult r{"5", "sampler: exhaustive normalization and reachability of sampled edges", true, {}};
  Rng rng(17);
  std::vector<SuperNetGraph> graphs{dense_supernet({2, 3, 3, 3, 2}), fork_network(), twin_chain_network(), always_connected_toy()};
  {
    ResNetFabricConfig c;
    c.groups = 2;
    c.width = 2;
    c.toy_scale = true;
    graphs.push_back(resnet_fabric(c));
    CnfConfig k;
    k.width = 2;
    k.height = 2;
    k.input_shape = {3, 2, 2};
    graphs.push_back(cnf(k));
  }
  for (int i = 0; i < 20; ++i) graphs.push_back(random_dag(rng, 3 + static_cast<int>(rng.below(4)), 12));
  double worst = 0.0;
  for (const SuperNetGraph& g : graphs) {
    ArchitectureDistribution dist{std::vector<double>(g.num_edges()), 0};
    for (double& l : dist.logits) l = 2.0 * rng.normal();
    double total = 0.0;
    for (std::uint64_t code = 0; code < (std::uint64_t{1} << g.num_edges()); ++code) {
      if (const auto lp = log_prob_of(g, dist, Mask::from_code(g, code))) total += std::exp(*lp);
    }
    worst = std::max(worst, std::abs(total - 1.0));
  }
  const bool norm_ok = worst <= 1e-9;
  r.details.push_back(std::to_string(graphs.size()) + fmt(" graphs of <= 12 edges: max |sum P - 1| = %.2e", worst) + (norm_ok ? " ok" : " MISS"));

  ResNetFabricConfig c;
  c.toy_scale = true;
  const SuperNetGraph fabric = resnet_fabric(c);
  ArchitectureDistribution dist{std::vector<double>(fabric.num_edges()), 0};
  for (double& l : dist.logits) l = rng.normal();
  long violations = 0;
  for (int k = 0; k < o.sampler_draws; ++k) {
    const SampleRecord s = sample_mask(fabric, dist, rng);
    const std::vector<std::uint8_t> reach = forward_reachable(fabric, s.mask);
    for (int e = 0; e < fabric.num_edges(); ++e)
      if (s.mask[e] && !reach[fabric.edge(e).src]) ++violations;
  }
  const bool reach_ok = violations == 0;
  r.details.push_back(std::to_string(o.sampler_draws) + " draws on a " + std::to_string(fabric.num_edges()) +
                      "-edge fabric: " + std::to_string(violations) + " edges with unreachable source" + (reach_ok ? " ok" : " MISS"));
  r.pass = norm_ok && reach_ok;
  return r;
}

CheckResult check_selection(const AcceptanceOptions& o) {
  CheckResult r{"6", "selection: pareto front vs quadratic oracle, budget sweep monotonicity", true, {}};
  Rng rng(23);
  int mismatches = 0;
  for (int t = 0; t < o.pareto_sets; ++t) {
    std::vector<EvaluatedModel> pts(1 + rng.below(60));
    for (std::size_t i = 0; i < pts.size(); ++i) {
      pts[i].checkpoint = "p" + std::to_string(i);
      pts[i].cost = static_cast<double>(rng.below(20));
      pts[i].val_accuracy = static_cast<double>(rng.below(11)) / 10.0;
    }
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      bool out = false;
      for (std::size_t j = 0; j < pts.size() && !out; ++j) {
        const bool weak = pts[j].cost <= pts[i].cost && pts[j].val_accuracy >= pts[i].val_accuracy;
        const bool strict = pts[j].cost < pts[i].cost || pts[j].val_accuracy > pts[i].val_accuracy;
        out = (weak && strict) || (j < i && !strict && weak);
      }
      if (!out) keep.push_back(i);
    }
    std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) { return pts[a].cost < pts[b].cost; });
    const std::vector<EvaluatedModel> front = pareto_front(pts);
    bool same = front.size() == keep.size();
    for (std::size_t k = 0; same && k < keep.size(); ++k) same = front[k].checkpoint == pts[keep[k]].checkpoint;
    mismatches += same ? 0 : 1;
  }
  const bool oracle_ok = mismatches == 0;
  r.details.push_back(std::to_string(o.pareto_sets) + " random sets: " + std::to_string(mismatches) + " mismatches" + (oracle_ok ? " ok" : " MISS"));

  Json cfg = toy_experiment_config();
  cfg["sweep"] = Json::parse(R"({"max_costs": [400, 200, 100, 64, 36], "lambdas": [0.004], "seeds": [0, 1]})");
  const SweepResult sweep = cmd_sweep(cfg, std::nullopt);
  bool mono = true;
  double prev = INFINITY;
  std::string trace;
  for (const auto& [c, top] : sweep.front_max_cost) {
    mono = mono && std::isfinite(top) && top <= prev;
    prev = top;
    trace += fmt(" C=%.0f:%.0f", c, top);
  }
  r.details.push_back("front max cost by decreasing budget:" + trace + (mono ? " ok" : " MISS"));
  r.pass = oracle_ok && mono;
  return r;
}

CheckResult check_determinism(const AcceptanceOptions&) {
  CheckResult r{"7", "determinism: identical config and seed give byte-identical logs", false, {}};
  Json cfg = toy_experiment_config();
  cfg["train"]["epochs"] = 20;
  const auto base = std::filesystem::temp_directory_path() / ("bsn_determinism_" + std::to_string(::getpid()));
  const auto a = base / "a", b = base / "b";
  cmd_train(cfg, a);
  cmd_train(cfg, b);
  bool same = true;
  for (const char* f : {"log.jsonl", "models.jsonl", "final.dist"}) {
    const bool eq = read_text_file(a / f) == read_text_file(b / f);
    same = same && eq;
    r.details.push_back(std::string(f) + (eq ? " identical" : " DIFFERS"));
  }
  std::filesystem::remove_all(base);
  r.pass = same;
  return r;
}

std::vector<CheckResult> run_acceptance(const AcceptanceOptions& o, const std::vector<std::string>& only) {
  using Fn = CheckResult (*)(const AcceptanceOptions&);
  const std::pair<const char*, Fn> checks[] = {
      {"1", check_cost_tables}, {"2", check_distributed_tables}, {"3", check_optimality_property}, {"4", check_gradients},
      {"5", check_sampler},     {"6", check_selection},          {"7", check_determinism},
  };
  std::vector<CheckResult> out;
  for (const auto& [id, fn] : checks) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    try {
      out.push_back(fn(o));
    } catch (const std::exception& e) {
      out.push_back({id, "error", false, {e.what()}});
    }
  }
  return out;
}

std::string format_result(const CheckResult& r) {
  std::string s = std::string(r.pass ? "PASS" : "FAIL") + " [" + r.id + "] " + r.title + "\n";
  for (const auto& d : r.details) s += "    " + d + "\n";
  return s;
}

}  // namespace bsn
