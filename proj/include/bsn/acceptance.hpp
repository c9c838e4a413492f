#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bsn/experiment.hpp"

namespace bsn {

struct CheckResult {
  std::string id;
  std::string title;
  bool pass = false;
  std::vector<std::string> details;
};

using MaskCostFn = std::function<double(const SuperNetGraph&, const Mask&)>;

struct AcceptanceOptions {
  MaskCostFn flops = flops_cost;
  MaskCostFn params = params_cost;
  int optimality_seeds = 20;
  int gradient_samples = 100000;
  int sampler_draws = 1000000;
  int pareto_sets = 1000;
};

/// Relative error of analytic module gradients against central differences
/// (double precision), worst over inputs and every parameter element.
struct GradCheck {
  ModuleKind kind;
  std::string label;
  double max_rel_error = 0.0;
};
std::vector<GradCheck> module_gradient_checks(std::uint64_t seed);

/// Graph whose output is always reachable: a fixed input -> output edge
/// plus five sampled Dense edges over two hidden layers.
SuperNetGraph always_connected_toy();

/// Settings of the optimality check shared by the acceptance suite and tests.
struct OptimalityToy {
  SuperNetGraph graph;
  Dataset train;
  BudgetConfig budget;
  OptimalityConfig config;
};
OptimalityToy optimality_toy(std::uint64_t seed);

/// Default experiment config for the two-moons toy with a binding budget.
Json toy_experiment_config();

CheckResult check_cost_tables(const AcceptanceOptions& o);
CheckResult check_distributed_tables(const AcceptanceOptions& o);
CheckResult check_optimality_property(const AcceptanceOptions& o);
CheckResult check_gradients(const AcceptanceOptions& o);
CheckResult check_sampler(const AcceptanceOptions& o);
CheckResult check_selection(const AcceptanceOptions& o);
CheckResult check_determinism(const AcceptanceOptions& o);

std::vector<CheckResult> run_acceptance(const AcceptanceOptions& o, const std::vector<std::string>& only = {});

/// "PASS <id> <title>" / "FAIL ..." followed by indented details.
std::string format_result(const CheckResult& r);

}  // namespace bsn
