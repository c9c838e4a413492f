#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsn/fabric.hpp"
#include "bsn/selection.hpp"
#include "bsn/trainer.hpp"

namespace bsn {

using Json = nlohmann::ordered_json;

/// Parses a JSON config document; ParseError on malformed text.
Json parse_config(const std::string& text);
Json load_config(const std::filesystem::path& path);

/// {"type": "dense" | "resnet_fabric" | "cnf" | "fork" | "twin_chain" | "file", ...}
SuperNetGraph make_graph(const Json& spec);

/// {"name": "moons" | "digits", ...}; returns (train, val).
std::pair<Dataset, Dataset> make_datasets(const Json& spec);

/// {"cost": "flops" | "params" | "distributed", "machines", "policy",
///  "max_cost", "lambda", "noise": {"kind", "scale", "seed"}}
BudgetConfig make_budget(const Json& spec);
CostEvaluator make_cost(const Json& spec);

TrainConfig make_train_config(const Json& spec);

/// Fills every documented default so the echoed config is complete.
Json normalize_experiment(const Json& config);

struct TrainResult {
  TrainingLog log;
  std::vector<EvaluatedModel> models;  // checkpoints, then the final model
  Json config;
};

/// Trains one experiment; writes log.jsonl, models.jsonl and checkpoints
/// under out_dir when given.
TrainResult cmd_train(const Json& config, const std::optional<std::filesystem::path>& out_dir);

struct SweepResult {
  int runs = 0;
  std::vector<EvaluatedModel> records;  // connected final model of each run, grid order
  std::vector<EvaluatedModel> front;
  /// per max_cost (as listed): largest cost on that budget's front
  std::vector<std::pair<double, double>> front_max_cost;
};

/// Runs the grid max_costs x lambdas x seeds (lambdas from "lambda_grid"
/// when not listed) on up to "workers" threads.
SweepResult cmd_sweep(const Json& config, const std::optional<std::filesystem::path>& out_dir);

}  // namespace bsn
