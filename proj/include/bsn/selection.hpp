#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsn/trainer.hpp"

namespace bsn {

struct EvaluatedModel {
  std::string checkpoint;
  double val_accuracy = 0.0;
  double cost = 0.0;
  std::string unit;
  double lambda = 0.0;
  double max_cost = 0.0;
  std::uint64_t seed = 0;
  int epoch = 0;
};

void validate(const EvaluatedModel& m);

/// Models not dominated by any other (cost <= and accuracy >=, one strict),
/// sorted by ascending cost. Of several identical (cost, accuracy) points
/// only the first in input order is kept.
std::vector<EvaluatedModel> pareto_front(const std::vector<EvaluatedModel>& models);

enum class EvalMode { ArgmaxMask, SampledMean };

struct EvalOptions {
  EvalMode mode = EvalMode::ArgmaxMask;
  int samples = 100;  // SampledMean
  std::uint64_t seed = 0;
  int resample_limit = 10;
};

/// ArgmaxMask keeps edges with gamma >= 0.5 (then prunes to live edges) and
/// throws NotConnected if the result misses the output. SampledMean averages
/// accuracy and cost over sampled masks.
EvaluatedModel evaluate_model(const SuperNetGraph& g, const ArchitectureDistribution& dist, Params& params,
                              const Dataset& data, const CostEvaluator& cost, const EvalOptions& opts = {});

EvaluatedModel evaluate_mask(const SuperNetGraph& g, const Mask& h, Params& params, const Dataset& data,
                             const CostEvaluator& cost);

nlohmann::ordered_json to_json(const EvaluatedModel& m);
EvaluatedModel model_from_json(const nlohmann::json& j);

std::string models_jsonl(const std::vector<EvaluatedModel>& models);
std::vector<EvaluatedModel> parse_models_jsonl(const std::string& text);

/// cost,accuracy,checkpoint
std::string front_csv(const std::vector<EvaluatedModel>& front);

/// Whitespace-separated columns (cost accuracy on_front) for plotting tools.
std::string plot_data(const std::vector<EvaluatedModel>& all, const std::vector<EvaluatedModel>& front);

}  // namespace bsn
