#include "bsn/selection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace bsn {

void validate(const EvaluatedModel& m) {
  if (!(m.val_accuracy >= 0.0 && m.val_accuracy <= 1.0)) throw Error(Errc::InvalidConfig, "accuracy outside [0, 1]");
  if (!(m.cost >= 0.0)) throw Error(Errc::InvalidConfig, "negative cost");
}

std::vector<EvaluatedModel> pareto_front(const std::vector<EvaluatedModel>& models) {
  if (models.empty()) throw Error(Errc::EmptyInput, "pareto front of an empty model list");
  // Sweep by ascending cost, then descending accuracy, keeping points that
  // beat the best accuracy seen so far.
  std::vector<std::size_t> order(models.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (models[a].cost != models[b].cost) return models[a].cost < models[b].cost;
    return models[a].val_accuracy > models[b].val_accuracy;
  });
  std::vector<EvaluatedModel> front;
  double best = -INFINITY;
  for (std::size_t i : order) {
    if (models[i].val_accuracy > best) {
      front.push_back(models[i]);
      best = models[i].val_accuracy;
    }
  }
  return front;
}

EvaluatedModel evaluate_mask(const SuperNetGraph& g, const Mask& h, Params& params, const Dataset& data, const CostEvaluator& cost) {
  if (!is_output_connected(g, h)) throw Error(Errc::NotConnected, "architecture does not reach the output layer");
  EvaluatedModel m;
  m.val_accuracy = accuracy(g, h, params, data);
  m.cost = cost.evaluate(g, h);
  m.unit = cost.unit();
  return m;
}

EvaluatedModel evaluate_model(const SuperNetGraph& g, const ArchitectureDistribution& dist, Params& params,
                              const Dataset& data, const CostEvaluator& cost, const EvalOptions& opts) {
  if (opts.mode == EvalMode::ArgmaxMask) return evaluate_mask(g, argmax_mask(g, dist), params, data, cost);
  if (opts.samples < 1) throw Error(Errc::InvalidConfig, "sampled evaluation needs at least one sample");
  // Tally distinct masks so each is evaluated once; weights count/samples
  // keep a point-mass distribution exact.
  Rng rng(opts.seed);
  std::map<std::vector<std::uint8_t>, std::pair<int, double>> tally;  // count, cost sum
  for (int k = 0; k < opts.samples; ++k) {
    const ConnectedSample s = sample_connected(g, dist, rng, opts.resample_limit);
    const Mask h = s.substituted ? Mask::full(g) : s.record.mask;
    auto& [count, cost_sum] = tally[h.bits];
    ++count;
    if (!cost.deterministic() || count == 1) cost_sum += cost.evaluate(g, h);
  }
  double acc = 0.0, c = 0.0;
  for (const auto& [bits, entry] : tally) {
    const auto [count, cost_sum] = entry;
    const double w = static_cast<double>(count) / opts.samples;
    acc += w * accuracy(g, Mask{bits}, params, data);
    c += w * (cost.deterministic() ? cost_sum : cost_sum / count);
  }
  EvaluatedModel m;
  m.val_accuracy = acc;
  m.cost = c;
  m.unit = cost.unit();
  return m;
}

nlohmann::ordered_json to_json(const EvaluatedModel& m) {
  nlohmann::ordered_json j;
  j["checkpoint"] = m.checkpoint;
  j["val_accuracy"] = m.val_accuracy;
  j["cost"] = m.cost;
  j["unit"] = m.unit;
  j["lambda"] = m.lambda;
  j["max_cost"] = m.max_cost;
  j["seed"] = m.seed;
  j["epoch"] = m.epoch;
  return j;
}

EvaluatedModel model_from_json(const nlohmann::json& j) {
  try {
    EvaluatedModel m;
    m.checkpoint = j.value("checkpoint", "");
    m.val_accuracy = j.at("val_accuracy").get<double>();
    m.cost = j.at("cost").get<double>();
    m.unit = j.value("unit", "");
    m.lambda = j.value("lambda", 0.0);
    m.max_cost = j.value("max_cost", 0.0);
    m.seed = j.value("seed", std::uint64_t{0});
    m.epoch = j.value("epoch", 0);
    validate(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("bad model record: ") + e.what());
  }
}

std::string models_jsonl(const std::vector<EvaluatedModel>& models) {
  std::string out;
  for (const auto& m : models) out += to_json(m).dump() + "\n";
  return out;
}

std::vector<EvaluatedModel> parse_models_jsonl(const std::string& text) {
  std::vector<EvaluatedModel> out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::ParseError, "line " + std::to_string(n) + ": invalid JSON");
    // Training logs mix record types; only evaluation records are models.
    if (j.contains("record") && j["record"] != "model") continue;
    out.push_back(model_from_json(j));
  }
  return out;
}

std::string front_csv(const std::vector<EvaluatedModel>& front) {
  std::ostringstream out;
  out << "cost,accuracy,checkpoint\n";
  char buf[64];
  for (const auto& m : front) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,", m.cost, m.val_accuracy);
    out << buf << m.checkpoint << '\n';
  }
  return out.str();
}

std::string plot_data(const std::vector<EvaluatedModel>& all, const std::vector<EvaluatedModel>& front) {
  std::ostringstream out;
  out << "# cost accuracy on_front\n";
  char buf[96];
  for (const auto& m : all) {
    const bool on = std::any_of(front.begin(), front.end(), [&](const EvaluatedModel& f) {
      return f.cost == m.cost && f.val_accuracy == m.val_accuracy && f.checkpoint == m.checkpoint;
    });
    std::snprintf(buf, sizeof buf, "%.17g %.17g %d\n", m.cost, m.val_accuracy, on ? 1 : 0);
    out << buf;
  }
  return out.str();
}

}  // namespace bsn
