#include "bsn/experiment.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "bsn/graph_io.hpp"

namespace bsn {

namespace {

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(Errc::InvalidConfig, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error(Errc::InvalidConfig, "unknown key '" + key + "' in " + where);
  }
}

// Copies spec over defaults, so the result holds every documented field.
Json with_defaults(Json defaults, const Json& spec) {
  for (const auto& [key, value] : spec.items()) defaults[key] = value;
  return defaults;
}

template <typename T>
T field(const Json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(Errc::InvalidConfig, where + "." + key + " is missing or has the wrong type");
  }
}

Shape shape_field(const Json& j, const char* key, const std::string& where) { return field<std::vector<int>>(j, key, where); }

Json normalize_graph(const Json& spec) {
  const std::string type = spec.contains("type") ? field<std::string>(spec, "type", "graph") : "dense";
  Json out;
  if (type == "dense") {
    check_keys(spec, {"type", "widths"}, "graph");
    out = with_defaults({{"type", type}, {"widths", {2, 16, 16, 2}}}, spec);
  } else if (type == "resnet_fabric") {
    check_keys(spec, {"type", "groups", "width", "base_filters", "input_shape", "num_classes", "toy_scale", "toy_filters", "toy_input_shape"}, "graph");
    out = with_defaults({{"type", type}, {"groups", 3}, {"width", 3}, {"base_filters", 16}, {"input_shape", {3, 32, 32}},
                         {"num_classes", 10}, {"toy_scale", false}, {"toy_filters", 4}, {"toy_input_shape", {3, 8, 8}}}, spec);
  } else if (type == "cnf") {
    check_keys(spec, {"type", "width", "height", "filters", "input_shape", "task", "num_classes", "toy_scale", "toy_filters", "toy_input_shape"}, "graph");
    out = with_defaults({{"type", type}, {"width", 8}, {"height", 6}, {"filters", 128}, {"input_shape", {3, 32, 32}},
                         {"task", "classify"}, {"num_classes", 10}, {"toy_scale", false}, {"toy_filters", 4},
                         {"toy_input_shape", {3, 8, 8}}}, spec);
  } else if (type == "fork" || type == "twin_chain") {
    check_keys(spec, {"type", "width"}, "graph");
    out = with_defaults({{"type", type}, {"width", 4}}, spec);
  } else if (type == "file") {
    check_keys(spec, {"type", "path"}, "graph");
    out = spec;
    field<std::string>(out, "path", "graph");
  } else {
    throw Error(Errc::InvalidConfig, "unknown graph type '" + type + "'");
  }
  return out;
}

Json normalize_dataset(const Json& spec) {
  const std::string name = spec.contains("name") ? field<std::string>(spec, "name", "dataset") : "moons";
  if (name == "moons") {
    check_keys(spec, {"name", "count", "noise", "seed", "val_fraction", "split_seed"}, "dataset");
    return with_defaults({{"name", name}, {"count", 400}, {"noise", 0.15}, {"seed", 7}, {"val_fraction", 0.25}, {"split_seed", 0}}, spec);
  }
  if (name == "digits") {
    check_keys(spec, {"name", "path", "flat", "limit", "val_fraction", "split_seed"}, "dataset");
    return with_defaults({{"name", name}, {"path", ""}, {"flat", false}, {"limit", 0}, {"val_fraction", 0.25}, {"split_seed", 0}}, spec);
  }
  throw Error(Errc::InvalidConfig, "unknown dataset '" + name + "'");
}

Json normalize_noise(const Json& spec) {
  check_keys(spec, {"kind", "scale", "seed"}, "budget.noise");
  return with_defaults({{"kind", "none"}, {"scale", 0.0}, {"seed", 0}}, spec);
}

Json normalize_budget(const Json& spec) {
  check_keys(spec, {"cost", "machines", "policy", "max_cost", "lambda", "noise"}, "budget");
  Json out = with_defaults({{"cost", "flops"}, {"machines", 2}, {"policy", "greedy"}, {"max_cost", 0.0}, {"lambda", 1.0},
                            {"noise", Json::object()}}, spec);
  out["noise"] = normalize_noise(out["noise"]);
  return out;
}

Json normalize_train(const Json& spec) {
  check_keys(spec, {"epochs", "burn_in_epochs", "lr", "lr_decay_epochs", "lr_decay_factor", "momentum", "weight_decay",
                    "batch_size", "seed", "resample_limit", "logit_init", "logit_lr_scale", "logit_lr_decay", "baseline",
                    "ema_decay"}, "train");
  // Burn-in defaults to the 50/300 share of the run used at full scale.
  Json out = with_defaults({{"epochs", 30}, {"lr", 0.05}, {"lr_decay_epochs", Json::array()}, {"lr_decay_factor", 0.1},
                            {"momentum", 0.9}, {"weight_decay", 1e-4}, {"batch_size", 16}, {"seed", 0}, {"resample_limit", 10},
                            {"logit_init", 3.0}, {"logit_lr_scale", 1.0}, {"logit_lr_decay", true}, {"baseline", "batch_mean"},
                            {"ema_decay", 0.9}}, spec);
  if (!out.contains("burn_in_epochs")) out["burn_in_epochs"] = field<int>(out, "epochs", "train") * 50 / 300;
  return out;
}

Json normalize_sweep(const Json& spec) {
  check_keys(spec, {"max_costs", "lambdas", "lambda_grid", "seeds", "workers"}, "sweep");
  return with_defaults({{"workers", 1}}, spec);
}

}  // namespace

Json parse_config(const std::string& text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw Error(Errc::ParseError, "config is not valid JSON");
  if (!j.is_object()) throw Error(Errc::InvalidConfig, "config must be a JSON object");
  return j;
}

Json load_config(const std::filesystem::path& path) { return parse_config(read_text_file(path)); }

Json normalize_experiment(const Json& config) {
  check_keys(config, {"graph", "dataset", "budget", "train", "sweep"}, "config");
  Json out;
  out["graph"] = normalize_graph(config.contains("graph") ? config["graph"] : Json::object());
  out["dataset"] = normalize_dataset(config.contains("dataset") ? config["dataset"] : Json::object());
  out["budget"] = normalize_budget(config.contains("budget") ? config["budget"] : Json::object());
  out["train"] = normalize_train(config.contains("train") ? config["train"] : Json::object());
  if (config.contains("sweep")) out["sweep"] = normalize_sweep(config["sweep"]);
  return out;
}

SuperNetGraph make_graph(const Json& raw) {
  const Json spec = normalize_graph(raw);
  const std::string type = spec["type"];
  const std::string w = "graph";
  if (type == "dense") return dense_supernet(field<std::vector<int>>(spec, "widths", w));
  if (type == "resnet_fabric") {
    ResNetFabricConfig c;
    c.groups = field<int>(spec, "groups", w);
    c.width = field<int>(spec, "width", w);
    c.base_filters = field<int>(spec, "base_filters", w);
    c.input_shape = shape_field(spec, "input_shape", w);
    c.num_classes = field<int>(spec, "num_classes", w);
    c.toy_scale = field<bool>(spec, "toy_scale", w);
    c.toy_filters = field<int>(spec, "toy_filters", w);
    c.toy_input_shape = shape_field(spec, "toy_input_shape", w);
    return resnet_fabric(c);
  }
  if (type == "cnf") {
    CnfConfig c;
    c.width = field<int>(spec, "width", w);
    c.height = field<int>(spec, "height", w);
    c.filters = field<int>(spec, "filters", w);
    c.input_shape = shape_field(spec, "input_shape", w);
    const std::string task = field<std::string>(spec, "task", w);
    if (task != "classify" && task != "segment") throw Error(Errc::InvalidConfig, "graph.task must be classify or segment");
    c.task = task == "classify" ? CnfTask::Classify : CnfTask::Segment;
    c.num_classes = field<int>(spec, "num_classes", w);
    c.toy_scale = field<bool>(spec, "toy_scale", w);
    c.toy_filters = field<int>(spec, "toy_filters", w);
    c.toy_input_shape = shape_field(spec, "toy_input_shape", w);
    return cnf(c);
  }
  if (type == "fork") return fork_network(field<int>(spec, "width", w));
  if (type == "twin_chain") return twin_chain_network(field<int>(spec, "width", w));
  return parse_graph(read_text_file(field<std::string>(spec, "path", w)));
}

std::pair<Dataset, Dataset> make_datasets(const Json& raw) {
  const Json spec = normalize_dataset(raw);
  const std::string w = "dataset";
  Dataset all;
  if (spec["name"] == "moons") {
    all = make_moons(field<int>(spec, "count", w), field<double>(spec, "noise", w), field<std::uint64_t>(spec, "seed", w));
  } else {
    const std::string path = field<std::string>(spec, "path", w);
    all = load_digits(path.empty() ? default_digits_path() : std::filesystem::path(path), field<bool>(spec, "flat", w));
    const int limit = field<int>(spec, "limit", w);
    if (limit < 0) throw Error(Errc::InvalidConfig, "dataset.limit must be >= 0");
    if (limit > 0 && static_cast<std::size_t>(limit) < all.size()) {
      std::vector<std::size_t> first(limit);
      for (int i = 0; i < limit; ++i) first[i] = i;
      all = all.subset(first);
    }
  }
  return split_dataset(all, field<double>(spec, "val_fraction", w), field<std::uint64_t>(spec, "split_seed", w));
}

CostEvaluator make_cost(const Json& raw) {
  const Json spec = normalize_budget(raw);
  const std::string w = "budget";
  const std::string kind = field<std::string>(spec, "cost", w);
  CostEvaluator base = CostEvaluator::flops();
  if (kind == "params") {
    base = CostEvaluator::params();
  } else if (kind == "distributed") {
    const std::string policy = field<std::string>(spec, "policy", w);
    if (policy != "greedy" && policy != "brute_force") throw Error(Errc::InvalidConfig, "budget.policy must be greedy or brute_force");
    base = CostEvaluator::distributed(field<int>(spec, "machines", w),
                                      policy == "greedy" ? SchedulePolicy::GreedyList : SchedulePolicy::BruteForceOptimal);
  } else if (kind != "flops") {
    throw Error(Errc::InvalidConfig, "budget.cost must be flops, params or distributed");
  }
  const Json& noise = spec["noise"];
  const std::string nk = field<std::string>(noise, "kind", "budget.noise");
  if (nk == "none") return base;
  NoiseSpec ns;
  if (nk == "uniform") {
    ns.kind = NoiseKind::Uniform;
  } else if (nk == "gaussian") {
    ns.kind = NoiseKind::Gaussian;
  } else {
    throw Error(Errc::InvalidConfig, "budget.noise.kind must be none, uniform or gaussian");
  }
  ns.scale = field<double>(noise, "scale", "budget.noise");
  return CostEvaluator::stochastic(base, ns, field<std::uint64_t>(noise, "seed", "budget.noise"));
}

BudgetConfig make_budget(const Json& raw) {
  const Json spec = normalize_budget(raw);
  BudgetConfig b{field<double>(spec, "max_cost", "budget"), field<double>(spec, "lambda", "budget"), make_cost(spec)};
  validate(b);
  return b;
}

TrainConfig make_train_config(const Json& raw) {
  const Json spec = normalize_train(raw);
  const std::string w = "train";
  TrainConfig c;
  c.epochs = field<int>(spec, "epochs", w);
  c.burn_in_epochs = field<int>(spec, "burn_in_epochs", w);
  c.lr.initial = field<double>(spec, "lr", w);
  c.lr.decay_epochs = field<std::vector<int>>(spec, "lr_decay_epochs", w);
  c.lr.factor = field<double>(spec, "lr_decay_factor", w);
  c.momentum = field<double>(spec, "momentum", w);
  c.weight_decay_theta = field<double>(spec, "weight_decay", w);
  c.batch_size = field<int>(spec, "batch_size", w);
  c.seed = field<std::uint64_t>(spec, "seed", w);
  c.resample_limit = field<int>(spec, "resample_limit", w);
  c.logit_init = field<double>(spec, "logit_init", w);
  c.logit_lr_scale = field<double>(spec, "logit_lr_scale", w);
  c.logit_lr_decay = field<bool>(spec, "logit_lr_decay", w);
  const std::string baseline = field<std::string>(spec, "baseline", w);
  if (baseline == "batch_mean") {
    c.baseline = BaselineMode::BatchMean;
  } else if (baseline == "ema") {
    c.baseline = BaselineMode::Ema;
  } else if (baseline == "none") {
    c.baseline = BaselineMode::None;
  } else {
    throw Error(Errc::InvalidConfig, "train.baseline must be batch_mean, ema or none");
  }
  c.ema_decay = field<double>(spec, "ema_decay", w);
  validate(c);
  return c;
}

TrainResult cmd_train(const Json& config, const std::optional<std::filesystem::path>& out_dir) {
  TrainResult res;
  res.config = normalize_experiment(config);
  res.config.erase("sweep");
  const SuperNetGraph g = make_graph(res.config["graph"]);
  auto [train, val] = make_datasets(res.config["dataset"]);
  if (train.input_shape != g.layer(0).shape) {
    throw Error(Errc::InvalidConfig, "dataset inputs " + shape_string(train.input_shape) + " do not fit graph input " +
                                         shape_string(g.layer(0).shape));
  }
  if (g.layer(g.sink()).shape != Shape{train.num_classes}) {
    throw Error(Errc::InvalidConfig, "graph output " + shape_string(g.layer(g.sink()).shape) + " does not match " +
                                         std::to_string(train.num_classes) + " classes");
  }
  const BudgetConfig budget = make_budget(res.config["budget"]);
  const TrainConfig tc = make_train_config(res.config["train"]);
  ArchitectureDistribution dist = ArchitectureDistribution::uniform_logit(g, tc.logit_init, tc.seed);
  Params params;
  init_parameters(g, params, derive_seed(tc.seed, 0));
  res.log = run_training(g, dist, params, budget, tc, train, val, RunOptions{res.config, out_dir});

  const CostEvaluator& cost = budget.cost.kind() == CostKind::Stochastic ? *budget.cost.base() : budget.cost;
  const auto meta = [&](EvaluatedModel m, std::string ckpt, int epoch) {
    m.checkpoint = std::move(ckpt);
    m.lambda = budget.lambda;
    m.max_cost = budget.max_cost;
    m.seed = tc.seed;
    m.epoch = epoch;
    return m;
  };
  for (std::size_t i = 0; i < res.log.checkpoints.size(); ++i) {
    const CheckpointEntry& c = res.log.checkpoints[i];
    EvaluatedModel m;
    m.val_accuracy = c.val_accuracy;
    m.cost = c.cost;
    m.unit = cost.unit();
    res.models.push_back(meta(m, "ckpt_" + std::to_string(i), c.epoch));
  }
  const Mask final_mask = argmax_mask(g, dist);
  if (tc.epochs > 0 && is_output_connected(g, final_mask) && !val.empty()) {
    res.models.push_back(meta(evaluate_mask(g, final_mask, params, val, cost), "final", tc.epochs));
  }
  if (out_dir) {
    std::string text;
    for (const auto& m : res.models) {
      Json j;
      j["record"] = "model";
      const Json fields = to_json(m);
      for (const auto& [k, v] : fields.items()) j[k] = v;
      j["config"] = res.config;
      text += j.dump() + "\n";
    }
    write_text_file(*out_dir / "models.jsonl", text);
  }
  return res;
}

SweepResult cmd_sweep(const Json& config, const std::optional<std::filesystem::path>& out_dir) {
  const Json cfg = normalize_experiment(config);
  const Json sweep = cfg.contains("sweep") ? cfg["sweep"] : normalize_sweep(Json::object());
  const std::vector<double> max_costs = sweep.contains("max_costs") ? field<std::vector<double>>(sweep, "max_costs", "sweep")
                                                                    : std::vector<double>{cfg["budget"]["max_cost"].get<double>()};
  const std::vector<std::uint64_t> seeds = sweep.contains("seeds") ? field<std::vector<std::uint64_t>>(sweep, "seeds", "sweep")
                                                                   : std::vector<std::uint64_t>{cfg["train"]["seed"].get<std::uint64_t>()};
  if (max_costs.empty() || seeds.empty()) throw Error(Errc::InvalidConfig, "sweep grids must not be empty");
  const auto lambdas_for = [&](double c) -> std::vector<double> {
    if (sweep.contains("lambdas")) return field<std::vector<double>>(sweep, "lambdas", "sweep");
    if (sweep.contains("lambda_grid")) return lambda_grid(c, field<int>(sweep, "lambda_grid", "sweep"));
    return {cfg["budget"]["lambda"].get<double>()};
  };

  struct Run {
    std::size_t budget_index;
    Json config;
    std::string name;
  };
  std::vector<Run> runs;
  for (std::size_t ci = 0; ci < max_costs.size(); ++ci) {
    const std::vector<double> lambdas = lambdas_for(max_costs[ci]);
    if (lambdas.empty()) throw Error(Errc::InvalidConfig, "sweep lambda grid is empty");
    for (std::size_t li = 0; li < lambdas.size(); ++li) {
      for (std::size_t si = 0; si < seeds.size(); ++si) {
        Json rc = cfg;
        rc.erase("sweep");
        rc["budget"]["max_cost"] = max_costs[ci];
        rc["budget"]["lambda"] = lambdas[li];
        rc["train"]["seed"] = seeds[si];
        runs.push_back({ci, rc, "run_c" + std::to_string(ci) + "_l" + std::to_string(li) + "_s" + std::to_string(si)});
      }
    }
  }

  std::vector<std::optional<EvaluatedModel>> finals(runs.size());
  std::vector<std::exception_ptr> errors(runs.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        const auto dir = out_dir ? std::optional(*out_dir / runs[i].name) : std::nullopt;
        TrainResult r = cmd_train(runs[i].config, dir);
        if (!r.models.empty() && r.models.back().checkpoint == "final") {
          EvaluatedModel m = r.models.back();
          m.checkpoint = runs[i].name + "/final";
          finals[i] = m;
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int workers = std::max(1, std::min<int>(field<int>(sweep, "workers", "sweep"), static_cast<int>(runs.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  SweepResult res;
  res.runs = static_cast<int>(runs.size());
  std::vector<std::vector<EvaluatedModel>> per_budget(max_costs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!finals[i]) continue;
    res.records.push_back(*finals[i]);
    per_budget[runs[i].budget_index].push_back(*finals[i]);
  }
  if (!res.records.empty()) res.front = pareto_front(res.records);
  for (std::size_t ci = 0; ci < max_costs.size(); ++ci) {
    double top = std::nan("");
    if (!per_budget[ci].empty()) {
      top = 0.0;
      for (const auto& m : pareto_front(per_budget[ci])) top = std::max(top, m.cost);
    }
    res.front_max_cost.emplace_back(max_costs[ci], top);
  }

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::string text;
    for (const auto& m : res.records) {
      Json j;
      j["record"] = "model";
      const Json fields = to_json(m);
      for (const auto& [k, v] : fields.items()) j[k] = v;
      j["config"] = cfg;
      text += j.dump() + "\n";
    }
    write_text_file(*out_dir / "records.jsonl", text);
    write_text_file(*out_dir / "front.csv", front_csv(res.front));
    write_text_file(*out_dir / "front.dat", plot_data(res.records, res.front));
  }
  return res;
}

}  // namespace bsn
