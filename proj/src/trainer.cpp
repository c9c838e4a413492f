#include "bsn/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "bsn/graph_io.hpp"

namespace bsn {

namespace {

const CostEvaluator& deterministic_part(const CostEvaluator& c) {
  return c.kind() == CostKind::Stochastic ? *c.base() : c;
}

std::string mask_bits(const Mask& h) {
  std::string s;
  for (auto b : h.bits) s.push_back(b ? '1' : '0');
  return s;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Null for non-finite values so the JSON stays valid.
nlohmann::ordered_json number(double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(); }

}  // namespace

void validate(const BudgetConfig& b) {
  if (!(b.max_cost >= 0.0)) throw Error(Errc::InvalidConfig, "max_cost must be >= 0");
  if (!(b.lambda >= 0.0)) throw Error(Errc::InvalidConfig, "lambda must be >= 0");
}

double hinge_penalty(const BudgetConfig& b, double cost) { return b.lambda * std::max(0.0, cost - b.max_cost); }

double BaselineTracker::value_for(std::span<const double> d) const {
  if (mode == BaselineMode::None || d.empty()) return 0.0;
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  if (mode == BaselineMode::BatchMean) return mean;
  return initialized ? current : mean;
}

void BaselineTracker::update(std::span<const double> d) {
  if (mode != BaselineMode::Ema || d.empty()) return;
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  current = initialized ? decay * current + (1.0 - decay) * mean : mean;
  initialized = true;
}

double LrSchedule::at(int epoch) const {
  double lr = initial;
  for (int e : decay_epochs)
    if (epoch >= e) lr *= factor;
  return lr;
}

void validate(const TrainConfig& c) {
  if (c.epochs < 0 || c.burn_in_epochs < 0) throw Error(Errc::InvalidConfig, "epoch counts must be non-negative");
  if (c.epochs > 0 && c.burn_in_epochs >= c.epochs) throw Error(Errc::InvalidConfig, "burn_in_epochs must be < epochs");
  if (c.epochs == 0 && c.burn_in_epochs > 0) throw Error(Errc::InvalidConfig, "burn_in_epochs must be < epochs");
  if (!(c.lr.initial > 0.0) || !(c.lr.factor > 0.0)) throw Error(Errc::InvalidConfig, "learning rates must be positive");
  if (!(c.logit_lr_scale > 0.0)) throw Error(Errc::InvalidConfig, "logit_lr_scale must be positive");
  if (c.momentum < 0.0 || c.momentum >= 1.0) throw Error(Errc::InvalidConfig, "momentum must be in [0, 1)");
  if (c.weight_decay_theta < 0.0) throw Error(Errc::InvalidConfig, "weight_decay_theta must be >= 0");
  if (c.batch_size < 1) throw Error(Errc::InvalidConfig, "batch_size must be positive");
  if (c.resample_limit < 0) throw Error(Errc::InvalidConfig, "resample_limit must be >= 0");
  if (c.ema_decay < 0.0 || c.ema_decay >= 1.0) throw Error(Errc::InvalidConfig, "ema_decay must be in [0, 1)");
}

ObjectiveParts objective_D(const SuperNetGraph& g, const Mask& h, Params& params, const BudgetConfig& budget,
                           const TensorD& x, const TensorD& y, LossKind loss) {
  ObjectiveParts p;
  p.loss = loss_delta(predict(g, h, x, params), y, loss);
  p.cost = budget.cost.evaluate(g, h);
  p.penalty = hinge_penalty(budget, p.cost);
  p.total = p.loss + p.penalty;
  return p;
}

ObjectiveParts objective_D(const SuperNetGraph& g, const Mask& h, Params& params, const BudgetConfig& budget,
                           const Dataset& data) {
  ObjectiveParts p;
  p.loss = mean_loss(g, h, params, data);
  p.cost = budget.cost.evaluate(g, h);
  p.penalty = hinge_penalty(budget, p.cost);
  p.total = p.loss + p.penalty;
  return p;
}

double exact_expected_objective(const SuperNetGraph& g, const ArchitectureDistribution& dist, Params& params,
                                const BudgetConfig& budget, const Dataset& data, int resample_limit) {
  if (!budget.cost.deterministic()) throw Error(Errc::InvalidConfig, "exact expectation needs a deterministic cost");
  double total = 0.0;
  for (const WeightedMask& wm : effective_mask_distribution(g, dist, resample_limit, kBruteForceEdgeLimit)) {
    if (wm.probability == 0.0) continue;
    total += wm.probability * objective_D(g, wm.mask, params, budget, data).total;
  }
  return total;
}

std::vector<double> gamma_gradient_estimate(const SuperNetGraph& g, const ArchitectureDistribution& dist,
                                            const SampleRecord& record, double d, double baseline) {
  std::vector<double> grad = grad_log_prob(g, dist, record);
  for (double& v : grad) v *= d - baseline;
  return grad;
}

double accuracy(const SuperNetGraph& g, const Mask& h, Params& params, const Dataset& data) {
  if (data.empty()) throw Error(Errc::EmptyInput, "accuracy on an empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (argmax_class(predict(g, h, data.inputs[i], params)) == data.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

double mean_loss(const SuperNetGraph& g, const Mask& h, Params& params, const Dataset& data) {
  if (data.empty()) throw Error(Errc::EmptyInput, "loss on an empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) total += loss_delta(predict(g, h, data.inputs[i], params), data.targets[i], data.loss);
  return total / static_cast<double>(data.size());
}

void Sgd::step_theta(Params& params, double lr) {
  for (auto& [name, slot] : params.slots()) {
    auto [it, fresh] = velocity.try_emplace(name, Eigen::VectorXd::Zero(slot.value.data.size()));
    Eigen::VectorXd& v = it->second;
    v = momentum * v + slot.grad.data + weight_decay * slot.value.data;
    slot.value.data -= lr * v;
  }
}

void Sgd::step_logits(ArchitectureDistribution& dist, std::span<const double> grad, double lr) {
  if (logit_velocity.size() != dist.logits.size()) logit_velocity.assign(dist.logits.size(), 0.0);
  for (std::size_t e = 0; e < dist.logits.size(); ++e) {
    logit_velocity[e] = momentum * logit_velocity[e] + grad[e];
    dist.logits[e] -= lr * logit_velocity[e];
  }
}

Trainer::Trainer(const SuperNetGraph& g, ArchitectureDistribution& dist, Params& params, BudgetConfig budget, TrainConfig cfg)
    : g_(g), dist_(dist), params_(params), budget_(std::move(budget)), cfg_(std::move(cfg)),
      sample_rng_(derive_seed(cfg_.seed, 1)) {
  validate(budget_);
  validate(cfg_);
  check_covers(g_, dist_);
  baseline_.mode = cfg_.baseline;
  baseline_.decay = cfg_.ema_decay;
  sgd_.momentum = cfg_.momentum;
  sgd_.weight_decay = cfg_.weight_decay_theta;
}

StepReport Trainer::compute_gradients(const Dataset& data, std::span<const std::size_t> batch, MaskMode mode, const Mask* fixed) {
  if (batch.empty()) throw Error(Errc::EmptyInput, "empty batch");
  if (mode == MaskMode::Fixed && !fixed) throw Error(Errc::InvalidConfig, "fixed mode needs a mask");
  const double inv = 1.0 / static_cast<double>(batch.size());
  StepReport rep;
  rep.examples = static_cast<int>(batch.size());
  rep.gamma_grad.assign(g_.num_edges(), 0.0);
  params_.zero_grad();

  std::vector<SampleRecord> records;
  std::vector<double> eligible_d;
  for (std::size_t i : batch) {
    Mask h;
    bool eligible = false;
    if (mode == MaskMode::Full) {
      h = Mask::full(g_);
    } else if (mode == MaskMode::Fixed) {
      h = *fixed;
    } else {
      ConnectedSample cs = sample_connected(g_, dist_, sample_rng_, cfg_.resample_limit);
      rep.resamples += cs.attempts - 1;
      if (cs.substituted) {
        ++rep.substituted;
        h = Mask::full(g_);
      } else {
        h = cs.record.mask;
        eligible = true;
        records.push_back(std::move(cs.record));
      }
    }
    Tape<double> tape;
    const Var out = ssn_forward(g_, h, data.inputs.at(i), params_, tape);
    LossValue<double> lv = loss_with_grad(tape.value(out), data.targets.at(i), data.loss);
    lv.grad.data *= inv;
    backward(tape, lv.grad, params_);

    ObjectiveParts p;
    p.loss = lv.value;
    p.cost = budget_.cost.evaluate(g_, h);
    p.penalty = hinge_penalty(budget_, p.cost);
    p.total = p.loss + p.penalty;
    rep.mean_loss += p.loss * inv;
    rep.mean_cost += p.cost * inv;
    rep.mean_penalty += p.penalty * inv;
    rep.mean_objective += p.total * inv;
    if (eligible) eligible_d.push_back(p.total);
    rep.parts.push_back(p);
    rep.eligible.push_back(eligible ? 1 : 0);
    rep.masks.push_back(std::move(h));
  }
  rep.baseline = baseline_.value_for(eligible_d);
  for (std::size_t k = 0; k < records.size(); ++k) {
    const std::vector<double> gk = gamma_gradient_estimate(g_, dist_, records[k], eligible_d[k], rep.baseline);
    for (int e = 0; e < g_.num_edges(); ++e) rep.gamma_grad[e] += gk[e] * inv;
  }
  return rep;
}

StepReport Trainer::train_step(const Dataset& data, std::span<const std::size_t> batch, MaskMode mode, double lr,
                               const Mask* fixed, bool update_logits) {
  StepReport rep = compute_gradients(data, batch, mode, fixed);
  sgd_.step_theta(params_, lr);
  if (mode == MaskMode::Sampled && update_logits) {
    const double logit_lr = (cfg_.logit_lr_decay ? lr : cfg_.lr.initial) * cfg_.logit_lr_scale;
    sgd_.step_logits(dist_, rep.gamma_grad, logit_lr);
    std::vector<double> d;
    for (std::size_t k = 0; k < rep.parts.size(); ++k)
      if (rep.eligible[k]) d.push_back(rep.parts[k].total);
    baseline_.update(d);
  }
  rep.entropy = entropy(g_, dist_);
  return rep;
}

void train_fixed(const SuperNetGraph& g, const Mask& h, Params& params, const TrainConfig& cfg, const Dataset& train) {
  ArchitectureDistribution dist = ArchitectureDistribution::uniform_logit(g, 0.0);
  TrainConfig c = cfg;
  c.burn_in_epochs = 0;
  Trainer tr(g, dist, params, BudgetConfig{0.0, 0.0, CostEvaluator::flops()}, c);
  Rng shuffle(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order = iota_indices(train.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle.shuffle(order.begin(), order.end());
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t len = std::min<std::size_t>(cfg.batch_size, order.size() - s);
      tr.train_step(train, std::span(order).subspan(s, len), MaskMode::Fixed, cfg.lr.at(epoch), &h, false);
    }
  }
}

std::string TrainingLog::jsonl() const {
  std::string out;
  for (const auto& r : records) out += r.dump() + "\n";
  return out;
}

TrainingLog run_training(const SuperNetGraph& g, ArchitectureDistribution& dist, Params& params, const BudgetConfig& budget,
                         const TrainConfig& cfg, const Dataset& train, const Dataset& val, const RunOptions& opts) {
  if (train.empty()) throw Error(Errc::EmptyInput, "empty training set");
  Trainer tr(g, dist, params, budget, cfg);
  const CostEvaluator& log_cost = deterministic_part(budget.cost);
  const int sampled_edges = std::max(1, g.num_sampled_edges());
  const bool enumerable = g.num_sampled_edges() <= 20;

  TrainingLog log;
  const auto with_echo = [&](nlohmann::ordered_json r) {
    if (!opts.config_echo.is_null()) r["config"] = opts.config_echo;
    return r;
  };
  {
    nlohmann::ordered_json r;
    r["record"] = "init";
    r["epochs"] = cfg.epochs;
    r["burn_in_epochs"] = cfg.burn_in_epochs;
    r["edges"] = g.num_edges();
    r["sampled_edges"] = g.num_sampled_edges();
    r["cost_kind"] = budget.cost.name();
    r["cost_unit"] = budget.cost.unit();
    r["full_cost"] = number(log_cost.evaluate(g, Mask::full(g)));
    r["entropy"] = number(entropy(g, dist));
    log.records.push_back(with_echo(r));
  }

  Rng shuffle(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order = iota_indices(train.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool sampling = epoch >= cfg.burn_in_epochs;
    if (sampling && epoch == cfg.burn_in_epochs) std::fill(dist.logits.begin(), dist.logits.end(), cfg.logit_init);
    const double lr = cfg.lr.at(epoch);
    shuffle.shuffle(order.begin(), order.end());
    double loss = 0.0, objective = 0.0, cost = 0.0, penalty = 0.0;
    int substituted = 0, resamples = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t len = std::min<std::size_t>(cfg.batch_size, order.size() - s);
      const StepReport rep = tr.train_step(train, std::span(order).subspan(s, len), sampling ? MaskMode::Sampled : MaskMode::Full, lr);
      const double w = static_cast<double>(len);
      loss += rep.mean_loss * w;
      objective += rep.mean_objective * w;
      cost += rep.mean_cost * w;
      penalty += rep.mean_penalty * w;
      substituted += rep.substituted;
      resamples += rep.resamples;
    }
    const double n = static_cast<double>(train.size());

    const Mask arch = sampling ? argmax_mask(g, dist) : Mask::full(g);
    const bool connected = is_output_connected(g, arch);
    double val_acc = std::nan(""), val_cost = std::nan("");
    if (connected) {
      val_cost = log_cost.evaluate(g, arch);
      if (!val.empty()) val_acc = accuracy(g, arch, params, val);
    }
    const double ent = entropy(g, dist);

    nlohmann::ordered_json r;
    r["record"] = "epoch";
    r["epoch"] = epoch + 1;
    r["phase"] = sampling ? "sampling" : "burn-in";
    r["lr"] = lr;
    r["train_loss"] = number(loss / n);
    r["train_objective"] = number(objective / n);
    r["mean_cost"] = number(cost / n);
    r["mean_penalty"] = number(penalty / n);
    r["substituted"] = substituted;
    r["resamples"] = resamples;
    r["entropy"] = number(ent);
    r["entropy_per_edge"] = number(ent / sampled_edges);
    if (enumerable) r["sampling_entropy"] = number(sampling_entropy(g, dist));
    r["argmax_connected"] = connected;
    r["argmax_mask"] = mask_bits(arch);
    r["val_accuracy"] = number(val_acc);
    r["val_cost"] = number(val_cost);
    std::vector<double> gammas(g.num_edges());
    for (int e = 0; e < g.num_edges(); ++e) gammas[e] = dist.gamma(e);
    r["gamma"] = gammas;
    log.records.push_back(with_echo(r));

    if (sampling && connected && !val.empty()) {
      auto it = std::find_if(log.checkpoints.begin(), log.checkpoints.end(), [&](const CheckpointEntry& c) { return c.mask == arch; });
      if (it == log.checkpoints.end()) {
        log.checkpoints.push_back({epoch + 1, arch, val_cost, val_acc, params, dist});
      } else if (val_acc > it->val_accuracy) {
        *it = CheckpointEntry{epoch + 1, arch, val_cost, val_acc, params, dist};
      }
    }
  }

  if (cfg.epochs > 0) {
    const Mask arch = argmax_mask(g, dist);
    const bool connected = is_output_connected(g, arch);
    nlohmann::ordered_json r;
    r["record"] = "summary";
    r["epochs"] = cfg.epochs;
    r["final_entropy"] = number(entropy(g, dist));
    if (enumerable) r["final_sampling_entropy"] = number(sampling_entropy(g, dist));
    r["final_mask"] = mask_bits(arch);
    r["final_connected"] = connected;
    r["final_cost"] = connected ? number(log_cost.evaluate(g, arch)) : nlohmann::ordered_json();
    r["final_val_accuracy"] = connected && !val.empty() ? number(accuracy(g, arch, params, val)) : nlohmann::ordered_json();
    r["checkpoints"] = log.checkpoints.size();
    log.records.push_back(with_echo(r));
  }

  if (opts.out_dir) {
    const auto& dir = *opts.out_dir;
    std::filesystem::create_directories(dir);
    write_text_file(dir / "log.jsonl", log.jsonl());
    save_checkpoint(dir / "final.bsnp", params);
    write_text_file(dir / "final.dist", serialize_distribution(g, dist));
    for (std::size_t i = 0; i < log.checkpoints.size(); ++i) {
      const CheckpointEntry& c = log.checkpoints[i];
      const std::string stem = "ckpt_" + std::to_string(i);
      save_checkpoint(dir / (stem + ".bsnp"), c.params);
      write_text_file(dir / (stem + ".dist"), serialize_distribution(g, c.dist));
      write_text_file(dir / (stem + ".mask"), serialize_mask(g, c.mask));
    }
  }
  return log;
}

OptimalityReport check_optimality(const SuperNetGraph& g, const BudgetConfig& budget, const Dataset& train,
                                  const OptimalityConfig& cfg) {
  constexpr int kLimit = 10;
  if (g.num_sampled_edges() > kLimit) {
    throw Error(Errc::TooLarge, std::to_string(g.num_sampled_edges()) + " candidate edges exceed the brute-force limit of " +
                                    std::to_string(kLimit));
  }
  if (!budget.cost.deterministic()) throw Error(Errc::InvalidConfig, "optimality check needs a deterministic cost");
  const std::uint64_t init_seed = derive_seed(cfg.train.seed, 0);

  std::vector<int> free_edges;
  for (int e = 0; e < g.num_edges(); ++e)
    if (!g.edge(e).fixed) free_edges.push_back(e);
  std::set<std::vector<std::uint8_t>> seen;
  OptimalityReport rep;
  rep.optimum = INFINITY;
  double worst = -INFINITY;
  for (std::uint64_t code = 0; code < (std::uint64_t{1} << free_edges.size()); ++code) {
    Mask h = Mask::full(g);
    for (std::size_t k = 0; k < free_edges.size(); ++k) h.bits[free_edges[k]] = (code >> k) & 1;
    if (!is_output_connected(g, h)) continue;
    const Mask live = live_edges(g, h);
    if (!seen.insert(live.bits).second) continue;
    Params p;
    init_parameters(g, p, init_seed);
    train_fixed(g, live, p, cfg.train, train);
    const double b = objective_D(g, live, p, budget, train).total;
    ++rep.architectures;
    if (b < rep.optimum) {
      rep.optimum = b;
      rep.optimum_mask = live;
    }
    worst = std::max(worst, b);
  }
  if (rep.architectures == 0) throw Error(Errc::NotConnected, "no connected architecture");
  rep.spread = worst - rep.optimum;
  rep.epsilon = cfg.epsilon_fraction * rep.spread;

  ArchitectureDistribution dist = ArchitectureDistribution::uniform_logit(g, cfg.train.logit_init, cfg.train.seed);
  Params p;
  init_parameters(g, p, init_seed);
  run_training(g, dist, p, budget, cfg.train, train, Dataset{});
  rep.final_mask = argmax_mask(g, dist);
  rep.final_connected = is_output_connected(g, rep.final_mask);
  if (rep.final_connected) {
    rep.final_objective = objective_D(g, rep.final_mask, p, budget, train).total;
    rep.gap = rep.final_objective - rep.optimum;
    rep.within_epsilon = rep.gap <= rep.epsilon;
  } else {
    rep.final_objective = rep.gap = INFINITY;
  }
  const double m = std::max(1, g.num_sampled_edges());
  rep.entropy_per_edge = entropy(g, dist) / m;
  rep.sampling_entropy_per_edge = sampling_entropy(g, dist) / m;
  return rep;
}

std::vector<double> lambda_grid(double max_cost, int count) {
  if (count < 1) throw Error(Errc::InvalidConfig, "lambda grid needs at least one value");
  if (!(max_cost >= 0.0)) throw Error(Errc::InvalidConfig, "max_cost must be >= 0");
  const double m = max_cost > 0.0 ? std::floor(std::log10(max_cost)) : 0.0;
  if (count == 1) return {std::pow(10.0, m)};
  std::vector<double> grid(count);
  for (int i = 0; i < count; ++i) grid[i] = std::pow(10.0, m - 1.0 + 2.0 * i / (count - 1));
  return grid;
}

}  // namespace bsn
