#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsn/cost.hpp"
#include "bsn/data.hpp"
#include "bsn/forward.hpp"
#include "bsn/sampler.hpp"

namespace bsn {

using Params = ParameterStore<double>;

struct BudgetConfig {
  double max_cost = 0.0;  // C
  double lambda = 1.0;
  CostEvaluator cost = CostEvaluator::flops();
};

void validate(const BudgetConfig& b);

/// lambda * max(0, cost - C)
double hinge_penalty(const BudgetConfig& b, double cost);

enum class BaselineMode { None, BatchMean, Ema };

/// Reference value D~ subtracted from D in the score-function estimator.
struct BaselineTracker {
  BaselineMode mode = BaselineMode::BatchMean;
  double decay = 0.9;
  double current = 0.0;
  bool initialized = false;

  /// Baseline to use for a batch with objective values d.
  double value_for(std::span<const double> d) const;
  /// Post-batch update (EMA only).
  void update(std::span<const double> d);
};

struct LrSchedule {
  double initial = 0.1;
  std::vector<int> decay_epochs;
  double factor = 0.1;
  double at(int epoch) const;  // epoch counts from 0
};

struct TrainConfig {
  int epochs = 30;
  int burn_in_epochs = 5;
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay_theta = 1e-4;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int resample_limit = 10;
  double logit_init = 3.0;
  double logit_lr_scale = 1.0;
  bool logit_lr_decay = true;  // follow the theta schedule
  BaselineMode baseline = BaselineMode::BatchMean;
  double ema_decay = 0.9;
};

void validate(const TrainConfig& c);

struct ObjectiveParts {
  double total = 0.0;  // D = loss + penalty
  double loss = 0.0;
  double penalty = 0.0;
  double cost = 0.0;
};

/// D for one example.
ObjectiveParts objective_D(const SuperNetGraph& g, const Mask& h, Params& params, const BudgetConfig& budget,
                           const TensorD& x, const TensorD& y, LossKind loss);

/// D with the loss averaged over a dataset; the cost is observed once.
ObjectiveParts objective_D(const SuperNetGraph& g, const Mask& h, Params& params, const BudgetConfig& budget,
                           const Dataset& data);

/// Sum over masks of P(H) * D(H) under the distribution of masks actually
/// used in training (disconnected draws resampled up to resample_limit
/// times, then the full mask). Needs a deterministic cost and at most
/// kBruteForceEdgeLimit sampled edges.
double exact_expected_objective(const SuperNetGraph& g, const ArchitectureDistribution& dist, Params& params,
                                const BudgetConfig& budget, const Dataset& data, int resample_limit);

/// One-sample score-function estimate: grad log P(H) * (D - baseline).
std::vector<double> gamma_gradient_estimate(const SuperNetGraph& g, const ArchitectureDistribution& dist,
                                            const SampleRecord& record, double d, double baseline);

double accuracy(const SuperNetGraph& g, const Mask& h, Params& params, const Dataset& data);
double mean_loss(const SuperNetGraph& g, const Mask& h, Params& params, const Dataset& data);

/// SGD with momentum; weight decay on theta only.
struct Sgd {
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::map<std::string, Eigen::VectorXd> velocity;
  std::vector<double> logit_velocity;

  void step_theta(Params& params, double lr);
  void step_logits(ArchitectureDistribution& dist, std::span<const double> grad, double lr);
};

enum class MaskMode { Full, Sampled, Fixed };

struct StepReport {
  int examples = 0;
  double mean_loss = 0.0;
  double mean_cost = 0.0;
  double mean_penalty = 0.0;
  double mean_objective = 0.0;
  double baseline = 0.0;
  double entropy = 0.0;
  int substituted = 0;
  int resamples = 0;
  std::vector<Mask> masks;  // per example
  std::vector<ObjectiveParts> parts;
  std::vector<std::uint8_t> eligible;  // sampled and used for the logit gradient
  std::vector<double> gamma_grad;
};

class Trainer {
 public:
  Trainer(const SuperNetGraph& g, ArchitectureDistribution& dist, Params& params, BudgetConfig budget, TrainConfig cfg);

  /// Per example: pick a mask (full, fixed or sampled with the resample
  /// rule), forward, D; theta gradients flow through the used subgraph only.
  /// Sampled steps also accumulate grad log P * (D - D~) for the logits,
  /// skipping substituted full masks. Then one optimizer update.
  StepReport train_step(const Dataset& data, std::span<const std::size_t> batch, MaskMode mode, double lr,
                        const Mask* fixed = nullptr, bool update_logits = true);

  /// Gradients only (no update); used by train_step.
  StepReport compute_gradients(const Dataset& data, std::span<const std::size_t> batch, MaskMode mode,
                               const Mask* fixed = nullptr);

  BaselineTracker& baseline() { return baseline_; }
  Sgd& optimizer() { return sgd_; }
  Rng& sample_rng() { return sample_rng_; }
  const TrainConfig& config() const { return cfg_; }
  const BudgetConfig& budget() const { return budget_; }

 private:
  const SuperNetGraph& g_;
  ArchitectureDistribution& dist_;
  Params& params_;
  BudgetConfig budget_;
  TrainConfig cfg_;
  BaselineTracker baseline_;
  Sgd sgd_;
  Rng sample_rng_;
};

/// Trains theta alone on a fixed mask (plain supervised SGD).
void train_fixed(const SuperNetGraph& g, const Mask& h, Params& params, const TrainConfig& cfg, const Dataset& train);

struct CheckpointEntry {
  int epoch = 0;
  Mask mask;
  double cost = 0.0;
  double val_accuracy = 0.0;
  Params params;
  ArchitectureDistribution dist;
};

struct TrainingLog {
  std::vector<nlohmann::ordered_json> records;  // init, per epoch, summary
  std::vector<CheckpointEntry> checkpoints;     // best per distinct argmax mask
  std::string jsonl() const;
};

struct RunOptions {
  nlohmann::ordered_json config_echo;  // copied into every record
  std::optional<std::filesystem::path> out_dir;
};

/// Burn-in on the full mask, then logits are set to logit_init and trained
/// jointly with theta. One record per epoch with train loss, mean cost,
/// entropy, and the argmax architecture's validation accuracy and cost.
TrainingLog run_training(const SuperNetGraph& g, ArchitectureDistribution& dist, Params& params, const BudgetConfig& budget,
                         const TrainConfig& cfg, const Dataset& train, const Dataset& val, const RunOptions& opts = {});

struct OptimalityConfig {
  TrainConfig train;
  double epsilon_fraction = 0.1;
};

struct OptimalityReport {
  int architectures = 0;
  double optimum = 0.0;  // B*
  Mask optimum_mask;
  double spread = 0.0;
  double epsilon = 0.0;
  Mask final_mask;
  bool final_connected = false;
  double final_objective = 0.0;  // B(H_final, theta_final)
  double gap = 0.0;
  bool within_epsilon = false;
  double entropy_per_edge = 0.0;
  double sampling_entropy_per_edge = 0.0;
};

/// Brute force over every distinct connected architecture (theta trained
/// per architecture with plain SGD for cfg.train.epochs), then a stochastic
/// run; compares the final argmax architecture with the optimum. Objectives
/// are mean training loss plus penalty.
OptimalityReport check_optimality(const SuperNetGraph& g, const BudgetConfig& budget, const Dataset& train,
                                  const OptimalityConfig& cfg);

/// count values log-spaced over [10^(m-1), 10^(m+1)], m = floor(log10 C).
std::vector<double> lambda_grid(double max_cost, int count);

}  // namespace bsn
