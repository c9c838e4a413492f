#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bsn/graph.hpp"
#include "bsn/rng.hpp"

namespace bsn {

/// Mult-Adds of the live part of h (edges on some l_1 -> l_N path through h).
/// Edges carrying cost_meta report that instead of their own module cost.
double flops_cost(const SuperNetGraph& g, const Mask& h);

/// Parameter count of the live part of h; a shared slot is counted once.
double params_cost(const SuperNetGraph& g, const Mask& h);

enum class SchedulePolicy { GreedyList, BruteForceOptimal };

/// How an edge expands into unit-cycle operations for the distributed model.
///  - Identity edges take no cycle (unless identity_free is false).
///  - With expand_blocks, a BasicBlock is conv1 -> conv2 (two cycles in
///    sequence) plus, when it has one, a projection op parallel to them.
///  - Every other module is one op.
struct OpModel {
  bool identity_free = true;
  bool expand_blocks = true;
};

/// Unit operation of a live edge. step indexes the op inside its edge.
struct UnitOp {
  int edge = 0;
  int step = 0;
  std::vector<int> preds;  // indices into the op list
};

std::vector<UnitOp> unit_ops(const SuperNetGraph& g, const Mask& h, const OpModel& model = {});

struct ScheduledOp {
  int edge = 0;
  int step = 0;
  int machine = 1;  // 1-based
  int cycle = 1;    // 1-based
};

struct Schedule {
  int machines = 1;
  int makespan = 0;
  std::vector<ScheduledOp> ops;
};

constexpr int kBruteForceEdgeLimit = 12;

/// Schedules the live edges of h on n machines. GreedyList fills each cycle
/// with up to n ready ops by longest remaining path (ties: edge, then step).
/// BruteForceOptimal searches every maximal assignment, for at most
/// kBruteForceEdgeLimit live edges.
Schedule distributed_cost(const SuperNetGraph& g, const Mask& h, int machines, SchedulePolicy policy,
                          const OpModel& model = {});

/// Independent check of dependency and capacity constraints. Returns an
/// explanation of the first violation, or nullopt for a valid schedule.
std::optional<std::string> validate_schedule(const SuperNetGraph& g, const Mask& h, const Schedule& s,
                                             const OpModel& model = {});

/// CSV with header edge_src,edge_dst,op,machine,cycle (layer ids).
std::string schedule_csv(const SuperNetGraph& g, const Schedule& s);

enum class CostKind { Flops, Params, Distributed, Stochastic };
enum class NoiseKind { None, Uniform, Gaussian };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::None;
  double scale = 0.0;  // half-width for Uniform, standard deviation for Gaussian
};

class CostEvaluator {
 public:
  static CostEvaluator flops();
  static CostEvaluator params();
  static CostEvaluator distributed(int machines, SchedulePolicy policy = SchedulePolicy::GreedyList);
  /// base + zero-mean noise, clamped at 0, drawn from a stream seeded by seed.
  static CostEvaluator stochastic(const CostEvaluator& base, NoiseSpec noise, std::uint64_t seed);

  double evaluate(const SuperNetGraph& g, const Mask& h) const;

  CostKind kind() const { return kind_; }
  bool deterministic() const { return kind_ != CostKind::Stochastic || noise_.kind == NoiseKind::None; }
  std::string unit() const;
  std::string name() const;
  int machines() const { return machines_; }
  const CostEvaluator* base() const { return base_.get(); }

 private:
  CostKind kind_ = CostKind::Flops;
  int machines_ = 1;
  SchedulePolicy policy_ = SchedulePolicy::GreedyList;
  std::shared_ptr<const CostEvaluator> base_;
  NoiseSpec noise_;
  mutable Rng rng_{0};
};

}  // namespace bsn
