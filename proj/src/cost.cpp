#include "bsn/cost.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <set>
#include <sstream>
#include <unordered_map>

namespace bsn {

double flops_cost(const SuperNetGraph& g, const Mask& h) {
  const Mask live = live_edges(g, h);
  double total = 0.0;
  for (int e = 0; e < g.num_edges(); ++e) {
    if (live[e]) total += g.edge(e).mult_adds;
  }
  return total;
}

double params_cost(const SuperNetGraph& g, const Mask& h) {
  const Mask live = live_edges(g, h);
  std::set<std::string> seen;
  double total = 0.0;
  for (int e = 0; e < g.num_edges(); ++e) {
    if (!live[e]) continue;
    const Edge& edge = g.edge(e);
    if (!edge.module.slot.empty() && !seen.insert(edge.module.slot).second) continue;
    total += edge.param_count;
  }
  return total;
}

namespace {

bool is_free(const Edge& e, const OpModel& model) { return model.identity_free && e.module.kind == ModuleKind::Identity; }

bool expands(const Edge& e, const OpModel& model) { return model.expand_blocks && e.module.kind == ModuleKind::BasicBlock; }

Mask require_connected(const SuperNetGraph& g, const Mask& h) {
  check_conforms(g, h);
  if (!is_output_connected(g, h)) throw Error(Errc::NotConnected, "output layer is not reachable under the mask");
  return live_edges(g, h);
}

// Longest path (in ops) from each op to the end, itself included.
std::vector<int> remaining_path(const std::vector<UnitOp>& ops) {
  std::vector<int> rank(ops.size(), 1);
  for (int i = static_cast<int>(ops.size()) - 1; i >= 0; --i) {
    for (int p : ops[i].preds) rank[p] = std::max(rank[p], rank[i] + 1);
  }
  return rank;
}

Schedule greedy(const std::vector<UnitOp>& ops, int machines) {
  const std::vector<int> rank = remaining_path(ops);
  std::vector<int> finished(ops.size(), 0);  // cycle, 0 = pending
  Schedule s{machines, 0, {}};
  std::size_t done = 0;
  for (int cycle = 1; done < ops.size(); ++cycle) {
    std::vector<int> ready;
    for (std::size_t i = 0; i < ops.size(); ++i) {
      if (finished[i]) continue;
      const bool ok = std::all_of(ops[i].preds.begin(), ops[i].preds.end(),
                                  [&](int p) { return finished[p] != 0 && finished[p] < cycle; });
      if (ok) ready.push_back(static_cast<int>(i));
    }
    std::stable_sort(ready.begin(), ready.end(), [&](int a, int b) {
      if (rank[a] != rank[b]) return rank[a] > rank[b];
      if (ops[a].edge != ops[b].edge) return ops[a].edge < ops[b].edge;
      return ops[a].step < ops[b].step;
    });
    const int take = std::min<int>(machines, static_cast<int>(ready.size()));
    for (int k = 0; k < take; ++k) {
      const int i = ready[k];
      finished[i] = cycle;
      s.ops.push_back({ops[i].edge, ops[i].step, k + 1, cycle});
      ++done;
    }
    s.makespan = cycle;
  }
  return s;
}

class BruteForce {
 public:
  BruteForce(const std::vector<UnitOp>& ops, int machines) : ops_(ops), machines_(machines), pred_mask_(ops.size(), 0) {
    for (std::size_t i = 0; i < ops.size(); ++i) {
      for (int p : ops[i].preds) pred_mask_[i] |= std::uint64_t{1} << p;
    }
    all_ = ops.size() == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << ops.size()) - 1;
  }

  Schedule solve() {
    Schedule s{machines_, best(0), {}};
    std::uint64_t state = 0;
    for (int cycle = 1; state != all_; ++cycle) {
      const std::uint64_t pick = memo_.at(state).second;
      int machine = 1;
      for (std::uint64_t m = pick; m; m &= m - 1) {
        const int i = std::countr_zero(m);
        s.ops.push_back({ops_[i].edge, ops_[i].step, machine++, cycle});
      }
      state |= pick;
    }
    return s;
  }

 private:
  int best(std::uint64_t state) {
    if (state == all_) return 0;
    if (auto it = memo_.find(state); it != memo_.end()) return it->second.first;
    std::vector<int> ready;
    for (std::size_t i = 0; i < ops_.size(); ++i) {
      if (!(state >> i & 1) && (pred_mask_[i] & ~state) == 0) ready.push_back(static_cast<int>(i));
    }
    // With unit durations some optimal schedule never idles a machine while
    // an op is ready, so only maximal picks are explored.
    const int k = std::min<int>(machines_, static_cast<int>(ready.size()));
    int best_len = INT32_MAX;
    std::uint64_t best_pick = 0;
    std::vector<int> idx(k);
    for (int j = 0; j < k; ++j) idx[j] = j;
    while (true) {
      std::uint64_t pick = 0;
      for (int j : idx) pick |= std::uint64_t{1} << ready[j];
      const int len = 1 + best(state | pick);
      if (len < best_len) {
        best_len = len;
        best_pick = pick;
      }
      int j = k - 1;
      while (j >= 0 && idx[j] == static_cast<int>(ready.size()) - k + j) --j;
      if (j < 0) break;
      ++idx[j];
      for (int t = j + 1; t < k; ++t) idx[t] = idx[t - 1] + 1;
    }
    memo_[state] = {best_len, best_pick};
    return best_len;
  }

  const std::vector<UnitOp>& ops_;
  int machines_;
  std::vector<std::uint64_t> pred_mask_;
  std::uint64_t all_ = 0;
  std::unordered_map<std::uint64_t, std::pair<int, std::uint64_t>> memo_;
};

}  // namespace

std::vector<UnitOp> unit_ops(const SuperNetGraph& g, const Mask& h, const OpModel& model) {
  const Mask live = require_connected(g, h);
  std::vector<UnitOp> ops;
  std::vector<std::vector<int>> ready_after(g.num_layers());
  for (int i = 1; i < g.num_layers(); ++i) {
    std::vector<int>& done = ready_after[i];
    for (int e : g.in_edges(i)) {
      if (!live[e]) continue;
      const Edge& edge = g.edge(e);
      const std::vector<int>& entry = ready_after[edge.src];
      const auto add = [&](int step, std::vector<int> preds) {
        ops.push_back({e, step, std::move(preds)});
        return static_cast<int>(ops.size()) - 1;
      };
      if (is_free(edge, model)) {
        done.insert(done.end(), entry.begin(), entry.end());
      } else if (expands(edge, model)) {
        const int conv1 = add(0, entry);
        done.push_back(add(1, {conv1}));
        if (basic_block_has_projection(edge.module)) done.push_back(add(2, entry));
      } else {
        done.push_back(add(0, entry));
      }
    }
    std::sort(done.begin(), done.end());
    done.erase(std::unique(done.begin(), done.end()), done.end());
  }
  return ops;
}

Schedule distributed_cost(const SuperNetGraph& g, const Mask& h, int machines, SchedulePolicy policy, const OpModel& model) {
  if (machines < 1) throw Error(Errc::InvalidConfig, "machine count must be at least 1");
  const std::vector<UnitOp> ops = unit_ops(g, h, model);
  if (policy == SchedulePolicy::GreedyList) return greedy(ops, machines);
  const int live = live_edges(g, h).count();
  if (live > kBruteForceEdgeLimit || ops.size() > 64) {
    throw Error(Errc::TooLargeForBruteForce, std::to_string(live) + " live edges exceed the brute-force limit of " +
                                                 std::to_string(kBruteForceEdgeLimit));
  }
  return BruteForce(ops, machines).solve();
}

std::optional<std::string> validate_schedule(const SuperNetGraph& g, const Mask& h, const Schedule& s, const OpModel& model) {
  const Mask live = require_connected(g, h);
  const auto where = [&](int e, int step) {
    return "edge (" + std::to_string(g.layer(g.edge(e).src).id) + "," + std::to_string(g.layer(g.edge(e).dst).id) +
           ") op " + std::to_string(step);
  };
  // cycle[e][step], 0 when absent
  std::vector<std::array<int, 3>> cycle(g.num_edges(), {0, 0, 0});
  std::set<std::pair<int, int>> slots;
  int last = 0;
  for (const ScheduledOp& op : s.ops) {
    if (op.edge < 0 || op.edge >= g.num_edges() || op.step < 0 || op.step > 2) return "unknown op in schedule";
    if (!live[op.edge]) return where(op.edge, op.step) + " is not a live edge";
    if (op.machine < 1 || op.machine > s.machines) return where(op.edge, op.step) + " uses machine out of range";
    if (op.cycle < 1) return where(op.edge, op.step) + " has cycle < 1";
    if (!slots.insert({op.machine, op.cycle}).second) return "machine " + std::to_string(op.machine) + " runs two ops in cycle " + std::to_string(op.cycle);
    if (cycle[op.edge][op.step]) return where(op.edge, op.step) + " scheduled twice";
    cycle[op.edge][op.step] = op.cycle;
    last = std::max(last, op.cycle);
  }
  if (last != s.makespan) return "makespan " + std::to_string(s.makespan) + " differs from last cycle " + std::to_string(last);

  std::vector<int> layer_ready(g.num_layers(), 0);
  for (int e = 0; e < g.num_edges(); ++e) {  // edges are sorted by destination
    if (!live[e]) continue;
    const Edge& edge = g.edge(e);
    const int start = layer_ready[edge.src];
    std::vector<int> steps;
    if (edge.module.kind == ModuleKind::Identity && model.identity_free) {
      // no ops
    } else if (edge.module.kind == ModuleKind::BasicBlock && model.expand_blocks) {
      steps = {0, 1};
      if (basic_block_has_projection(edge.module)) steps.push_back(2);
    } else {
      steps = {0};
    }
    int finish = start;
    for (int step = 0; step < 3; ++step) {
      const bool expected = std::find(steps.begin(), steps.end(), step) != steps.end();
      const int c = cycle[e][step];
      if (!expected) {
        if (c) return where(e, step) + " is not an op of this edge";
        continue;
      }
      if (!c) return where(e, step) + " is missing";
      const int after = step == 1 ? cycle[e][0] : start;
      if (c <= after) return where(e, step) + " runs before its inputs are ready";
      finish = std::max(finish, c);
    }
    layer_ready[edge.dst] = std::max(layer_ready[edge.dst], finish);
  }
  return std::nullopt;
}

std::string schedule_csv(const SuperNetGraph& g, const Schedule& s) {
  std::ostringstream out;
  out << "edge_src,edge_dst,op,machine,cycle\n";
  for (const ScheduledOp& op : s.ops) {
    out << g.layer(g.edge(op.edge).src).id << ',' << g.layer(g.edge(op.edge).dst).id << ',' << op.step << ','
        << op.machine << ',' << op.cycle << '\n';
  }
  return out.str();
}

CostEvaluator CostEvaluator::flops() {
  CostEvaluator c;
  c.kind_ = CostKind::Flops;
  return c;
}

CostEvaluator CostEvaluator::params() {
  CostEvaluator c;
  c.kind_ = CostKind::Params;
  return c;
}

CostEvaluator CostEvaluator::distributed(int machines, SchedulePolicy policy) {
  if (machines < 1) throw Error(Errc::InvalidConfig, "machine count must be at least 1");
  CostEvaluator c;
  c.kind_ = CostKind::Distributed;
  c.machines_ = machines;
  c.policy_ = policy;
  return c;
}

CostEvaluator CostEvaluator::stochastic(const CostEvaluator& base, NoiseSpec noise, std::uint64_t seed) {
  if (noise.scale < 0.0) throw Error(Errc::InvalidConfig, "noise scale must be non-negative");
  CostEvaluator c;
  c.kind_ = CostKind::Stochastic;
  c.base_ = std::make_shared<const CostEvaluator>(base);
  c.noise_ = noise;
  c.rng_ = Rng(seed);
  return c;
}

double CostEvaluator::evaluate(const SuperNetGraph& g, const Mask& h) const {
  check_conforms(g, h);
  switch (kind_) {
    case CostKind::Flops:
      return flops_cost(g, h);
    case CostKind::Params:
      return params_cost(g, h);
    case CostKind::Distributed:
      return distributed_cost(g, h, machines_, policy_).makespan;
    case CostKind::Stochastic: {
      const double base = base_->evaluate(g, h);
      double noise = 0.0;
      if (noise_.kind == NoiseKind::Uniform) noise = rng_.uniform(-noise_.scale, noise_.scale);
      if (noise_.kind == NoiseKind::Gaussian) noise = noise_.scale * rng_.normal();
      return std::max(0.0, base + noise);
    }
  }
  return 0.0;
}

std::string CostEvaluator::unit() const {
  switch (kind_) {
    case CostKind::Flops:
      return "mult-adds";
    case CostKind::Params:
      return "params";
    case CostKind::Distributed:
      return "cycles";
    case CostKind::Stochastic:
      return base_->unit();
  }
  return "";
}

std::string CostEvaluator::name() const {
  switch (kind_) {
    case CostKind::Flops:
      return "flops";
    case CostKind::Params:
      return "params";
    case CostKind::Distributed:
      return "distributed";
    case CostKind::Stochastic:
      return "stochastic-" + base_->name();
  }
  return "";
}

}  // namespace bsn
