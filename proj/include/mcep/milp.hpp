#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <vector>

#include "mcep/common.hpp"
#include "mcep/lp.hpp"

namespace mcep {

enum class MipStatus { kOptimal, kInfeasible, kUnbounded, kNodeLimit };

struct MipParams {
  SimplexParams lp;
  double int_tol = 1e-6;
  double gap_abs = 1e-9;   // absolute optimality gap to prove
  double gap_rel = 1e-9;   // relative optimality gap to prove
  long node_limit = -1;    // < 0: unlimited
  std::vector<int> priority;  // per structural var, larger tier branches first
  // Given a node's LP-relaxation point, may propose a full integer-feasible
  // assignment; validated against the root model before acceptance.
  std::function<std::optional<std::vector<double>>(const std::vector<double>&)> heuristic;
  int heuristic_period = 1;  // node stride between heuristic calls
};

struct MipSolution {
  MipStatus status = MipStatus::kInfeasible;
  bool has_incumbent = false;
  bool proven = false;
  double obj = 0.0;    // incumbent objective, user sense
  double bound = 0.0;  // best possible objective, user sense
  std::vector<double> x;
  long nodes = 0;
  long lp_iterations = 0;
};

/// Branch & bound over the bounded-simplex: best-bound node pool with DFS
/// plunging (keeps the basis warm), most-fractional branching inside the
/// highest priority tier, deterministic tie-breaks by variable/node index.
class BranchAndBound {
 public:
  BranchAndBound(const LpModel& model, MipParams params)
      : model_(model), params_(std::move(params)), lp_(model, params_.lp) {
    n_ = model.num_vars();
    sense_max_ = model.sense == LpModel::Sense::kMax;
    root_lb_ = model.lb;
    root_ub_ = model.ub;
    for (std::size_t j = 0; j < n_; ++j) {
      if (!model.is_int[j]) continue;
      if (root_lb_[j] > -kInf) root_lb_[j] = std::ceil(root_lb_[j] - params_.int_tol);
      if (root_ub_[j] < kInf) root_ub_[j] = std::floor(root_ub_[j] + params_.int_tol);
    }
    if (params_.priority.empty()) params_.priority.assign(n_, 0);
    require(params_.priority.size() == n_, "branch priority must cover every variable");
  }

  MipSolution solve() {
    MipSolution out;
    nodes_.push_back(Node{-1, -1, 0.0, 0.0, -kInf});
    stack_.push_back(0);

    while (!stack_.empty() || !pool_.empty()) {
      if (params_.node_limit >= 0 && out.nodes >= params_.node_limit) {
        hit_limit_ = true;
        break;
      }
      int id = pop_next();
      if (prunable(nodes_[static_cast<std::size_t>(id)].bound)) continue;
      ++out.nodes;

      apply_bounds(id);
      LpSolution rel = out.nodes == 1 ? lp_.solve() : lp_.resolve_dual();
      out.lp_iterations += rel.iterations;
      if (rel.status == LpStatus::kIterLimit) throw McepError("branch & bound: LP iteration limit");
      if (rel.status == LpStatus::kInfeasible) continue;
      if (rel.status == LpStatus::kUnbounded) {
        if (out.nodes == 1) {
          out.status = MipStatus::kUnbounded;
          return out;
        }
        continue;  // cannot happen with bounded integers; defensive
      }
      double node_obj = to_min(rel.obj);
      Node& nd = nodes_[static_cast<std::size_t>(id)];
      nd.bound = std::max(nd.bound, node_obj);
      if (prunable(nd.bound)) continue;

      double parent_bound = nd.bound;  // nodes_ may reallocate below

      if (params_.heuristic && (out.nodes - 1) % std::max(1, params_.heuristic_period) == 0) {
        if (auto prop = params_.heuristic(rel.x)) try_incumbent(*prop);
      }

      int bv = pick_branch_var(rel.x);
      if (bv < 0) {
        // Integral within tolerance. The raw point may still fail the exact
        // root-model validation when a vertex parks its slack in an integer
        // column; re-optimizing the continuous variables with the integers
        // fixed at their rounded values recovers an exactly integral point.
        if (try_incumbent(rel.x)) continue;
        if (polish_incumbent(rel.x)) continue;
        if (!split_near_integral(id, rel.x, parent_bound)) hit_limit_ = true;
        continue;
      }
      double f = rel.x[static_cast<std::size_t>(bv)];
      double lo_child_ub = std::floor(f);
      double hi_child_lb = lo_child_ub + 1.0;
      bool up_first = f - lo_child_ub >= 0.5;
      push_children(id, bv, cur_lb_[static_cast<std::size_t>(bv)], lo_child_ub, hi_child_lb,
                    cur_ub_[static_cast<std::size_t>(bv)], parent_bound, up_first);
    }

    out.has_incumbent = best_ < kInf;
    double open_bound = best_;
    for (int id : stack_) open_bound = std::min(open_bound, nodes_[static_cast<std::size_t>(id)].bound);
    if (!pool_.empty()) open_bound = std::min(open_bound, pool_.begin()->first);
    out.proven = !hit_limit_ && stack_.empty() && pool_.empty();
    if (!out.has_incumbent) {
      out.status = out.proven ? MipStatus::kInfeasible : MipStatus::kNodeLimit;
      out.bound = from_min(open_bound);
      return out;
    }
    out.obj = from_min(best_);
    out.bound = from_min(out.proven ? best_ : open_bound);
    out.x = x_best_;
    out.status = out.proven ? MipStatus::kOptimal : MipStatus::kNodeLimit;
    return out;
  }

 private:
  struct Node {
    int parent;
    int var;          // changed variable, -1 at root
    double lo, hi;    // its bounds in this node's subproblem
    double bound;     // known lower bound (min sense) inherited from parent
  };

  const LpModel& model_;
  MipParams params_;
  Simplex lp_;
  std::size_t n_ = 0;
  bool sense_max_ = false;
  std::vector<double> root_lb_, root_ub_, cur_lb_, cur_ub_;
  std::vector<Node> nodes_;
  std::vector<int> stack_;
  std::set<std::pair<double, int>> pool_;  // (bound, id), deterministic order
  double best_ = kInf;                     // incumbent objective, min sense
  std::vector<double> x_best_;
  bool hit_limit_ = false;

  double to_min(double user) const { return sense_max_ ? -user : user; }
  double from_min(double internal) const { return sense_max_ ? -internal : internal; }

  bool prunable(double bound_min) const {
    if (best_ >= kInf) return false;
    double tol = std::max(params_.gap_abs, params_.gap_rel * std::abs(best_));
    return bound_min >= best_ - tol;
  }

  int pop_next() {
    if (!stack_.empty()) {
      int id = stack_.back();
      stack_.pop_back();
      return id;
    }
    auto it = pool_.begin();
    int id = it->second;
    pool_.erase(it);
    return id;
  }

  int new_node(int parent, int var, double lo, double hi, double bound) {
    nodes_.push_back(Node{parent, var, lo, hi, bound});
    return static_cast<int>(nodes_.size()) - 1;
  }

  /// Creates the down ([lo, lo_ub]) and up ([hi_lb, hi]) children, skipping any
  /// empty interval; the preferred side plunges via the DFS stack, the other
  /// waits in the best-bound pool.
  void push_children(int id, int var, double lo, double lo_ub, double hi_lb, double hi,
                     double parent_bound, bool up_first) {
    int down = lo <= lo_ub ? new_node(id, var, lo, lo_ub, parent_bound) : -1;
    int up = hi_lb <= hi ? new_node(id, var, hi_lb, hi, parent_bound) : -1;
    int first = up_first ? up : down;
    int second = up_first ? down : up;
    if (first < 0) std::swap(first, second);
    if (second >= 0) pool_.insert({parent_bound, second});
    if (first >= 0) stack_.push_back(first);
  }

  /// Refines a node whose LP optimum is integral within tolerance but fails
  /// exact validation: splits the least integral variable's box at a point
  /// next to its rounded value ([lb, s-1] | [s, hi]), so one side pins the
  /// noisy coordinate against an exact integer bound. Any interior split point
  /// strictly shrinks both children, so the recursion terminates. Returns
  /// false only when every integer variable is already fixed.
  bool split_near_integral(int id, const std::vector<double>& x, double parent_bound) {
    int best_var = -1;
    double best_dist = -1.0;
    for (std::size_t j = 0; j < n_; ++j) {
      if (!model_.is_int[j]) continue;
      if (cur_lb_[j] >= cur_ub_[j]) continue;  // fixed: nothing left to split
      double dist = std::abs(x[j] - std::round(x[j]));
      if (dist > best_dist) {
        best_var = static_cast<int>(j);
        best_dist = dist;
      }
    }
    if (best_var < 0) return false;
    std::size_t j = static_cast<std::size_t>(best_var);
    double lo = cur_lb_[j], hi = cur_ub_[j];
    double s = std::min(std::max(std::round(x[j]), lo + 1.0), hi);
    push_children(id, best_var, lo, s - 1.0, s, hi, parent_bound, x[j] >= s - 0.5);
    return true;
  }

  /// Fixes every integer variable at its rounded LP value (clamped to the
  /// node's bounds) and re-optimizes the continuous rest; a feasible result is
  /// offered as incumbent. The working LP keeps the tightened bounds, which is
  /// harmless: the next node rebuilds all bounds before solving.
  bool polish_incumbent(const std::vector<double>& x_rel) {
    for (std::size_t j = 0; j < n_; ++j) {
      if (!model_.is_int[j]) continue;
      double r = std::round(x_rel[j]);
      r = std::min(std::max(r, cur_lb_[j]), cur_ub_[j]);
      lp_.set_bounds(j, r, r);
    }
    LpSolution fixed = lp_.resolve_dual();
    if (fixed.status != LpStatus::kOptimal) return false;
    return try_incumbent(fixed.x);
  }

  void apply_bounds(int id) {
    cur_lb_ = root_lb_;
    cur_ub_ = root_ub_;
    std::vector<int> path;
    for (int at = id; at > 0; at = nodes_[static_cast<std::size_t>(at)].parent)
      path.push_back(at);
    for (auto it = path.rbegin(); it != path.rend(); ++it) {
      const Node& nd = nodes_[static_cast<std::size_t>(*it)];
      std::size_t j = static_cast<std::size_t>(nd.var);
      cur_lb_[j] = std::max(cur_lb_[j], nd.lo);
      cur_ub_[j] = std::min(cur_ub_[j], nd.hi);
    }
    for (std::size_t j = 0; j < n_; ++j) lp_.set_bounds(j, cur_lb_[j], cur_ub_[j]);
  }

  int pick_branch_var(const std::vector<double>& x) const {
    int best_var = -1;
    int best_tier = 0;
    double best_score = -1.0;
    for (std::size_t j = 0; j < n_; ++j) {
      if (!model_.is_int[j]) continue;
      double frac = x[j] - std::floor(x[j]);
      double dist = std::min(frac, 1.0 - frac);
      if (dist <= params_.int_tol) continue;
      int tier = params_.priority[j];
      double score = dist;
      if (best_var < 0 || tier > best_tier || (tier == best_tier && score > best_score + 1e-12)) {
        best_var = static_cast<int>(j);
        best_tier = tier;
        best_score = score;
      }
    }
    return best_var;
  }

  /// Accepts a proposed point if it is feasible for the root model; rounding
  /// of near-integral coordinates is applied before checking. Returns whether
  /// the point passed validation (it may still not improve the incumbent).
  bool try_incumbent(const std::vector<double>& x_raw) {
    if (x_raw.size() != n_) return false;
    std::vector<double> x = x_raw;
    for (std::size_t j = 0; j < n_; ++j) {
      if (!model_.is_int[j]) continue;
      double r = std::round(x[j]);
      if (std::abs(x[j] - r) > params_.int_tol) return false;
      x[j] = r;
    }
    for (std::size_t j = 0; j < n_; ++j) {
      double tol = 1e-7 * (1.0 + std::abs(x[j]));
      if (x[j] < root_lb_[j] - tol || x[j] > root_ub_[j] + tol) return false;
    }
    for (std::size_t i = 0; i < model_.num_rows(); ++i) {
      double act = 0.0;
      for (const auto& [j, v] : model_.row_terms[i]) act += v * x[static_cast<std::size_t>(j)];
      double tol = 1e-7 * (1.0 + std::abs(act));
      if (act < model_.rows[i].lo - tol || act > model_.rows[i].hi + tol) return false;
    }
    double obj = 0.0;
    for (std::size_t j = 0; j < n_; ++j) obj += model_.obj[j] * x[j];
    double obj_min = to_min(obj);
    if (obj_min < best_ - 1e-12) {
      best_ = obj_min;
      x_best_ = x;
    }
    return true;
  }
};

inline MipSolution solve_milp(const LpModel& model, MipParams params = {}) {
  BranchAndBound bnb(model, std::move(params));
  return bnb.solve();
}

}  // namespace mcep
