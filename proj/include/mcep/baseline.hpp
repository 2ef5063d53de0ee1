#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "mcep/common.hpp"
#include "mcep/decomposition.hpp"
#include "mcep/instance.hpp"
#include "mcep/milp.hpp"
#include "mcep/parallel.hpp"
#include "mcep/policy.hpp"
#include "mcep/scenarios.hpp"

namespace mcep {

// ---------------------------------------------------------------------------
// Inflexible benchmark: the capacity plan (K_0, ..., K_T) is committed up
// front and never reacts to demand. The plan minimizes the expected
// discounted cost and is found by Benders decomposition: fixing the plan
// decouples the allocation LPs per (scenario, period), and their duals give
// exact affine minorants of the expected negative profit, which is convex in
// the plan because each allocation profit is a concave LP value of its
// capacity right-hand side.

/// Affine minorant of a discounted negative allocation profit in the plan
/// variables: value(K) >= sum_{n,t} g(n,t) K[n][t] + offset for every plan,
/// with equality at the generating plan. Column T is always zero because
/// capacity installed in period t serves period t+1 onward.
struct BendersCut {
  Matrix g;                // N x (T+1), coefficient on K[n][t]
  double offset = 0.0;
  double gen_value = 0.0;  // discounted negative profit at the generating plan
  double gen_error = 0.0;  // |cut(plan) - gen_value| / (1 + |gen_value|)
  double slack = 0.0;      // epigraph value minus cut value at the latest master
  int scenario = -1;       // generating group (scenario in multicut mode); -1 for a sample average
};

struct BaselineParams {
  double tol = 1e-9;      // stop when ub - lb <= tol * (1 + |ub|)
  int max_iterations = 100;
  // One cut per scenario instead of the sample average. Converges in fewer
  // iterations but grows the master by S rows per round, so it is intended
  // for small scenario counts.
  bool multicut = false;
  // Middle ground: scenarios are bundled round-robin into this many groups,
  // each with its own epigraph and one cut per round. 1 keeps the plain
  // sample-average scheme; multicut overrides with one group per scenario.
  int cut_groups = 1;
  double master_gap_rel = 1e-9;
  long master_node_limit = -1;
  std::string dump_lp;  // when nonempty, write each master model here
};

struct BaselineIterationTrace {
  int iter = 0;
  double lb = 0.0, ub = 0.0;
  std::size_t cuts_active = 0;
  long nodes = 0;  // branch & bound nodes spent on this master
  double wall_ms = 0.0;
};

/// Pre-committed expansion schedule with its certificate: K[t][n] is the
/// capacity after the period-t build decision, nondecreasing in t.
struct InflexiblePlan {
  std::vector<std::vector<long long>> K;  // (T+1) x N
  double cost = kInf;    // expected discounted cost on the training sample
  double enpv = -kInf;   // -cost
  double lb = -kInf, ub = kInf;
  double gap = kInf;     // ub - lb at termination
  int iterations = 0;
  bool converged = false;
  std::vector<BaselineIterationTrace> trace;
  std::vector<BendersCut> cuts;  // final pool, slacks at the last master
};

/// Structural plan check: (T+1) x N, within [0, K_max], nondecreasing.
inline void validate_plan(const std::vector<std::vector<long long>>& plan,
                          const Instance& inst) {
  require(plan.size() == static_cast<std::size_t>(inst.T) + 1,
          "plan must cover periods 0..T");
  std::size_t N = static_cast<std::size_t>(inst.N);
  for (std::size_t t = 0; t < plan.size(); ++t) {
    require(plan[t].size() == N, "plan row must have one entry per facility");
    for (std::size_t n = 0; n < N; ++n) {
      require(plan[t][n] >= 0 && plan[t][n] <= inst.k_max[n],
              "plan capacity outside [0, K_max]");
      require(t == 0 || plan[t][n] >= plan[t - 1][n], "plan must be nondecreasing");
    }
  }
}

/// Deterministic spend of a plan: c0(K_0) + sum_t gamma^t c_t(K_t - K_{t-1}).
inline double plan_expansion_cost(const std::vector<std::vector<long long>>& plan,
                                  const Instance& inst) {
  validate_plan(plan, inst);
  std::size_t N = static_cast<std::size_t>(inst.N);
  double cost = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    cost += inst.cost(static_cast<int>(n), 0).eval(static_cast<double>(plan[0][n]));
  for (int t = 1; t <= inst.T; ++t)
    for (std::size_t n = 0; n < N; ++n) {
      auto tt = static_cast<std::size_t>(t);
      double dk = static_cast<double>(plan[tt][n] - plan[tt - 1][n]);
      cost += inst.discount(t) * inst.cost(static_cast<int>(n), t).eval(dk);
    }
  return cost;
}

/// Evaluates sum g.K + offset at a plan.
inline double cut_value(const BendersCut& cut, const std::vector<std::vector<long long>>& plan) {
  double v = cut.offset;
  for (std::size_t t = 0; t < cut.g.cols && t < plan.size(); ++t)
    for (std::size_t n = 0; n < cut.g.rows; ++n)
      v += cut.g(n, t) * static_cast<double>(plan[t][n]);
  return v;
}

/// Solves the plan's allocation LPs on one scenario and linearizes the
/// discounted negative profit through the duals. Capacity duals attach to
/// K[t-1] (installation lag); demand duals and penalties form the offset, so
/// the cut reproduces the scenario value exactly and weak duality makes it a
/// global minorant at every other plan.
inline BendersCut plan_scenario_cut(const std::vector<std::vector<long long>>& plan,
                                    const ScenarioSet& set, std::size_t s,
                                    const Instance& inst) {
  std::size_t N = static_cast<std::size_t>(inst.N), I = static_cast<std::size_t>(inst.I);
  BendersCut cut;
  cut.scenario = static_cast<int>(s);
  cut.g = Matrix(N, static_cast<std::size_t>(inst.T) + 1, 0.0);
  for (int t = 1; t <= inst.T; ++t) {
    auto tt = static_cast<std::size_t>(t);
    const double* xi_t = set.row(s, t);
    AllocationResult alloc = allocation_profit(plan[tt - 1], xi_t, t, inst);
    double disc = inst.discount(t);
    cut.gen_value -= disc * alloc.pi;
    for (std::size_t n = 0; n < N; ++n) cut.g(n, tt - 1) -= disc * alloc.mu[n];
    double dual_load = 0.0;
    for (std::size_t i = 0; i < I; ++i)
      dual_load += (alloc.psi[i] - inst.bt(t, static_cast<int>(i))) * xi_t[i];
    cut.offset -= disc * dual_load;
  }
  cut.gen_error =
      std::abs(cut_value(cut, plan) - cut.gen_value) / (1.0 + std::abs(cut.gen_value));
  return cut;
}

/// Sample average of per-scenario cuts: minorant of the expected discounted
/// negative profit, tight where every summand is tight.
inline BendersCut benders_cut(const std::vector<BendersCut>& per_scenario) {
  require(!per_scenario.empty(), "benders cut from an empty scenario set");
  BendersCut cut;
  cut.g = Matrix(per_scenario[0].g.rows, per_scenario[0].g.cols, 0.0);
  for (const BendersCut& c : per_scenario) {
    require(c.g.rows == cut.g.rows && c.g.cols == cut.g.cols, "mismatched cut shapes");
    for (std::size_t k = 0; k < cut.g.data.size(); ++k) cut.g.data[k] += c.g.data[k];
    cut.offset += c.offset;
    cut.gen_value += c.gen_value;
  }
  double inv = 1.0 / static_cast<double>(per_scenario.size());
  for (double& v : cut.g.data) v *= inv;
  cut.offset *= inv;
  cut.gen_value *= inv;
  return cut;
}

struct PlanMasterResult {
  std::vector<std::vector<long long>> plan;  // (T+1) x N
  double objective = 0.0;  // valid lower bound on the inflexible optimum
  bool proven = false;
  long nodes = 0;
};

/// Master MILP: nondecreasing integer plan with multiple-choice piecewise
/// expansion costs and an epigraph of the expected negative profit bounded
/// below by the cut pool. y_weights carries one epigraph weight per group
/// (a single 1.0 for the sample-average scheme); a cut binds its group's
/// epigraph, and group -1 cuts bind the weighted average. Fills each cut's
/// slack at the optimum. A rounding heuristic turns node relaxations (and
/// the optional hint plan) into incumbents, which matters because the
/// concave-cost encodings relax to their chords and leave the plain
/// best-bound search with weak pruning.
inline PlanMasterResult solve_plan_master(const Instance& inst, std::vector<BendersCut>& cuts,
                                          double y_floor, const std::vector<double>& y_weights,
                                          const BaselineParams& p,
                                          const std::vector<std::vector<long long>>* hint = nullptr) {
  std::size_t N = static_cast<std::size_t>(inst.N);
  std::size_t T = static_cast<std::size_t>(inst.T);
  std::size_t G = y_weights.size();
  require(G >= 1, "plan master needs at least one epigraph");
  LpModel m;
  std::vector<int> kv(N * (T + 1));
  for (std::size_t t = 0; t <= T; ++t)
    for (std::size_t n = 0; n < N; ++n)
      kv[n * (T + 1) + t] = m.add_int_var(0.0, static_cast<double>(inst.k_max[n]), 0.0,
                                          "K_" + std::to_string(n) + "_" + std::to_string(t));
  std::vector<detail_dec::CostEncoding> enc;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t <= T; ++t) {
      enc.push_back(detail_dec::add_cost_encoding(
          m, inst.cost(static_cast<int>(n), static_cast<int>(t)),
          static_cast<double>(inst.k_max[n]), inst.discount(static_cast<int>(t)),
          "c_" + std::to_string(n) + "_" + std::to_string(t)));
      // Capacity installed in period T never serves demand, so that step is
      // pinned to zero instead of being left to the search.
      if (t == T) detail_dec::pin_zero_expansion(m, enc.back());
      std::vector<std::pair<int, double>> link{{kv[n * (T + 1) + t], 1.0}};
      if (t > 0) link.push_back({kv[n * (T + 1) + t - 1], -1.0});
      for (int wi : enc.back().w) link.push_back({wi, -1.0});
      m.add_eq(0.0, link, "dk_" + std::to_string(n) + "_" + std::to_string(t));
    }

  std::vector<int> yv;
  for (std::size_t g = 0; g < G; ++g)
    yv.push_back(m.add_var(y_floor, kInf, y_weights[g], G == 1 ? "y" : "y_" + std::to_string(g)));

  for (std::size_t c = 0; c < cuts.size(); ++c) {
    const BendersCut& cut = cuts[c];
    std::vector<std::pair<int, double>> terms;
    if (cut.scenario >= 0) {
      require(static_cast<std::size_t>(cut.scenario) < G, "cut group outside the master");
      terms.push_back({yv[static_cast<std::size_t>(cut.scenario)], 1.0});
    } else {
      for (std::size_t g = 0; g < G; ++g) terms.push_back({yv[g], y_weights[g]});
    }
    for (std::size_t t = 0; t <= T; ++t)
      for (std::size_t n = 0; n < N; ++n)
        if (cut.g(n, t) != 0.0) terms.push_back({kv[n * (T + 1) + t], -cut.g(n, t)});
    m.add_ge(cut.offset, terms, "cut_" + std::to_string(c));
  }

  if (!p.dump_lp.empty()) {
    std::ofstream lpf(p.dump_lp);
    require(lpf.good(), "cannot open LP dump file: " + p.dump_lp);
    write_lp_format(m, lpf);
  }

  // Full assignment for a feasible plan: window selectors track each step,
  // epigraphs sit on their most binding cut (aggregate deficits are spread
  // uniformly, which preserves the per-scenario rows).
  auto plan_assignment = [&](const std::vector<std::vector<long long>>& plan) {
    std::vector<double> x(m.num_vars(), 0.0);
    for (std::size_t t = 0; t <= T; ++t)
      for (std::size_t n = 0; n < N; ++n)
        x[static_cast<std::size_t>(kv[n * (T + 1) + t])] = static_cast<double>(plan[t][n]);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t <= T; ++t) {
        const detail_dec::CostEncoding& e = enc[n * (T + 1) + t];
        double dk = static_cast<double>(t == 0 ? plan[0][n] : plan[t][n] - plan[t - 1][n]);
        for (std::size_t k = 0; k < e.windows.size(); ++k)
          if (dk >= e.windows[k].lo && dk <= e.windows[k].hi) {
            x[static_cast<std::size_t>(e.w[k])] = dk;
            x[static_cast<std::size_t>(e.tau[k])] = 1.0;
            break;
          }
      }
    for (int y : yv) x[static_cast<std::size_t>(y)] = y_floor;
    for (const BendersCut& cut : cuts) {
      double need = cut_value(cut, plan);
      if (cut.scenario >= 0) {
        double& ys = x[static_cast<std::size_t>(yv[static_cast<std::size_t>(cut.scenario)])];
        ys = std::max(ys, need);
      } else {
        double avg = 0.0;
        for (std::size_t g = 0; g < G; ++g)
          avg += y_weights[g] * x[static_cast<std::size_t>(yv[g])];
        if (avg < need)  // weights sum to one, so a uniform raise closes the deficit
          for (int y : yv) x[static_cast<std::size_t>(y)] += need - avg;
      }
    }
    return x;
  };

  MipParams mp;
  mp.lp = SimplexParams{};
  mp.gap_rel = p.master_gap_rel;
  mp.node_limit = p.master_node_limit;
  mp.priority.assign(m.num_vars(), 0);
  for (int j : kv) mp.priority[static_cast<std::size_t>(j)] = 2;
  for (const auto& e : enc)
    for (int ti : e.tau) mp.priority[static_cast<std::size_t>(ti)] = 1;
  bool hint_pending = hint != nullptr;
  std::vector<std::vector<long long>> rounded(T + 1, std::vector<long long>(N, 0));
  mp.heuristic = [&](const std::vector<double>& relax) -> std::optional<std::vector<double>> {
    if (hint_pending) {
      hint_pending = false;
      return plan_assignment(*hint);
    }
    for (std::size_t n = 0; n < N; ++n) {
      long long prev = 0;
      for (std::size_t t = 0; t <= T; ++t) {
        long long k = std::llround(relax[static_cast<std::size_t>(kv[n * (T + 1) + t])]);
        k = std::clamp(k, prev, inst.k_max[n]);
        rounded[t][n] = k;
        prev = k;
      }
    }
    return plan_assignment(rounded);
  };
  MipSolution sol = solve_milp(m, mp);
  require(sol.has_incumbent, "plan master found no feasible plan");

  PlanMasterResult out;
  out.plan.assign(T + 1, std::vector<long long>(N, 0));
  for (std::size_t t = 0; t <= T; ++t)
    for (std::size_t n = 0; n < N; ++n)
      out.plan[t][n] = std::llround(sol.x[static_cast<std::size_t>(kv[n * (T + 1) + t])]);
  out.objective = sol.bound;
  out.proven = sol.proven;
  out.nodes = sol.nodes;
  for (BendersCut& cut : cuts) {
    double y_val = 0.0;
    if (cut.scenario >= 0)
      y_val = sol.x[static_cast<std::size_t>(yv[static_cast<std::size_t>(cut.scenario)])];
    else
      for (std::size_t g = 0; g < G; ++g)
        y_val += y_weights[g] * sol.x[static_cast<std::size_t>(yv[g])];
    cut.slack = y_val - cut_value(cut, out.plan);
  }
  return out;
}

/// Benders loop for the inflexible benchmark: master proposes a plan, the
/// allocation LPs price it exactly and yield a new cut, and the bounds
/// squeeze until the relative gap closes. Terminates finitely because plans
/// are finite and a re-proposed plan closes the gap through its own cut.
inline InflexiblePlan solve_inflexible(const Instance& inst, const ScenarioSet& train,
                                       const BaselineParams& p = {}) {
  require(p.max_iterations >= 1, "at least one Benders iteration is required");
  require(p.tol >= 0.0, "tolerance must be nonnegative");
  require(p.cut_groups >= 1, "cut_groups must be at least 1");
  DerivedBounds bounds = derive_bounds(inst, train);
  double y_floor = -bounds.profit_ub - 1.0;

  // Scenario s feeds group s mod G; each group owns an epigraph weighted by
  // its sample share, so group cuts stay exact minorants of their average.
  std::size_t G =
      p.multicut ? train.S : std::min(static_cast<std::size_t>(p.cut_groups), train.S);
  std::vector<double> y_weights(G, 0.0);
  for (std::size_t s = 0; s < train.S; ++s) y_weights[s % G] += 1.0 / static_cast<double>(train.S);

  InflexiblePlan out;
  std::vector<BendersCut> cuts;
  for (int iter = 1; iter <= p.max_iterations; ++iter) {
    auto t0 = std::chrono::steady_clock::now();
    PlanMasterResult ms =
        solve_plan_master(inst, cuts, y_floor, y_weights, p, out.K.empty() ? nullptr : &out.K);
    out.lb = std::max(out.lb, ms.objective);

    std::vector<BendersCut> per_s(train.S);
    parallel_for(train.S,
                 [&](std::size_t s) { per_s[s] = plan_scenario_cut(ms.plan, train, s, inst); });
    double recourse = 0.0;
    for (const BendersCut& c : per_s) recourse += c.gen_value;
    recourse /= static_cast<double>(train.S);
    double cost = plan_expansion_cost(ms.plan, inst) + recourse;
    if (cost < out.ub) {
      out.ub = cost;
      out.K = ms.plan;
    }
    if (G == train.S) {
      cuts.insert(cuts.end(), per_s.begin(), per_s.end());
    } else if (G == 1) {
      cuts.push_back(benders_cut(per_s));
    } else {
      std::vector<BendersCut> bucket;
      for (std::size_t g = 0; g < G; ++g) {
        bucket.clear();
        for (std::size_t s = g; s < train.S; s += G) bucket.push_back(per_s[s]);
        cuts.push_back(benders_cut(bucket));
        cuts.back().scenario = static_cast<int>(g);
      }
    }

    out.iterations = iter;
    BaselineIterationTrace row;
    row.iter = iter;
    row.lb = ms.objective;
    row.ub = out.ub;
    row.cuts_active = cuts.size();
    row.nodes = ms.nodes;
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    out.trace.push_back(row);
    if (out.ub - out.lb <= p.tol * (1.0 + std::abs(out.ub))) {
      out.converged = true;
      break;
    }
  }
  out.cost = out.ub;
  out.enpv = -out.ub;
  out.gap = out.ub - out.lb;
  out.cuts = std::move(cuts);
  return out;
}

/// Plan persistence, header "t,n,K", full round-trip precision not needed
/// because capacities are integers.
inline void write_plan_csv(const std::vector<std::vector<long long>>& plan,
                           const std::string& path) {
  std::ofstream outf(path);
  require(outf.good(), "cannot open plan file for writing: " + path);
  outf << "t,n,K\n";
  for (std::size_t t = 0; t < plan.size(); ++t)
    for (std::size_t n = 0; n < plan[t].size(); ++n)
      outf << t << ',' << n << ',' << plan[t][n] << '\n';
  require(outf.good(), "failed writing plan file: " + path);
}

inline std::vector<std::vector<long long>> read_plan_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open plan file: " + path);
  std::string header;
  std::getline(in, header);
  require(header == "t,n,K", "plan file must start with header t,n,K");
  std::vector<std::vector<long long>> plan;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    char* end = nullptr;
    auto t = static_cast<std::size_t>(std::strtoull(line.c_str(), &end, 10));
    require(*end == ',', "malformed plan row: " + line);
    auto n = static_cast<std::size_t>(std::strtoull(end + 1, &end, 10));
    require(*end == ',', "malformed plan row: " + line);
    long long k = std::strtoll(end + 1, &end, 10);
    if (plan.size() <= t) plan.resize(t + 1);
    if (plan[t].size() <= n) plan[t].resize(n + 1, -1);
    plan[t][n] = k;
  }
  require(!plan.empty(), "plan file has no rows: " + path);
  std::size_t N = plan[0].size();
  for (const auto& rowk : plan) {
    require(rowk.size() == N, "plan file is missing facilities in some period");
    for (long long k : rowk) require(k >= 0, "plan file is missing entries or has negatives");
  }
  return plan;
}

}  // namespace mcep
