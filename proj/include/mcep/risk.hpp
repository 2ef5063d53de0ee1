#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "mcep/common.hpp"
#include "mcep/parallel.hpp"
#include "mcep/policy.hpp"

namespace mcep {

/// Nearest-rank percentile of a sorted (ascending) sample: the ceil(p*S)-th
/// smallest value, clamped to the sample range.
inline double percentile_nearest_rank(const std::vector<double>& sorted_vals, double p) {
  require(!sorted_vals.empty(), "percentile of empty sample");
  auto S = static_cast<double>(sorted_vals.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * S));
  rank = std::clamp<std::size_t>(rank, 1, sorted_vals.size());
  return sorted_vals[rank - 1];
}

/// Empirical value-at-risk of a loss sample at level alpha: the
/// ceil(alpha*S)-th order statistic.
inline double empirical_var(std::vector<double> losses, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
  std::sort(losses.begin(), losses.end());
  return percentile_nearest_rank(losses, alpha);
}

/// Empirical conditional value-at-risk via the shortfall form evaluated at the
/// empirical VaR: u + E[max(L-u,0)]/(1-alpha).  When alpha*S is integral this
/// equals the mean of the (1-alpha)*S largest losses exactly.
inline double empirical_cvar(const std::vector<double>& losses, double alpha) {
  double u = empirical_var(losses, alpha);
  double tail = 0.0;
  for (double v : losses) tail += std::max(v - u, 0.0);
  return u + tail / ((1.0 - alpha) * static_cast<double>(losses.size()));
}

/// Sample average of the risk-adjusted objective for discounted-cost outcomes
/// q[s] and threshold u (to be maximised):
///   -(1-beta)*u - (1/S) * sum_s [ beta*q_s + (1-beta)/(1-alpha) * max(q_s-u, 0) ].
inline double mean_cvar_objective(const std::vector<double>& q, double alpha, double beta,
                                  double u) {
  require(!q.empty(), "objective of empty sample");
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
  require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0,1]");
  double acc = 0.0;
  for (double v : q) acc += beta * v + (1.0 - beta) / (1.0 - alpha) * std::max(v - u, 0.0);
  return -(1.0 - beta) * u - acc / static_cast<double>(q.size());
}

/// Out-of-sample evaluation of a policy on a scenario set.
struct EvalReport {
  double beta = 0.0;
  double alpha = 0.0;
  std::vector<double> npvs;  ///< per-scenario net present value (= -cost)
  double min = 0.0;
  double p5 = 0.0;
  double enpv = 0.0;
  double p95 = 0.0;
  double max = 0.0;
  double cvar_cost = 0.0;  ///< CVaR_alpha of the discounted cost
  double objective = 0.0;  ///< risk-adjusted objective at the policy's threshold
  std::optional<double> vof;  ///< value of flexibility vs. a rigid baseline, if known
};

inline EvalReport evaluate_policy(const PolicyParams& params, const ScenarioSet& set,
                                  const Instance& inst, double alpha, double beta) {
  std::vector<double> q(set.S);
  parallel_for(set.S, [&](std::size_t s) { q[s] = simulate_trajectory(params, set, s, inst).Q; });

  EvalReport rep;
  rep.beta = beta;
  rep.alpha = alpha;
  rep.npvs.resize(set.S);
  for (std::size_t s = 0; s < set.S; ++s) rep.npvs[s] = -q[s];
  std::vector<double> sorted_npv = rep.npvs;
  std::sort(sorted_npv.begin(), sorted_npv.end());
  rep.min = sorted_npv.front();
  rep.max = sorted_npv.back();
  rep.p5 = percentile_nearest_rank(sorted_npv, 0.05);
  rep.p95 = percentile_nearest_rank(sorted_npv, 0.95);
  rep.enpv = sum(rep.npvs) / static_cast<double>(set.S);
  rep.cvar_cost = empirical_cvar(q, alpha);
  rep.objective = mean_cvar_objective(q, alpha, beta, params.u);
  return rep;
}

/// Evaluation of a pre-committed expansion plan; period t is served by
/// plan[t-1] (installation lag, as in plan_discounted_cost).
inline EvalReport evaluate_plan(const std::vector<std::vector<long long>>& plan,
                                const ScenarioSet& set, const Instance& inst, double alpha,
                                double beta) {
  std::vector<double> q(set.S);
  parallel_for(set.S, [&](std::size_t s) { q[s] = plan_discounted_cost(plan, set, s, inst); });

  EvalReport rep;
  rep.beta = beta;
  rep.alpha = alpha;
  rep.npvs.resize(set.S);
  for (std::size_t s = 0; s < set.S; ++s) rep.npvs[s] = -q[s];
  std::vector<double> sorted_npv = rep.npvs;
  std::sort(sorted_npv.begin(), sorted_npv.end());
  rep.min = sorted_npv.front();
  rep.max = sorted_npv.back();
  rep.p5 = percentile_nearest_rank(sorted_npv, 0.05);
  rep.p95 = percentile_nearest_rank(sorted_npv, 0.95);
  rep.enpv = sum(rep.npvs) / static_cast<double>(set.S);
  rep.cvar_cost = empirical_cvar(q, alpha);
  rep.objective = mean_cvar_objective(q, alpha, beta, empirical_var(q, alpha));
  return rep;
}

inline void write_report_csv(const std::string& path, const std::vector<EvalReport>& rows) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  require(f != nullptr, "cannot open report file: " + path);
  std::fputs("beta,alpha,min,p5,enpv,p95,max,cvar,vof\n", f);
  for (const EvalReport& r : rows) {
    std::string line = fmt_full(r.beta) + "," + fmt_full(r.alpha) + "," + fmt_full(r.min) + "," +
                       fmt_full(r.p5) + "," + fmt_full(r.enpv) + "," + fmt_full(r.p95) + "," +
                       fmt_full(r.max) + "," + fmt_full(r.cvar_cost) + "," +
                       (r.vof ? fmt_full(*r.vof) : std::string()) + "\n";
    std::fputs(line.c_str(), f);
  }
  std::fclose(f);
}

}  // namespace mcep
