#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcep/common.hpp"
#include "mcep/instance.hpp"
#include "mcep/lp.hpp"
#include "mcep/scenarios.hpp"

namespace mcep {

/// If-then policy parameters. theta2 is N x (T+1); column t is the trigger
/// threshold used at period t (t >= 1).
struct PolicyParams {
  std::vector<long long> K0;
  double u = 0.0;
  std::vector<long long> theta1;
  Matrix theta2;
};

struct AllocationResult {
  double pi = 0.0;              // optimal profit, penalty included
  std::vector<double> mu;       // capacity duals, money per capacity unit
  std::vector<double> psi;      // demand duals, money per demand unit
  Matrix z;                     // allocation, customer x facility, demand units
  LpResiduals residuals;
};

/// One simulated scenario: capacities, triggers, allocation profits with
/// duals, and the discounted cost fold.
struct Trajectory {
  Matrix K;        // N x (T+1)
  Matrix delta;    // N x (T+1), opening indicator (0/1), column 0 all zero
  Matrix delta_K;  // N x (T+1), expansion amounts, column 0 equals K0
  std::vector<double> pi;                   // per period, index 0 unused
  Matrix psi;                               // (T+1) x I
  Matrix mu;                                // (T+1) x N, capacity-unit duals
  std::vector<Matrix> z;                    // per period allocations
  std::vector<std::vector<long long>> rdem; // (T+1) x N rounded weighted demand
  double Q = 0.0;    // discounted cost
  double eta = 0.0;  // max(Q - u, 0)
};

struct TriggerCoeffs {
  Matrix h_K;      // N x (T+1)
  Matrix h_theta;  // N x (T+1)
  Matrix h_0;      // N x (T+1)
};

/// Decision rule: per facility, trigger iff the rounded weighted demand
/// exceeds current capacity by at least theta2 AND the target fits under
/// K_max; ties at the threshold fire.
inline std::pair<std::vector<long long>, std::vector<std::uint8_t>> apply_rule(
    const std::vector<long long>& k_prev, const double* xi_t,
    const std::vector<long long>& theta1, const double* theta2_t, const Instance& inst) {
  std::vector<long long> rdem = weighted_demand(inst.W, xi_t);
  std::size_t N = static_cast<std::size_t>(inst.N);
  std::vector<long long> k(N);
  std::vector<std::uint8_t> delta(N, 0);
  for (std::size_t n = 0; n < N; ++n) {
    long long target = rdem[n] + theta1[n];
    double gap = static_cast<double>(rdem[n] - k_prev[n]);
    if (gap >= theta2_t[n] && target <= inst.k_max[n]) {
      k[n] = target;
      delta[n] = 1;
    } else {
      k[n] = k_prev[n];
    }
  }
  return {std::move(k), std::move(delta)};
}

/// Allocation profit LP for period t: max sum (r+b) z - sum b xi subject to
/// per-customer supply and per-facility capacity unit_size*K. Returned mu is
/// already scaled to money per capacity unit.
inline AllocationResult allocation_profit(const std::vector<long long>& k_prev,
                                          const double* xi_t, int t, const Instance& inst) {
  std::size_t N = static_cast<std::size_t>(inst.N), I = static_cast<std::size_t>(inst.I);
  const Matrix& r = inst.rt(t);
  LpModel m;
  m.sense = LpModel::Sense::kMax;
  double penalty = 0.0;
  for (std::size_t i = 0; i < I; ++i) {
    penalty += inst.bt(t, static_cast<int>(i)) * xi_t[i];
    for (std::size_t n = 0; n < N; ++n)
      m.add_var(0.0, kInf, r(i, n) + inst.bt(t, static_cast<int>(i)));
  }
  for (std::size_t i = 0; i < I; ++i) {
    std::vector<std::pair<int, double>> terms;
    for (std::size_t n = 0; n < N; ++n) terms.push_back({static_cast<int>(i * N + n), 1.0});
    m.add_le(xi_t[i], terms);
  }
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<std::pair<int, double>> terms;
    for (std::size_t i = 0; i < I; ++i) terms.push_back({static_cast<int>(i * N + n), 1.0});
    m.add_le(inst.unit_size * static_cast<double>(k_prev[n]), terms);
  }
  LpSolution s = solve_lp(m);
  require(s.status == LpStatus::kOptimal, "allocation LP did not solve to optimality");
  AllocationResult out;
  out.pi = s.obj - penalty;
  out.z = Matrix(I, N);
  for (std::size_t i = 0; i < I; ++i)
    for (std::size_t n = 0; n < N; ++n) out.z(i, n) = s.x[i * N + n];
  out.psi.assign(I, 0.0);
  out.mu.assign(N, 0.0);
  for (std::size_t i = 0; i < I; ++i) out.psi[i] = s.duals[i];
  for (std::size_t n = 0; n < N; ++n) out.mu[n] = s.duals[I + n] * inst.unit_size;
  out.residuals = s.residuals;
  return out;
}

/// Sequential forward pass under the rule, folding the discounted cost
/// Q = c0(K0) + sum_t gamma^t (c_t(dK_t) - Pi_t).
inline Trajectory simulate_trajectory(const PolicyParams& params, const ScenarioSet& set,
                                      std::size_t s, const Instance& inst) {
  std::size_t N = static_cast<std::size_t>(inst.N), I = static_cast<std::size_t>(inst.I);
  int T = inst.T;
  Trajectory tr;
  tr.K = Matrix(N, static_cast<std::size_t>(T) + 1);
  tr.delta = Matrix(N, static_cast<std::size_t>(T) + 1);
  tr.delta_K = Matrix(N, static_cast<std::size_t>(T) + 1);
  tr.pi.assign(static_cast<std::size_t>(T) + 1, 0.0);
  tr.psi = Matrix(static_cast<std::size_t>(T) + 1, I);
  tr.mu = Matrix(static_cast<std::size_t>(T) + 1, N);
  tr.z.assign(static_cast<std::size_t>(T) + 1, Matrix(I, N));
  tr.rdem.assign(static_cast<std::size_t>(T) + 1, std::vector<long long>(N, 0));

  std::vector<long long> k_prev = params.K0;
  double q = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    require(params.K0[n] >= 0 && params.K0[n] <= inst.k_max[n], "K0 outside [0, K_max]");
    tr.K(n, 0) = static_cast<double>(params.K0[n]);
    tr.delta_K(n, 0) = static_cast<double>(params.K0[n]);
    q += inst.cost(static_cast<int>(n), 0).eval(static_cast<double>(params.K0[n]));
  }
  tr.rdem[0] = weighted_demand(inst.W, set.row(s, 0));

  for (int t = 1; t <= T; ++t) {
    const double* xi_t = set.row(s, t);
    std::vector<double> th2(N);
    for (std::size_t n = 0; n < N; ++n) th2[n] = params.theta2(n, static_cast<std::size_t>(t));
    auto [k_t, delta_t] = apply_rule(k_prev, xi_t, params.theta1, th2.data(), inst);
    tr.rdem[static_cast<std::size_t>(t)] = weighted_demand(inst.W, xi_t);
    double period_cost = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      double dk = static_cast<double>(k_t[n] - k_prev[n]);
      require(dk >= 0.0, "capacity must be nondecreasing");
      tr.K(n, static_cast<std::size_t>(t)) = static_cast<double>(k_t[n]);
      tr.delta(n, static_cast<std::size_t>(t)) = delta_t[n];
      tr.delta_K(n, static_cast<std::size_t>(t)) = dk;
      period_cost += inst.cost(static_cast<int>(n), t).eval(dk);
    }
    // Capacity installed in period t comes online with a one-period lag, so
    // period t's demand is served by the pre-adjustment capacity.
    AllocationResult alloc = allocation_profit(k_prev, xi_t, t, inst);
    tr.pi[static_cast<std::size_t>(t)] = alloc.pi;
    for (std::size_t i = 0; i < I; ++i) tr.psi(static_cast<std::size_t>(t), i) = alloc.psi[i];
    for (std::size_t n = 0; n < N; ++n) tr.mu(static_cast<std::size_t>(t), n) = alloc.mu[n];
    tr.z[static_cast<std::size_t>(t)] = std::move(alloc.z);
    q += inst.discount(t) * (period_cost - alloc.pi);
    k_prev = k_t;
  }
  tr.Q = q;
  tr.eta = std::max(q - params.u, 0.0);
  return tr;
}

/// Closed-form trigger coefficients: K[n][t] = h_K*K0 + h_theta*theta1 + h_0.
/// Conventions: h_K[n][0] = 1, h_theta[n][0] = h_0[n][0] = 0.
inline TriggerCoeffs trigger_coefficients(const Matrix& delta,
                                          const std::vector<std::vector<long long>>& rdem) {
  std::size_t N = delta.rows, cols = delta.cols;
  TriggerCoeffs c;
  c.h_K = Matrix(N, cols);
  c.h_theta = Matrix(N, cols);
  c.h_0 = Matrix(N, cols);
  for (std::size_t n = 0; n < N; ++n) {
    c.h_K(n, 0) = 1.0;
    for (std::size_t t = 1; t < cols; ++t) {
      double keep = 1.0 - delta(n, t);
      c.h_K(n, t) = keep * c.h_K(n, t - 1);
      c.h_theta(n, t) = keep * c.h_theta(n, t - 1) + delta(n, t);
      c.h_0(n, t) = keep * c.h_0(n, t - 1) + delta(n, t) * static_cast<double>(rdem[t][n]);
    }
  }
  return c;
}

/// Discounted cost of a fixed capacity plan (used by the inflexible baseline).
/// Capacity comes online with a one-period lag: period t is served by plan[t-1].
inline double plan_discounted_cost(const std::vector<std::vector<long long>>& plan,
                                   const ScenarioSet& set, std::size_t s, const Instance& inst) {
  double q = 0.0;
  std::size_t N = static_cast<std::size_t>(inst.N);
  for (std::size_t n = 0; n < N; ++n)
    q += inst.cost(static_cast<int>(n), 0).eval(static_cast<double>(plan[0][n]));
  for (int t = 1; t <= inst.T; ++t) {
    double period_cost = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      double dk = static_cast<double>(plan[static_cast<std::size_t>(t)][n] -
                                      plan[static_cast<std::size_t>(t) - 1][n]);
      period_cost += inst.cost(static_cast<int>(n), t).eval(dk);
    }
    AllocationResult alloc =
        allocation_profit(plan[static_cast<std::size_t>(t) - 1], set.row(s, t), t, inst);
    q += inst.discount(t) * (period_cost - alloc.pi);
  }
  return q;
}

inline json policy_to_json(const PolicyParams& p) {
  json doc;
  doc["K0"] = p.K0;
  doc["u"] = p.u;
  doc["theta1"] = p.theta1;
  std::vector<std::vector<double>> th2(p.theta2.rows, std::vector<double>(p.theta2.cols));
  for (std::size_t n = 0; n < p.theta2.rows; ++n)
    for (std::size_t t = 0; t < p.theta2.cols; ++t) th2[n][t] = p.theta2(n, t);
  doc["theta2"] = th2;
  return doc;
}

inline PolicyParams policy_from_json(const json& doc) {
  PolicyParams p;
  p.K0 = doc.at("K0").get<std::vector<long long>>();
  p.u = doc.at("u").get<double>();
  p.theta1 = doc.at("theta1").get<std::vector<long long>>();
  auto th2 = doc.at("theta2").get<std::vector<std::vector<double>>>();
  require(!th2.empty(), "policy theta2 must be nonempty");
  p.theta2 = Matrix(th2.size(), th2[0].size());
  for (std::size_t n = 0; n < th2.size(); ++n) {
    require(th2[n].size() == p.theta2.cols, "ragged theta2 in policy file");
    for (std::size_t t = 0; t < p.theta2.cols; ++t) p.theta2(n, t) = th2[n][t];
  }
  return p;
}

inline void save_policy(const PolicyParams& p, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot open policy file for writing: " + path);
  out << policy_to_json(p).dump(2) << '\n';
}

inline PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open policy file: " + path);
  return policy_from_json(json::parse(in));
}

/// Debug dump of simulated trajectories (s,t,n,K,delta,PI,Q).
inline void write_trajectories_csv(const std::vector<Trajectory>& trs, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot open trajectory file for writing: " + path);
  out << "s,t,n,K,delta,PI,Q\n";
  for (std::size_t s = 0; s < trs.size(); ++s) {
    const Trajectory& tr = trs[s];
    for (std::size_t t = 0; t < tr.K.cols; ++t)
      for (std::size_t n = 0; n < tr.K.rows; ++n)
        out << s << ',' << t << ',' << n << ',' << fmt_full(tr.K(n, t)) << ','
            << static_cast<int>(tr.delta(n, t)) << ',' << fmt_full(tr.pi[t]) << ','
            << fmt_full(tr.Q) << '\n';
  }
}

}  // namespace mcep
