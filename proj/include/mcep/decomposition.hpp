#pragma once

// Decomposition machinery for the risk-adjusted flexible expansion model.
//
// The sample-average problem separates into a small first stage (initial
// capacity, risk threshold, expansion buffer) and per-scenario second stages
// that follow the trigger rule. This header provides:
//   - affine minorants of the scenario recourse, assembled from allocation
//     duals and the closed form of the trigger rule,
//   - single-scenario threshold problems and their stochastic-approximation
//     averaging,
//   - the first-stage master with subgradient and integer-optimality cuts,
//   - the outer loop tying these together, plus an improvement phase that
//     relaxes the cut pool when progress stalls,
//   - the exact scenario-coupled model for small-instance cross-checks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mcep/common.hpp"
#include "mcep/instance.hpp"
#include "mcep/lp.hpp"
#include "mcep/milp.hpp"
#include "mcep/parallel.hpp"
#include "mcep/policy.hpp"
#include "mcep/risk.hpp"
#include "mcep/rng.hpp"
#include "mcep/scenarios.hpp"

namespace mcep {

/// Weight of the shortfall term in the risk-adjusted objective.
inline double tail_weight(double alpha, double beta) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
  require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0,1]");
  return (1.0 - beta) / (1.0 - alpha);
}

/// Initial build cost c0(K0).
inline double initial_capacity_cost(const std::vector<long long>& K0, const Instance& inst) {
  double c = 0.0;
  for (std::size_t n = 0; n < K0.size(); ++n)
    c += inst.cost(static_cast<int>(n), 0).eval(static_cast<double>(K0[n]));
  return c;
}

// ---------------------------------------------------------------------------
// Affine functions of the first-stage point (K0, u, theta1)

struct AffineForm {
  std::vector<double> k0;
  double u = 0.0;
  std::vector<double> theta1;
  double offset = 0.0;

  AffineForm() = default;
  explicit AffineForm(std::size_t n) : k0(n, 0.0), theta1(n, 0.0) {}

  void axpy(double a, const AffineForm& o) {
    if (k0.empty() && theta1.empty()) {
      k0.assign(o.k0.size(), 0.0);
      theta1.assign(o.theta1.size(), 0.0);
    }
    require(k0.size() == o.k0.size() && theta1.size() == o.theta1.size(),
            "affine form: size mismatch");
    for (std::size_t n = 0; n < k0.size(); ++n) k0[n] += a * o.k0[n];
    for (std::size_t n = 0; n < theta1.size(); ++n) theta1[n] += a * o.theta1[n];
    u += a * o.u;
    offset += a * o.offset;
  }

  void scale(double a) {
    for (double& v : k0) v *= a;
    for (double& v : theta1) v *= a;
    u *= a;
    offset *= a;
  }

  double value_at(const std::vector<long long>& K0v, double uv,
                  const std::vector<long long>& th1) const {
    require(K0v.size() == k0.size() && th1.size() == theta1.size(),
            "affine form: point size mismatch");
    double v = offset + u * uv;
    for (std::size_t n = 0; n < k0.size(); ++n)
      v += k0[n] * static_cast<double>(K0v[n]) + theta1[n] * static_cast<double>(th1[n]);
    return v;
  }
  double value_at(const PolicyParams& p) const { return value_at(p.K0, p.u, p.theta1); }
};

/// Affine form of the period-t expansion cost along a simulated trajectory.
/// It is exact at the generating point: the cost is linear on the active
/// segment, and for the realized trigger pattern the capacity path is an
/// affine function of (K0, theta1). t = 0 gives the initial-build cost.
inline AffineForm cost_subgradient(const Trajectory& tr, const TriggerCoeffs& h, int t,
                                   const Instance& inst) {
  std::size_t N = tr.K.rows;
  AffineForm f(N);
  for (std::size_t n = 0; n < N; ++n) {
    const PiecewiseCost& c = inst.cost(static_cast<int>(n), t);
    std::size_t tt = static_cast<std::size_t>(t);
    double dk = tr.delta_K(n, tt);
    std::size_t l = c.segment_of(dk);
    if (t == 0) {
      f.k0[n] = c.p[l];
      f.offset += c.q[l];
    } else {
      f.k0[n] = c.p[l] * (h.h_K(n, tt) - h.h_K(n, tt - 1));
      f.theta1[n] = c.p[l] * (h.h_theta(n, tt) - h.h_theta(n, tt - 1));
      f.offset += c.p[l] * (h.h_0(n, tt) - h.h_0(n, tt - 1)) + c.q[l];
    }
  }
  return f;
}

/// Affine form of the period-t allocation profit from strong duality of the
/// allocation program. Capacity duals pair with the affine capacity of the
/// previous period (installation lag); demand duals and the penalty constant
/// enter the offset, so the form reproduces the profit exactly at the
/// generating point.
inline AffineForm profit_subgradient(const Trajectory& tr, const TriggerCoeffs& h, int t,
                                     const double* xi_t, const Instance& inst) {
  std::size_t N = tr.K.rows;
  std::size_t tt = static_cast<std::size_t>(t);
  require(t >= 1, "profit form needs t >= 1");
  AffineForm f(N);
  for (std::size_t n = 0; n < N; ++n) {
    double mu = tr.mu(tt, n);
    f.k0[n] = mu * h.h_K(n, tt - 1);
    f.theta1[n] = mu * h.h_theta(n, tt - 1);
    f.offset += mu * h.h_0(n, tt - 1);
  }
  for (std::size_t i = 0; i < static_cast<std::size_t>(inst.I); ++i)
    f.offset += (tr.psi(tt, i) - inst.bt(t, static_cast<int>(i))) * xi_t[i];
  return f;
}

struct RecourseGradient {
  AffineForm phi;
  double value = 0.0;
  bool eta_active = false;
};

/// Value and affine minorant of the scenario recourse
///   R = beta * (Q - c0(K0)) + w * max(Q - u, 0)
/// at the first-stage point the trajectory was simulated from. The shortfall
/// branch selects which affine pieces enter; both branches reproduce the
/// value exactly at the generating point.
inline RecourseGradient recourse_subgradient(const Trajectory& tr, const ScenarioSet& set,
                                             std::size_t s, const PolicyParams& at,
                                             double alpha, double beta, const Instance& inst) {
  std::size_t N = tr.K.rows;
  TriggerCoeffs h = trigger_coefficients(tr.delta, tr.rdem);
  AffineForm flow(N);  // sum_t gamma^t (cost_t - profit_t) = Q - c0
  for (int t = 1; t <= inst.T; ++t) {
    double g = inst.discount(t);
    flow.axpy(g, cost_subgradient(tr, h, t, inst));
    flow.axpy(-g, profit_subgradient(tr, h, t, set.row(s, t), inst));
  }
  double w = tail_weight(alpha, beta);
  RecourseGradient out;
  out.eta_active = tr.Q - at.u >= 0.0;
  out.phi = AffineForm(N);
  if (out.eta_active) {
    out.phi.axpy(beta + w, flow);
    out.phi.axpy(w, cost_subgradient(tr, h, 0, inst));
    out.phi.u -= w;
  } else {
    out.phi.axpy(beta, flow);
  }
  double c0 = initial_capacity_cost(at.K0, inst);
  out.value = beta * (tr.Q - c0) + w * std::max(tr.Q - at.u, 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Cuts

struct Cut {
  enum class Kind { kSubgradient, kIntegerOptimality };
  Kind kind = Kind::kSubgradient;
  AffineForm phi;                     // y >= phi(K0, u, theta1)
  std::vector<std::uint8_t> pattern;  // first-stage bits (integer-optimality cuts)
  double q = 0.0;                     // evaluated mean recourse at the pattern
  double gen_value = 0.0;             // mean recourse at the generation point
  double gen_error = 0.0;             // |phi(point) - gen_value| / (1 + |gen_value|)
  double slack = 0.0;                 // y* - phi(point*) at the latest master solution
};

/// Averages the per-scenario gradients into one cut and records how tightly
/// it reproduces the sampled mean recourse at its generation point.
inline Cut build_subgradient_cut(const std::vector<RecourseGradient>& grads,
                                 const PolicyParams& at) {
  require(!grads.empty(), "cut from an empty gradient set");
  Cut cut;
  cut.phi = AffineForm(grads[0].phi.k0.size());
  double total = 0.0;
  for (const RecourseGradient& g : grads) {
    cut.phi.axpy(1.0, g.phi);
    total += g.value;
  }
  double inv = 1.0 / static_cast<double>(grads.size());
  cut.phi.scale(inv);
  cut.gen_value = total * inv;
  cut.gen_error =
      std::abs(cut.phi.value_at(at) - cut.gen_value) / (1.0 + std::abs(cut.gen_value));
  return cut;
}

// ---------------------------------------------------------------------------
// Parameters and data-driven bounds

struct AlgoParams {
  std::optional<double> alpha, beta;  // risk level / mix; default: instance values
  int m_bar = 25;                     // max outer iterations
  double epsilon = 1e-6;              // stop when v_ub - v_lb falls below this
  int k_bar = 60;                     // max stochastic-approximation steps
  int k_underline = 8;                // min steps before the theta2 stop test applies
  double epsilon_theta = 0.5;         // sup-norm stop for the averaged theta2
  std::optional<double> c_theta;      // theta2 regularizer; default derived
  std::optional<double> m_theta;      // "never trigger" threshold; default derived
  double eps_strict = 1e-6;           // margin modelling the strict no-trigger inequality
  std::optional<double> u_lo, u_hi;   // risk-threshold box; default derived
  std::optional<double> y_lb;         // epigraph floor; default derived
  std::uint64_t seed = 1;
  double ssp_gap_rel = 1e-4;          // single-scenario MILP relative gap
  long ssp_node_limit = 50000;
  long master_node_limit = -1;
  int multicut_rounds = 0;            // improvement-phase iterations
  std::optional<Matrix> theta2_fixed; // pins theta2 and skips the approximation loop
  int heuristic_period = 5;           // node stride of the rounding heuristic
  std::string dump_lp;                // when nonempty, write each master model here
};

/// Data-driven constants shared by every model builder: rounded facility
/// demands, threshold caps, money-scale boxes for the risk threshold and the
/// recourse epigraph, and the derived threshold regularizer.
struct DerivedBounds {
  std::vector<std::vector<std::vector<long long>>> rdem;  // [s][t][n], t = 0..T
  Matrix theta2_max;  // N x (T+1), column 0 zero
  double m_theta = 0.0;
  double c_theta = 0.0;
  double profit_ub = 0.0;  // bound on total discounted allocation profit
  double cost_ub = 0.0;    // bound on total discounted cost incl. penalties
  double u_lo = 0.0, u_hi = 0.0;
  double y_lb = 0.0;
};

inline DerivedBounds derive_bounds(const Instance& inst, const ScenarioSet& set,
                                   const AlgoParams& p = {}) {
  require(set.I == inst.I && set.T == inst.T, "scenario set does not match the instance");
  std::size_t N = static_cast<std::size_t>(inst.N), I = static_cast<std::size_t>(inst.I);
  int T = inst.T;
  DerivedBounds b;
  b.rdem.resize(set.S);
  for (std::size_t s = 0; s < set.S; ++s) {
    b.rdem[s].resize(static_cast<std::size_t>(T) + 1);
    for (int t = 0; t <= T; ++t)
      b.rdem[s][static_cast<std::size_t>(t)] = weighted_demand(inst.W, set.row(s, t));
  }
  b.theta2_max = Matrix(N, static_cast<std::size_t>(T) + 1, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (int t = 1; t <= T; ++t) {
      if (inst.theta2_max) {
        b.theta2_max(n, static_cast<std::size_t>(t)) =
            (*inst.theta2_max)(n, static_cast<std::size_t>(t));
      } else {
        long long mx = 0;
        for (std::size_t s = 0; s < set.S; ++s)
          mx = std::max(mx, b.rdem[s][static_cast<std::size_t>(t)][n]);
        b.theta2_max(n, static_cast<std::size_t>(t)) = static_cast<double>(mx) + 1.0;
      }
    }
  for (int t = 1; t <= T; ++t) {
    double best_rev = 0.0, best_pen = 0.0;
    for (std::size_t s = 0; s < set.S; ++s) {
      double rev = 0.0, pen = 0.0;
      for (std::size_t i = 0; i < I; ++i) {
        double rmax = 0.0;
        for (std::size_t n = 0; n < N; ++n) rmax = std::max(rmax, inst.rt(t)(i, n));
        rev += rmax * set.at(s, t, static_cast<int>(i));
        pen += inst.bt(t, static_cast<int>(i)) * set.at(s, t, static_cast<int>(i));
      }
      best_rev = std::max(best_rev, rev);
      best_pen = std::max(best_pen, pen);
    }
    b.profit_ub += inst.discount(t) * best_rev;
    b.cost_ub += inst.discount(t) * best_pen;
  }
  for (int t = 0; t <= T; ++t)
    for (std::size_t n = 0; n < N; ++n)
      b.cost_ub += inst.discount(t) *
                   inst.cost(static_cast<int>(n), t).eval(static_cast<double>(inst.k_max[n]));
  b.u_lo = p.u_lo.value_or(-b.profit_ub - 1.0);
  b.u_hi = p.u_hi.value_or(b.cost_ub + 1.0);
  require(b.u_lo <= b.u_hi, "risk-threshold box is empty");
  b.y_lb = p.y_lb.value_or(-(b.profit_ub + b.cost_ub) - 1.0);
  double sum_t2 = 0.0, max_t2 = 0.0;
  for (double v : b.theta2_max.data) {
    sum_t2 += v;
    max_t2 = std::max(max_t2, v);
  }
  b.c_theta = p.c_theta.value_or(1e-4 * (1.0 + b.profit_ub + b.cost_ub) / (1.0 + sum_t2));
  require(b.c_theta >= 0.0, "threshold regularizer must be nonnegative");
  b.m_theta = p.m_theta.value_or(std::max(1e9, 1e3 * max_t2));
  return b;
}

// ---------------------------------------------------------------------------
// Shared model-building blocks

namespace detail_dec {

/// Integer-closed windows [lo, hi] of each cost segment covering expansions
/// in {0, ..., dk_max}; segments without integers are omitted.
struct SegmentWindow {
  std::size_t seg;
  double lo, hi;
};

inline std::vector<SegmentWindow> integer_windows(const PiecewiseCost& c, double dk_max) {
  std::vector<SegmentWindow> out;
  for (std::size_t l = 0; l < c.segments(); ++l) {
    double lo = std::max(std::ceil(c.a[l]), 0.0);
    double hi = std::min(std::ceil(c.a[l + 1]) - 1.0, dk_max);
    if (hi >= lo) out.push_back({l, lo, hi});
  }
  return out;
}

/// Multiple-choice encoding of one piecewise expansion cost: an amount
/// variable per window with a binary window selector, sum of selectors one,
/// and the amount confined to its window. The objective carries
/// obj_scale * (slope * amount + intercept * selector).
struct CostEncoding {
  std::vector<SegmentWindow> windows;
  std::vector<int> w;
  std::vector<int> tau;
};

inline CostEncoding add_cost_encoding(LpModel& m, const PiecewiseCost& c, double dk_max,
                                      double obj_scale, const std::string& tag) {
  CostEncoding e;
  e.windows = integer_windows(c, dk_max);
  require(!e.windows.empty(), "cost encoding: empty expansion domain");
  std::vector<std::pair<int, double>> choice;
  for (std::size_t k = 0; k < e.windows.size(); ++k) {
    const SegmentWindow& win = e.windows[k];
    int wi = m.add_var(0.0, win.hi, obj_scale * c.p[win.seg],
                       tag + "_w" + std::to_string(win.seg));
    int ti = m.add_int_var(0.0, 1.0, obj_scale * c.q[win.seg],
                           tag + "_s" + std::to_string(win.seg));
    e.w.push_back(wi);
    e.tau.push_back(ti);
    choice.push_back({ti, 1.0});
    if (win.hi > 0.0) m.add_le(0.0, {{wi, 1.0}, {ti, -win.hi}});
    if (win.lo > 0.0) m.add_ge(0.0, {{wi, 1.0}, {ti, -win.lo}});
  }
  m.add_eq(1.0, choice);
  return e;
}

/// Appends amount * coef and selector * coef terms of the encoded cost.
inline void append_cost_terms(std::vector<std::pair<int, double>>& terms, const CostEncoding& e,
                              const PiecewiseCost& c, double coef) {
  for (std::size_t k = 0; k < e.windows.size(); ++k) {
    terms.push_back({e.w[k], coef * c.p[e.windows[k].seg]});
    terms.push_back({e.tau[k], coef * c.q[e.windows[k].seg]});
  }
}

/// Pins an encoding to the zero expansion (first window selected, amount 0).
inline void pin_zero_expansion(LpModel& m, const CostEncoding& e) {
  for (std::size_t k = 0; k < e.windows.size(); ++k) {
    m.ub[static_cast<std::size_t>(e.w[k])] = 0.0;
    if (e.windows[k].lo == 0.0)
      m.lb[static_cast<std::size_t>(e.tau[k])] = 1.0;
    else
      m.ub[static_cast<std::size_t>(e.tau[k])] = 0.0;
  }
}

/// First-stage quantities as either fixed numbers or model variables.
struct FirstStageView {
  const std::vector<long long>* K0_fix = nullptr;
  const std::vector<int>* K0_var = nullptr;
  const std::vector<long long>* th1_fix = nullptr;
  const std::vector<int>* th1_var = nullptr;
  double u_fix = 0.0;
  int u_var = -1;

  double k0_lo(std::size_t n) const {
    return K0_fix ? static_cast<double>((*K0_fix)[n]) : 0.0;
  }
  double th1_lo(std::size_t n) const {
    return th1_fix ? static_cast<double>((*th1_fix)[n]) : 0.0;
  }
  double th1_hi(std::size_t n, const Instance& inst) const {
    return th1_fix ? static_cast<double>((*th1_fix)[n])
                   : static_cast<double>(inst.theta1_max[n]);
  }
  void k0_term(std::vector<std::pair<int, double>>& t, double& rhs, std::size_t n,
               double a) const {
    if (K0_var)
      t.push_back({(*K0_var)[n], a});
    else
      rhs -= a * static_cast<double>((*K0_fix)[n]);
  }
  void th1_term(std::vector<std::pair<int, double>>& t, double& rhs, std::size_t n,
                double a) const {
    if (th1_var)
      t.push_back({(*th1_var)[n], a});
    else
      rhs -= a * static_cast<double>((*th1_fix)[n]);
  }
  void u_term(std::vector<std::pair<int, double>>& t, double& rhs, double a) const {
    if (u_var >= 0)
      t.push_back({u_var, a});
    else
      rhs -= a * u_fix;
  }
};

/// Wait-and-see block of one scenario.
struct ScenarioBlock {
  std::vector<int> k;                 // n*T + (t-1)
  std::vector<int> delta;             // same layout
  std::vector<std::uint8_t> fixed;    // trigger presolved to zero
  std::vector<CostEncoding> enc;      // same layout
  std::vector<int> z;                 // ((t-1)*I + i)*N + n
  int eta = -1;
  double b_const = 0.0;               // sum_t gamma^t sum_i b(t,i) xi(t,i)
};

/// Appends one scenario's rule block: capacity levels, trigger indicators
/// with their linearized rule rows (tightest per-row constants), expansion
/// cost encodings, allocation variables with supply and capacity rows, and
/// the shortfall epigraph variable. obj_weight scales the scenario's
/// objective share (1 for a single scenario, 1/S in the sample average).
/// theta2_idx supplies the shared threshold variables, laid out n*T + (t-1);
/// c0(K0) is passed as linear terms plus a constant.
inline ScenarioBlock add_scenario_block(LpModel& m, const Instance& inst, const ScenarioSet& set,
                                        std::size_t s, const FirstStageView& fs,
                                        const std::vector<int>& theta2_idx,
                                        const std::vector<std::pair<int, double>>& c0_terms,
                                        double c0_const, const DerivedBounds& bounds,
                                        double obj_weight, double beta, double w_tail,
                                        double eps_strict) {
  std::size_t N = static_cast<std::size_t>(inst.N), I = static_cast<std::size_t>(inst.I);
  std::size_t T = static_cast<std::size_t>(inst.T);
  ScenarioBlock blk;
  blk.k.assign(N * T, -1);
  blk.delta.assign(N * T, -1);
  blk.fixed.assign(N * T, 0);
  blk.enc.resize(N * T);
  blk.z.assign(T * I * N, -1);
  auto at = [T](std::size_t n, std::size_t t) { return n * T + (t - 1); };
  std::string sid = "s" + std::to_string(s);

  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 1; t <= T; ++t)
      blk.k[at(n, t)] =
          m.add_var(0.0, static_cast<double>(inst.k_max[n]), 0.0,
                    sid + "_K" + std::to_string(n) + "_" + std::to_string(t));

  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 1; t <= T; ++t) {
      double rd = static_cast<double>(bounds.rdem[s][t][n]);
      double th2_lb = m.lb[static_cast<std::size_t>(theta2_idx[at(n, t)])];
      bool cap_block = rd + fs.th1_lo(n) > static_cast<double>(inst.k_max[n]);
      bool never_gap = rd - fs.k0_lo(n) < 0.0;
      bool th2_blocks = th2_lb > rd - fs.k0_lo(n);
      bool fix = cap_block || never_gap || th2_blocks;
      blk.fixed[at(n, t)] = fix ? 1 : 0;
      blk.delta[at(n, t)] =
          m.add_int_var(0.0, fix ? 0.0 : 1.0, 0.0,
                        sid + "_d" + std::to_string(n) + "_" + std::to_string(t));
    }

  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 1; t <= T; ++t) {
      std::size_t idx = at(n, t);
      double rd = static_cast<double>(bounds.rdem[s][t][n]);
      double kmax = static_cast<double>(inst.k_max[n]);
      int th2 = theta2_idx[idx];
      double th2_ub = m.ub[static_cast<std::size_t>(th2)];
      int dv = blk.delta[idx];
      auto kprev_term = [&](std::vector<std::pair<int, double>>& terms, double& rhs, double a) {
        if (t == 1)
          fs.k0_term(terms, rhs, n, a);
        else
          terms.push_back({blk.k[at(n, t - 1)], a});
      };

      if (!blk.fixed[idx]) {
        // Trigger only when the demand gap reaches the threshold.
        double ma = std::max(0.0, kmax + th2_ub - rd);
        std::vector<std::pair<int, double>> terms{{th2, -1.0}, {dv, -ma}};
        double rhs = -rd - ma;
        kprev_term(terms, rhs, -1.0);
        m.add_ge(rhs, terms);
      }
      if (!blk.fixed[idx] || rd - fs.k0_lo(n) + eps_strict > 0.0) {
        // Without a trigger the gap stays strictly below the threshold.
        double mb = std::max(0.0, rd - fs.k0_lo(n)) + 1.0;
        std::vector<std::pair<int, double>> terms{{th2, -1.0}, {dv, -mb}};
        double rhs = -rd - eps_strict;
        kprev_term(terms, rhs, -1.0);
        m.add_le(rhs, terms);
      }
      if (!blk.fixed[idx]) {
        // A trigger moves capacity exactly to demand plus the buffer.
        double mc = std::max(0.0, kmax - rd - fs.th1_lo(n));
        std::vector<std::pair<int, double>> terms{{blk.k[idx], 1.0}, {dv, mc}};
        double rhs = rd + mc;
        fs.th1_term(terms, rhs, n, -1.0);
        m.add_le(rhs, terms);

        double md = std::max(0.0, rd + fs.th1_hi(n, inst) - fs.k0_lo(n));
        terms = {{blk.k[idx], 1.0}, {dv, -md}};
        rhs = rd - md;
        fs.th1_term(terms, rhs, n, -1.0);
        m.add_ge(rhs, terms);

        // Expansion requires a trigger.
        double me = std::max(0.0, kmax - fs.k0_lo(n));
        terms = {{blk.k[idx], 1.0}, {dv, -me}};
        rhs = 0.0;
        kprev_term(terms, rhs, -1.0);
        m.add_le(rhs, terms);
      }

      // Expansion amount decomposed over cost segments.
      const PiecewiseCost& cost = inst.cost(static_cast<int>(n), static_cast<int>(t));
      double dk_max = kmax - fs.k0_lo(n);
      blk.enc[idx] = add_cost_encoding(
          m, cost, dk_max, obj_weight * beta * inst.discount(static_cast<int>(t)),
          sid + "_c" + std::to_string(n) + "_" + std::to_string(t));
      if (blk.fixed[idx]) pin_zero_expansion(m, blk.enc[idx]);
      std::vector<std::pair<int, double>> terms{{blk.k[idx], 1.0}};
      double rhs = 0.0;
      kprev_term(terms, rhs, -1.0);
      for (int wi : blk.enc[idx].w) terms.push_back({wi, -1.0});
      m.add_eq(rhs, terms);
    }

  // Allocation variables and rows; profits enter the objective negatively.
  for (std::size_t t = 1; t <= T; ++t) {
    const double* xi = set.row(s, static_cast<int>(t));
    const Matrix& r = inst.rt(static_cast<int>(t));
    double disc = inst.discount(static_cast<int>(t));
    for (std::size_t i = 0; i < I; ++i) {
      double bi = inst.bt(static_cast<int>(t), static_cast<int>(i));
      blk.b_const += disc * bi * xi[i];
      for (std::size_t n = 0; n < N; ++n)
        blk.z[((t - 1) * I + i) * N + n] =
            m.add_var(0.0, xi[i], -obj_weight * beta * disc * (r(i, n) + bi),
                      sid + "_z" + std::to_string(t) + "_" + std::to_string(i) + "_" +
                          std::to_string(n));
    }
    for (std::size_t i = 0; i < I; ++i) {
      std::vector<std::pair<int, double>> terms;
      for (std::size_t n = 0; n < N; ++n) terms.push_back({blk.z[((t - 1) * I + i) * N + n], 1.0});
      m.add_le(xi[i], terms);
    }
    for (std::size_t n = 0; n < N; ++n) {
      std::vector<std::pair<int, double>> terms;
      for (std::size_t i = 0; i < I; ++i) terms.push_back({blk.z[((t - 1) * I + i) * N + n], 1.0});
      double rhs = 0.0;
      if (t == 1)
        fs.k0_term(terms, rhs, n, -inst.unit_size);
      else
        terms.push_back({blk.k[at(n, t - 1)], -inst.unit_size});
      m.add_le(rhs, terms);
    }
  }

  // Shortfall epigraph: eta >= c0 + sum_t gamma^t (cost_t - profit_t) - u.
  blk.eta = m.add_var(0.0, kInf, obj_weight * w_tail, sid + "_eta");
  {
    std::vector<std::pair<int, double>> terms{{blk.eta, 1.0}};
    double rhs = blk.b_const + c0_const;
    for (const auto& [j, v] : c0_terms) terms.push_back({j, -v});
    fs.u_term(terms, rhs, 1.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 1; t <= T; ++t)
        append_cost_terms(terms, blk.enc[at(n, t)],
                          inst.cost(static_cast<int>(n), static_cast<int>(t)),
                          -inst.discount(static_cast<int>(t)));
    for (std::size_t t = 1; t <= T; ++t) {
      const Matrix& r = inst.rt(static_cast<int>(t));
      double disc = inst.discount(static_cast<int>(t));
      for (std::size_t i = 0; i < I; ++i) {
        double bi = inst.bt(static_cast<int>(t), static_cast<int>(i));
        for (std::size_t n = 0; n < N; ++n)
          terms.push_back({blk.z[((t - 1) * I + i) * N + n], disc * (r(i, n) + bi)});
      }
    }
    m.add_ge(rhs, terms);
  }
  return blk;
}

/// Raises thresholds of declined triggers until the strict no-trigger margin
/// holds; the trajectory is unchanged because raising a threshold can only
/// keep a trigger off. Returns false when a lift would leave the box.
inline bool lift_blocked_thresholds(Matrix& theta2, const Trajectory& tr,
                                    const DerivedBounds& bounds, double eps_strict,
                                    const Matrix* ub_override = nullptr) {
  std::size_t N = tr.K.rows;
  std::size_t T = tr.K.cols - 1;
  bool changed = false;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 1; t <= T; ++t) {
      if (tr.delta(n, t) != 0.0) continue;
      double gap = static_cast<double>(tr.rdem[t][n]) - tr.K(n, t - 1);
      if (theta2(n, t) >= gap + 2.0 * eps_strict) continue;
      double lifted = gap + 2.0 * eps_strict;
      double cap = ub_override ? (*ub_override)(n, t) : bounds.theta2_max(n, t);
      if (lifted > cap) return false;
      theta2(n, t) = lifted;
      changed = true;
    }
  (void)changed;
  return true;
}

/// Writes one scenario's trajectory into the block's coordinates.
inline void fill_block_assignment(std::vector<double>& x, const LpModel& m, const Instance& inst,
                                  const ScenarioBlock& blk, const Trajectory& tr, double u_val) {
  std::size_t N = static_cast<std::size_t>(inst.N), I = static_cast<std::size_t>(inst.I);
  std::size_t T = static_cast<std::size_t>(inst.T);
  auto at = [T](std::size_t n, std::size_t t) { return n * T + (t - 1); };
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 1; t <= T; ++t) {
      std::size_t idx = at(n, t);
      x[static_cast<std::size_t>(blk.k[idx])] = tr.K(n, t);
      x[static_cast<std::size_t>(blk.delta[idx])] = tr.delta(n, t);
      double dk = tr.delta_K(n, t);
      const CostEncoding& e = blk.enc[idx];
      for (std::size_t kk = 0; kk < e.windows.size(); ++kk) {
        bool inside = dk >= e.windows[kk].lo && dk <= e.windows[kk].hi;
        x[static_cast<std::size_t>(e.w[kk])] = inside ? dk : 0.0;
        x[static_cast<std::size_t>(e.tau[kk])] = inside ? 1.0 : 0.0;
      }
    }
  for (std::size_t t = 1; t <= T; ++t)
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t n = 0; n < N; ++n)
        x[static_cast<std::size_t>(blk.z[((t - 1) * I + i) * N + n])] = tr.z[t](i, n);
  x[static_cast<std::size_t>(blk.eta)] = std::max(tr.Q - u_val, 0.0);
  (void)m;
}

}  // namespace detail_dec

// ---------------------------------------------------------------------------
// Single-scenario threshold problem

struct SspResult {
  Matrix theta2;  // N x (T+1), column 0 zero
  Matrix delta;   // N x (T+1); 1 where the solved capacity strictly increases
  double value = 0.0;    // scenario recourse at the solved thresholds (no regularizer)
  double raw_obj = 0.0;  // solver objective (regularized, penalty constant excluded)
  bool proven = false;
  long nodes = 0;
};

/// Optimizes the trigger thresholds on one scenario at a fixed first-stage
/// point. A small regularizer keeps no-trigger thresholds at the bottom of
/// their feasible range so the averaged values stay meaningful.
inline SspResult solve_single_scenario(const Instance& inst, const ScenarioSet& set,
                                       std::size_t s, const PolicyParams& at,
                                       const DerivedBounds& bounds, const AlgoParams& p) {
  std::size_t N = static_cast<std::size_t>(inst.N);
  std::size_t T = static_cast<std::size_t>(inst.T);
  double alpha = p.alpha.value_or(inst.alpha);
  double beta = p.beta.value_or(inst.beta);
  double w = tail_weight(alpha, beta);

  LpModel m;
  std::vector<int> th2(N * T, -1);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 1; t <= T; ++t)
      th2[n * T + (t - 1)] =
          m.add_var(0.0, bounds.theta2_max(n, t), bounds.c_theta,
                    "th2_" + std::to_string(n) + "_" + std::to_string(t));
  detail_dec::FirstStageView fs;
  fs.K0_fix = &at.K0;
  fs.th1_fix = &at.theta1;
  fs.u_fix = at.u;
  double c0v = initial_capacity_cost(at.K0, inst);
  detail_dec::ScenarioBlock blk = detail_dec::add_scenario_block(
      m, inst, set, s, fs, th2, {}, c0v, bounds, 1.0, beta, w, p.eps_strict);

  MipParams mp;
  mp.gap_rel = p.ssp_gap_rel;
  mp.node_limit = p.ssp_node_limit;
  mp.heuristic_period = p.heuristic_period;
  mp.priority.assign(m.num_vars(), 0);
  for (int dv : blk.delta) mp.priority[static_cast<std::size_t>(dv)] = 2;
  for (const auto& e : blk.enc)
    for (int ti : e.tau) mp.priority[static_cast<std::size_t>(ti)] = 1;
  mp.heuristic = [&](const std::vector<double>& relax) -> std::optional<std::vector<double>> {
    PolicyParams cand = at;
    cand.theta2 = Matrix(N, T + 1, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 1; t <= T; ++t)
        cand.theta2(n, t) = std::clamp(relax[static_cast<std::size_t>(th2[n * T + (t - 1)])],
                                       0.0, bounds.theta2_max(n, t));
    Trajectory tr = simulate_trajectory(cand, set, s, inst);
    if (!detail_dec::lift_blocked_thresholds(cand.theta2, tr, bounds, p.eps_strict))
      return std::nullopt;
    std::vector<double> x(m.num_vars(), 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 1; t <= T; ++t)
        x[static_cast<std::size_t>(th2[n * T + (t - 1)])] = cand.theta2(n, t);
    detail_dec::fill_block_assignment(x, m, inst, blk, tr, at.u);
    return x;
  };

  MipSolution sol = solve_milp(m, mp);
  require(sol.has_incumbent,
          "single-scenario threshold problem found no feasible point; "
          "the threshold box cannot express the realized trigger pattern");

  SspResult out;
  out.theta2 = Matrix(N, T + 1, 0.0);
  out.delta = Matrix(N, T + 1, 0.0);
  double reg = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 1; t <= T; ++t) {
      double v = std::clamp(sol.x[static_cast<std::size_t>(th2[n * T + (t - 1)])], 0.0,
                            bounds.theta2_max(n, t));
      out.theta2(n, t) = v;
      reg += bounds.c_theta * sol.x[static_cast<std::size_t>(th2[n * T + (t - 1)])];
    }
  for (std::size_t n = 0; n < N; ++n) {
    double prev = static_cast<double>(at.K0[n]);
    for (std::size_t t = 1; t <= T; ++t) {
      double kv = sol.x[static_cast<std::size_t>(blk.k[n * T + (t - 1)])];
      if (kv > prev + 0.5) out.delta(n, t) = 1.0;
      prev = kv;
    }
  }
  out.raw_obj = sol.obj;
  out.value = sol.obj - reg + beta * blk.b_const;
  out.proven = sol.proven;
  out.nodes = sol.nodes;
  return out;
}

// ---------------------------------------------------------------------------
// Stochastic approximation of the thresholds

struct SaResult {
  Matrix theta2;          // finalized thresholds
  Matrix theta2_bar;      // raw running average
  Matrix trigger_counts;  // per (n,t): solved-capacity increases across steps
  int iterations = 0;
  long nodes = 0;
};

/// Averages per-scenario optimal thresholds with the step sizes 1/(k+1)
/// (a plain running mean). Scenarios are sampled without replacement and
/// reshuffled once exhausted. Entries that never triggered in any step are
/// pinned to the "never trigger" level, because the average of minimal
/// no-trigger thresholds underestimates the level that actually blocks.
inline SaResult approximate_theta2(const Instance& inst, const ScenarioSet& set,
                                   const PolicyParams& at, int outer_index,
                                   const DerivedBounds& bounds, const AlgoParams& p) {
  std::size_t N = static_cast<std::size_t>(inst.N);
  std::size_t T = static_cast<std::size_t>(inst.T);
  SaResult out;
  out.theta2_bar = Matrix(N, T + 1, 0.0);
  out.trigger_counts = Matrix(N, T + 1, 0.0);
  std::vector<std::size_t> order(set.S);
  for (std::size_t i = 0; i < set.S; ++i) order[i] = i;
  Rng rng(p.seed, "sa-order", static_cast<std::uint64_t>(outer_index));
  rng.shuffle(order);
  std::size_t pos = 0;
  for (int k = 0; k < p.k_bar; ++k) {
    if (pos == order.size()) {
      rng.shuffle(order);
      pos = 0;
    }
    std::size_t s = order[pos++];
    SspResult r = solve_single_scenario(inst, set, s, at, bounds, p);
    out.nodes += r.nodes;
    double sigma = 1.0 / static_cast<double>(k + 1);
    double diff = 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 1; t <= T; ++t) {
        double step = sigma * (r.theta2(n, t) - out.theta2_bar(n, t));
        out.theta2_bar(n, t) += step;
        diff = std::max(diff, std::abs(step));
        out.trigger_counts(n, t) += r.delta(n, t);
      }
    out.iterations = k + 1;
    if (k + 1 >= p.k_underline && diff <= p.epsilon_theta) break;
  }
  out.theta2 = Matrix(N, T + 1, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 1; t <= T; ++t)
      out.theta2(n, t) =
          out.trigger_counts(n, t) == 0.0 ? bounds.m_theta : out.theta2_bar(n, t);
  return out;
}

// ---------------------------------------------------------------------------
// Candidate evaluation

struct PointEvaluation {
  double mean_recourse = 0.0;
  double candidate_value = 0.0;  // beta*c0 + (1-beta)*u + mean recourse
  Cut cut;
  std::vector<double> q;  // per-scenario discounted cost
};

/// Simulates every scenario at the candidate point, averages the recourse
/// values and their affine minorants into a cut, and prices the candidate.
inline PointEvaluation evaluate_candidate(const Instance& inst, const ScenarioSet& set,
                                          const PolicyParams& pol, double alpha, double beta) {
  std::vector<RecourseGradient> grads(set.S);
  PointEvaluation ev;
  ev.q.resize(set.S);
  parallel_for(set.S, [&](std::size_t s) {
    Trajectory tr = simulate_trajectory(pol, set, s, inst);
    ev.q[s] = tr.Q;
    grads[s] = recourse_subgradient(tr, set, s, pol, alpha, beta, inst);
  });
  ev.cut = build_subgradient_cut(grads, pol);
  ev.mean_recourse = ev.cut.gen_value;
  ev.candidate_value =
      beta * initial_capacity_cost(pol.K0, inst) + (1.0 - beta) * pol.u + ev.mean_recourse;
  return ev;
}

// ---------------------------------------------------------------------------
// First-stage master

/// Bits needed to represent 0..max_value.
inline int bit_width_for(long long max_value) {
  int b = 0;
  while (((1LL << b) - 1) < max_value) ++b;
  return b;
}

/// Concatenated binary digits of (K0, theta1), the support of the
/// integer-optimality cuts.
inline std::vector<std::uint8_t> first_stage_pattern(const std::vector<long long>& K0,
                                                     const std::vector<long long>& th1,
                                                     const Instance& inst) {
  std::vector<std::uint8_t> bits;
  for (std::size_t n = 0; n < K0.size(); ++n)
    for (int j = 0; j < bit_width_for(inst.k_max[n]); ++j)
      bits.push_back(static_cast<std::uint8_t>((K0[n] >> j) & 1));
  for (std::size_t n = 0; n < th1.size(); ++n)
    for (int j = 0; j < bit_width_for(inst.theta1_max[n]); ++j)
      bits.push_back(static_cast<std::uint8_t>((th1[n] >> j) & 1));
  return bits;
}

struct MasterResult {
  std::vector<long long> K0;
  double u = 0.0;
  std::vector<long long> theta1;
  double y = 0.0;
  double value = 0.0;  // incumbent objective
  double bound = 0.0;  // proven lower bound
  bool proven = false;
  long nodes = 0;
};

/// Minimizes beta*c0(K0) + (1-beta)*u + y over the boxed first stage subject
/// to the cut pool. Binary digits of (K0, theta1) are introduced only when
/// integer-optimality cuts are present. Fills each subgradient cut's slack
/// at the returned solution.
inline MasterResult solve_master(const Instance& inst, std::vector<Cut>& cuts,
                                 const DerivedBounds& bounds, const AlgoParams& p, double beta) {
  std::size_t N = static_cast<std::size_t>(inst.N);
  LpModel m;
  std::vector<int> K0v(N), th1v(N);
  for (std::size_t n = 0; n < N; ++n)
    K0v[n] = m.add_int_var(0.0, static_cast<double>(inst.k_max[n]), 0.0,
                           "K0_" + std::to_string(n));
  int uv = m.add_var(bounds.u_lo, bounds.u_hi, 1.0 - beta, "u");
  for (std::size_t n = 0; n < N; ++n)
    th1v[n] = m.add_int_var(0.0, static_cast<double>(inst.theta1_max[n]), 0.0,
                            "th1_" + std::to_string(n));
  int yv = m.add_var(bounds.y_lb, kInf, 1.0, "y");

  std::vector<detail_dec::CostEncoding> enc0(N);
  for (std::size_t n = 0; n < N; ++n) {
    enc0[n] = detail_dec::add_cost_encoding(m, inst.cost(static_cast<int>(n), 0),
                                            static_cast<double>(inst.k_max[n]), beta,
                                            "c0_" + std::to_string(n));
    std::vector<std::pair<int, double>> terms{{K0v[n], 1.0}};
    for (int wi : enc0[n].w) terms.push_back({wi, -1.0});
    m.add_eq(0.0, terms);
  }

  bool need_bits = false;
  for (const Cut& c : cuts) need_bits = need_bits || c.kind == Cut::Kind::kIntegerOptimality;
  std::vector<int> bit_vars;
  if (need_bits) {
    auto link_bits = [&](int var, long long max_value, const std::string& tag) {
      std::vector<std::pair<int, double>> terms{{var, 1.0}};
      for (int j = 0; j < bit_width_for(max_value); ++j) {
        int xb = m.add_int_var(0.0, 1.0, 0.0, tag + "_b" + std::to_string(j));
        bit_vars.push_back(xb);
        terms.push_back({xb, -static_cast<double>(1LL << j)});
      }
      m.add_eq(0.0, terms);
    };
    for (std::size_t n = 0; n < N; ++n)
      link_bits(K0v[n], inst.k_max[n], "K0_" + std::to_string(n));
    for (std::size_t n = 0; n < N; ++n)
      link_bits(th1v[n], inst.theta1_max[n], "th1_" + std::to_string(n));
  }

  for (const Cut& c : cuts) {
    if (c.kind == Cut::Kind::kSubgradient) {
      std::vector<std::pair<int, double>> terms{{yv, 1.0}};
      for (std::size_t n = 0; n < N; ++n) {
        if (c.phi.k0[n] != 0.0) terms.push_back({K0v[n], -c.phi.k0[n]});
        if (c.phi.theta1[n] != 0.0) terms.push_back({th1v[n], -c.phi.theta1[n]});
      }
      if (c.phi.u != 0.0) terms.push_back({uv, -c.phi.u});
      m.add_ge(c.phi.offset, terms);
    } else {
      require(c.pattern.size() == bit_vars.size(),
              "integer-optimality cut pattern does not match the first-stage bits");
      double coef = std::max(c.q - bounds.y_lb, 0.0);
      std::vector<std::pair<int, double>> terms{{yv, 1.0}};
      double on = 0.0;
      for (std::size_t b = 0; b < bit_vars.size(); ++b) {
        if (c.pattern[b]) {
          terms.push_back({bit_vars[b], -coef});
          on += 1.0;
        } else {
          terms.push_back({bit_vars[b], coef});
        }
      }
      m.add_ge(bounds.y_lb + coef * (1.0 - on), terms);
    }
  }

  if (!p.dump_lp.empty()) {
    std::ofstream lpf(p.dump_lp);
    require(lpf.good(), "cannot open LP dump file: " + p.dump_lp);
    write_lp_format(m, lpf);
  }

  MipParams mp;
  mp.node_limit = p.master_node_limit;
  mp.priority.assign(m.num_vars(), 0);
  for (int j : K0v) mp.priority[static_cast<std::size_t>(j)] = 3;
  for (int j : th1v) mp.priority[static_cast<std::size_t>(j)] = 3;
  for (int j : bit_vars) mp.priority[static_cast<std::size_t>(j)] = 2;
  for (const auto& e : enc0)
    for (int ti : e.tau) mp.priority[static_cast<std::size_t>(ti)] = 1;
  MipSolution sol = solve_milp(m, mp);
  require(sol.has_incumbent, "first-stage problem has no feasible point");

  MasterResult out;
  out.K0.resize(N);
  out.theta1.resize(N);
  for (std::size_t n = 0; n < N; ++n) {
    out.K0[n] = std::llround(sol.x[static_cast<std::size_t>(K0v[n])]);
    out.theta1[n] = std::llround(sol.x[static_cast<std::size_t>(th1v[n])]);
  }
  out.u = sol.x[static_cast<std::size_t>(uv)];
  out.y = sol.x[static_cast<std::size_t>(yv)];
  out.value = sol.obj;
  out.bound = sol.bound;
  out.proven = sol.proven;
  out.nodes = sol.nodes;
  for (Cut& c : cuts)
    if (c.kind == Cut::Kind::kSubgradient)
      c.slack = out.y - c.phi.value_at(out.K0, out.u, out.theta1);
  return out;
}

// ---------------------------------------------------------------------------
// Outer loop

struct IterationTrace {
  int m = 0;
  double v_lb = 0.0, v_ub = 0.0;
  double candidate = 0.0;
  double incumbent = 0.0;
  int sa_iterations = 0;
  long ssp_nodes = 0;
  std::size_t cuts_active = 0;
  int removed_cut = -1;  // index dropped in the improvement phase
  double wall_ms = 0.0;
};

struct DecompositionResult {
  PolicyParams policy;      // best evaluated candidate
  double objective = kInf;  // its sampled objective (minimization sense)
  double v_lb = -kInf, v_ub = kInf;
  int iterations = 0;
  std::vector<IterationTrace> trace;
  std::vector<Cut> cuts;
};

inline void write_trace_csv(const std::string& path, const std::vector<IterationTrace>& rows) {
  std::ofstream out(path);
  require(out.good(), "cannot open trace file for writing: " + path);
  out << "m,v_lb,v_ub,candidate,incumbent,sa_iterations,ssp_nodes,cuts,removed_cut,wall_ms\n";
  for (const IterationTrace& r : rows)
    out << r.m << ',' << fmt_full(r.v_lb) << ',' << fmt_full(r.v_ub) << ','
        << fmt_full(r.candidate) << ',' << fmt_full(r.incumbent) << ',' << r.sa_iterations << ','
        << r.ssp_nodes << ',' << r.cuts_active << ',' << r.removed_cut << ','
        << fmt_full(r.wall_ms) << '\n';
  require(out.good(), "failed writing trace file: " + path);
}

/// Cut-guided search over the first stage with threshold averaging inside
/// each iteration. Keeps the best evaluated candidate; optional improvement
/// rounds add integer-optimality cuts on the visited first-stage patterns
/// and relax the pool by dropping minimum-slack cuts when the search stalls.
inline DecompositionResult run_decomposition(const Instance& inst, const ScenarioSet& set,
                                             const AlgoParams& p = {}) {
  require(p.m_bar >= 1, "at least one outer iteration is required");
  std::size_t N = static_cast<std::size_t>(inst.N);
  std::size_t T = static_cast<std::size_t>(inst.T);
  double alpha = p.alpha.value_or(inst.alpha);
  double beta = p.beta.value_or(inst.beta);
  DerivedBounds bounds = derive_bounds(inst, set, p);

  PolicyParams point;
  point.K0 = weighted_demand(inst.W, inst.xi0);
  for (std::size_t n = 0; n < N; ++n)
    point.K0[n] = std::clamp(point.K0[n], 0LL, inst.k_max[n]);
  point.u = 0.0;
  point.theta1.assign(N, 0);
  point.theta2 = Matrix(N, T + 1, 0.0);

  DecompositionResult res;
  double v_lb = -kInf, v_ub = kInf;
  // Lowest evaluated mean recourse per visited first-stage pattern; feeds the
  // improvement phase's integer-optimality cuts.
  std::map<std::vector<std::uint8_t>, double> pattern_value;

  auto run_iteration = [&](int m_i, bool add_subgradient) {
    auto t0 = std::chrono::steady_clock::now();
    IterationTrace row;
    row.m = m_i;
    Matrix th2;
    if (p.theta2_fixed) {
      th2 = *p.theta2_fixed;
    } else {
      SaResult sa = approximate_theta2(inst, set, point, m_i, bounds, p);
      th2 = sa.theta2;
      row.sa_iterations = sa.iterations;
      row.ssp_nodes = sa.nodes;
    }
    PolicyParams cand = point;
    cand.theta2 = th2;
    PointEvaluation ev = evaluate_candidate(inst, set, cand, alpha, beta);
    if (add_subgradient) res.cuts.push_back(ev.cut);
    auto pat = first_stage_pattern(cand.K0, cand.theta1, inst);
    auto it = pattern_value.find(pat);
    if (it == pattern_value.end() || ev.mean_recourse < it->second)
      pattern_value[pat] = ev.mean_recourse;
    if (ev.candidate_value < res.objective) {
      res.objective = ev.candidate_value;
      res.policy = cand;
    }
    v_ub = std::min(v_ub, ev.candidate_value);
    row.candidate = ev.candidate_value;
    row.incumbent = res.objective;
    row.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    return row;
  };

  for (int m_i = 1; m_i <= p.m_bar; ++m_i) {
    if (v_ub - v_lb <= p.epsilon) break;
    IterationTrace row = run_iteration(m_i, true);
    auto t0 = std::chrono::steady_clock::now();
    MasterResult ms = solve_master(inst, res.cuts, bounds, p, beta);
    v_lb = std::max(v_lb, ms.proven ? ms.value : ms.bound);
    point.K0 = ms.K0;
    point.u = ms.u;
    point.theta1 = ms.theta1;
    row.v_lb = v_lb;
    row.v_ub = v_ub;
    row.cuts_active = res.cuts.size();
    row.wall_ms += std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
    res.trace.push_back(row);
    res.iterations = m_i;
  }
  res.v_lb = v_lb;
  res.v_ub = v_ub;

  // Improvement phase: pin every visited pattern with an integer-optimality
  // cut and keep iterating. Subgradient cuts continue to accumulate until the
  // master first returns an already-evaluated pattern; from then on the pool
  // is frozen and each repeat instead relaxes it by dropping the cut with the
  // minimum slack, steering the search out of the local solution. Every
  // proposal is still evaluated, so revisiting a pattern at a better risk
  // threshold can improve the incumbent.
  int m_i = res.iterations;
  bool frozen = false;
  for (int round = 0; round < p.multicut_rounds; ++round) {
    res.cuts.erase(std::remove_if(res.cuts.begin(), res.cuts.end(),
                                  [](const Cut& c) {
                                    return c.kind == Cut::Kind::kIntegerOptimality;
                                  }),
                   res.cuts.end());
    for (const auto& [pat, q] : pattern_value) {
      Cut c;
      c.kind = Cut::Kind::kIntegerOptimality;
      c.pattern = pat;
      c.q = q;
      res.cuts.push_back(c);
    }
    MasterResult ms = solve_master(inst, res.cuts, bounds, p, beta);
    bool repeated = pattern_value.count(first_stage_pattern(ms.K0, ms.theta1, inst)) > 0;
    point.K0 = ms.K0;
    point.u = ms.u;
    point.theta1 = ms.theta1;
    IterationTrace row = run_iteration(++m_i, !frozen && !repeated);
    if (repeated) {
      frozen = true;
      int drop = -1;
      double best_slack = kInf;
      for (std::size_t i = 0; i < res.cuts.size(); ++i) {
        const Cut& c = res.cuts[i];
        if (c.kind != Cut::Kind::kSubgradient) continue;
        if (c.slack < best_slack) {
          best_slack = c.slack;
          drop = static_cast<int>(i);
        }
      }
      if (drop >= 0) {
        row.removed_cut = drop;
        res.cuts.erase(res.cuts.begin() + drop);
      }
    }
    row.v_lb = res.v_lb;
    row.v_ub = v_ub;
    row.cuts_active = res.cuts.size();
    res.trace.push_back(row);
  }
  res.iterations = m_i;
  res.v_ub = v_ub;
  require(res.objective < kInf, "no candidate was evaluated");
  return res;
}

// ---------------------------------------------------------------------------
// Exact scenario-coupled model (small instances only)

struct MonolithicParams {
  std::optional<double> alpha, beta;
  double gap_rel = 1e-9;
  long node_limit = -1;
  std::size_t max_binaries = 500;
  double eps_strict = 1e-6;
  std::optional<Matrix> theta2_fixed;
  std::optional<double> u_lo, u_hi;
  int heuristic_period = 25;
};

/// Structural binary count of the scenario-coupled model: initial-cost
/// segment selectors plus, per scenario and period, one trigger indicator
/// and one selector per cost segment.
inline std::size_t monolithic_binary_count(const Instance& inst, std::size_t S) {
  std::size_t c = 0;
  for (int n = 0; n < inst.N; ++n) c += inst.cost(n, 0).segments();
  std::size_t per_s = 0;
  for (int n = 0; n < inst.N; ++n)
    for (int t = 1; t <= inst.T; ++t) per_s += 1 + inst.cost(n, t).segments();
  return c + S * per_s;
}

struct MonolithicResult {
  PolicyParams policy;
  double objective = 0.0;
  double bound = 0.0;
  bool proven = false;
  long nodes = 0;
  std::size_t binaries = 0;
};

/// Solves the sample-average problem exactly over all scenarios at once.
/// Refuses instances whose structural binary count exceeds the guard, since
/// the model grows linearly in scenarios and is only intended as a
/// cross-check on small cases.
inline MonolithicResult solve_monolithic(const Instance& inst, const ScenarioSet& set,
                                         const MonolithicParams& mono = {}) {
  std::size_t N = static_cast<std::size_t>(inst.N);
  std::size_t T = static_cast<std::size_t>(inst.T);
  double alpha = mono.alpha.value_or(inst.alpha);
  double beta = mono.beta.value_or(inst.beta);
  double w = tail_weight(alpha, beta);
  std::size_t nb = monolithic_binary_count(inst, set.S);
  require(nb <= mono.max_binaries,
          "scenario-coupled model needs " + std::to_string(nb) + " binaries, above the " +
              std::to_string(mono.max_binaries) +
              " guard; use the decomposition for instances of this size");

  AlgoParams ap;
  ap.alpha = alpha;
  ap.beta = beta;
  ap.u_lo = mono.u_lo;
  ap.u_hi = mono.u_hi;
  ap.eps_strict = mono.eps_strict;
  DerivedBounds bounds = derive_bounds(inst, set, ap);

  LpModel m;
  std::vector<int> K0v(N), th1v(N);
  for (std::size_t n = 0; n < N; ++n)
    K0v[n] = m.add_int_var(0.0, static_cast<double>(inst.k_max[n]), 0.0,
                           "K0_" + std::to_string(n));
  int uv = m.add_var(bounds.u_lo, bounds.u_hi, 1.0 - beta, "u");
  for (std::size_t n = 0; n < N; ++n)
    th1v[n] = m.add_int_var(0.0, static_cast<double>(inst.theta1_max[n]), 0.0,
                            "th1_" + std::to_string(n));
  std::vector<detail_dec::CostEncoding> enc0(N);
  std::vector<std::pair<int, double>> c0_terms;
  for (std::size_t n = 0; n < N; ++n) {
    enc0[n] = detail_dec::add_cost_encoding(m, inst.cost(static_cast<int>(n), 0),
                                            static_cast<double>(inst.k_max[n]), beta,
                                            "c0_" + std::to_string(n));
    std::vector<std::pair<int, double>> terms{{K0v[n], 1.0}};
    for (int wi : enc0[n].w) terms.push_back({wi, -1.0});
    m.add_eq(0.0, terms);
    detail_dec::append_cost_terms(c0_terms, enc0[n], inst.cost(static_cast<int>(n), 0), 1.0);
  }
  std::vector<int> th2(N * T, -1);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 1; t <= T; ++t) {
      double lo = 0.0, hi = bounds.theta2_max(n, t);
      if (mono.theta2_fixed) lo = hi = (*mono.theta2_fixed)(n, t);
      th2[n * T + (t - 1)] =
          m.add_var(lo, hi, 0.0, "th2_" + std::to_string(n) + "_" + std::to_string(t));
    }

  detail_dec::FirstStageView fs;
  fs.K0_var = &K0v;
  fs.th1_var = &th1v;
  fs.u_var = uv;
  double weight = 1.0 / static_cast<double>(set.S);
  std::vector<detail_dec::ScenarioBlock> blocks;
  blocks.reserve(set.S);
  double const_term = 0.0;
  for (std::size_t s = 0; s < set.S; ++s) {
    blocks.push_back(detail_dec::add_scenario_block(m, inst, set, s, fs, th2, c0_terms, 0.0,
                                                    bounds, weight, beta, w, mono.eps_strict));
    const_term += weight * beta * blocks.back().b_const;
  }

  MipParams mp;
  mp.gap_rel = mono.gap_rel;
  mp.node_limit = mono.node_limit;
  mp.heuristic_period = mono.heuristic_period;
  mp.priority.assign(m.num_vars(), 0);
  for (int j : K0v) mp.priority[static_cast<std::size_t>(j)] = 3;
  for (int j : th1v) mp.priority[static_cast<std::size_t>(j)] = 3;
  for (const auto& blk : blocks)
    for (int dv : blk.delta) mp.priority[static_cast<std::size_t>(dv)] = 2;
  for (const auto& e : enc0)
    for (int ti : e.tau) mp.priority[static_cast<std::size_t>(ti)] = 1;
  for (const auto& blk : blocks)
    for (const auto& e : blk.enc)
      for (int ti : e.tau) mp.priority[static_cast<std::size_t>(ti)] = 1;

  Matrix th2_ub(N, T + 1, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 1; t <= T; ++t)
      th2_ub(n, t) = m.ub[static_cast<std::size_t>(th2[n * T + (t - 1)])];
  mp.heuristic = [&](const std::vector<double>& relax) -> std::optional<std::vector<double>> {
    PolicyParams cand;
    cand.K0.resize(N);
    cand.theta1.resize(N);
    for (std::size_t n = 0; n < N; ++n) {
      cand.K0[n] = std::clamp<long long>(
          std::llround(relax[static_cast<std::size_t>(K0v[n])]), 0, inst.k_max[n]);
      cand.theta1[n] = std::clamp<long long>(
          std::llround(relax[static_cast<std::size_t>(th1v[n])]), 0, inst.theta1_max[n]);
    }
    cand.theta2 = Matrix(N, T + 1, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 1; t <= T; ++t)
        cand.theta2(n, t) =
            std::clamp(relax[static_cast<std::size_t>(th2[n * T + (t - 1)])],
                       m.lb[static_cast<std::size_t>(th2[n * T + (t - 1)])], th2_ub(n, t));
    // Fixpoint of the threshold lift across scenarios: raising a threshold
    // never fires a trigger, but it can silence one in another scenario, so
    // trajectories are replayed until no lift is needed.
    std::vector<Trajectory> trs(set.S);
    bool stable = false;
    for (int pass = 0; pass < 30 && !stable; ++pass) {
      stable = true;
      for (std::size_t s = 0; s < set.S; ++s) trs[s] = simulate_trajectory(cand, set, s, inst);
      for (std::size_t s = 0; s < set.S; ++s) {
        Matrix before = cand.theta2;
        if (!detail_dec::lift_blocked_thresholds(cand.theta2, trs[s], bounds, mono.eps_strict,
                                                 &th2_ub))
          return std::nullopt;
        if (cand.theta2.data != before.data) stable = false;
      }
    }
    if (!stable) return std::nullopt;
    std::vector<double> q(set.S);
    for (std::size_t s = 0; s < set.S; ++s) q[s] = trs[s].Q;
    cand.u = std::clamp(empirical_var(q, alpha), bounds.u_lo, bounds.u_hi);
    std::vector<double> x(m.num_vars(), 0.0);
    for (std::size_t n = 0; n < N; ++n) {
      x[static_cast<std::size_t>(K0v[n])] = static_cast<double>(cand.K0[n]);
      x[static_cast<std::size_t>(th1v[n])] = static_cast<double>(cand.theta1[n]);
      double k0 = static_cast<double>(cand.K0[n]);
      const detail_dec::CostEncoding& e = enc0[n];
      for (std::size_t kk = 0; kk < e.windows.size(); ++kk) {
        bool inside = k0 >= e.windows[kk].lo && k0 <= e.windows[kk].hi;
        x[static_cast<std::size_t>(e.w[kk])] = inside ? k0 : 0.0;
        x[static_cast<std::size_t>(e.tau[kk])] = inside ? 1.0 : 0.0;
      }
    }
    x[static_cast<std::size_t>(uv)] = cand.u;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 1; t <= T; ++t)
        x[static_cast<std::size_t>(th2[n * T + (t - 1)])] = cand.theta2(n, t);
    for (std::size_t s = 0; s < set.S; ++s)
      detail_dec::fill_block_assignment(x, m, inst, blocks[s], trs[s], cand.u);
    return x;
  };

  MipSolution sol = solve_milp(m, mp);
  require(sol.has_incumbent, "scenario-coupled model found no feasible point");

  MonolithicResult out;
  out.policy.K0.resize(N);
  out.policy.theta1.resize(N);
  out.policy.theta2 = Matrix(N, T + 1, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    out.policy.K0[n] = std::llround(sol.x[static_cast<std::size_t>(K0v[n])]);
    out.policy.theta1[n] = std::llround(sol.x[static_cast<std::size_t>(th1v[n])]);
    for (std::size_t t = 1; t <= T; ++t)
      out.policy.theta2(n, t) = sol.x[static_cast<std::size_t>(th2[n * T + (t - 1)])];
  }
  out.policy.u = sol.x[static_cast<std::size_t>(uv)];
  out.objective = sol.obj + const_term;
  out.bound = sol.bound + const_term;
  out.proven = sol.proven;
  out.nodes = sol.nodes;
  out.binaries = nb;
  return out;
}

}  // namespace mcep
