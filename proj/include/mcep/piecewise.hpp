#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mcep/common.hpp"

namespace mcep {

/// Piecewise-linear expansion cost. Segment l (0-based) covers the half-open
/// interval [a[l], a[l+1]) and evaluates to p[l]*x + q[l]. Invariants:
/// a[0] == 0, breakpoints strictly increasing, and the owning facility's
/// K_max < a.back() so evaluation is total on [0, K_max].
struct PiecewiseCost {
  std::vector<double> a;  // breakpoints, size L+1
  std::vector<double> p;  // slopes, size L
  std::vector<double> q;  // intercepts, size L

  std::size_t segments() const { return p.size(); }

  /// Index of the segment containing x; requires a[0] <= x < a.back().
  std::size_t segment_of(double x) const {
    require(x >= a.front() && x < a.back(), "expansion outside cost domain");
    auto it = std::upper_bound(a.begin(), a.end(), x);
    return static_cast<std::size_t>(it - a.begin()) - 1;
  }

  double eval(double x) const {
    std::size_t l = segment_of(x);
    return p[l] * x + q[l];
  }

  void check() const {
    require(!p.empty() && a.size() == p.size() + 1 && q.size() == p.size(),
            "piecewise cost: inconsistent sizes");
    require(a.front() == 0.0, "breakpoints must start at 0");
    for (std::size_t l = 0; l + 1 < a.size(); ++l)
      require(a[l] < a[l + 1], "breakpoints must be strictly increasing");
  }
};

/// Two segments: [0,1) free, [1,K_max+1) at fixed + marginal*x.
inline PiecewiseCost build_fixed_charge_cost(double fixed, double marginal, long long k_max) {
  require(fixed >= 0 && marginal >= 0, "fixed-charge cost: negative parameters");
  require(k_max >= 1, "fixed-charge cost: K_max must be >= 1");
  PiecewiseCost c;
  c.a = {0.0, 1.0, static_cast<double>(k_max) + 1.0};
  c.p = {0.0, marginal};
  c.q = {0.0, fixed};
  c.check();
  return c;
}

/// Chords of scale*x^v anchored at (0, 2^0, ..., 2^{L-1}) with
/// 2^{L-2} <= K_max <= 2^{L-1}. When K_max equals the last anchor the final
/// breakpoint is pushed to K_max+1 (same chord), keeping K_max < a.back().
/// Max relative gap to the power function over integer x in [1,K_max] < 1.5%.
inline PiecewiseCost build_power_cost(double scale, double v, long long k_max) {
  require(scale >= 0, "power cost: negative scale");
  require(v >= 0 && v < 1, "power cost: exponent must lie in [0,1)");
  require(k_max >= 1, "power cost: K_max must be >= 1");
  std::size_t L = 1;
  while ((1LL << (L - 1)) < k_max) ++L;
  std::vector<double> anchor_x(L + 1);
  anchor_x[0] = 0.0;
  for (std::size_t l = 1; l <= L; ++l) anchor_x[l] = static_cast<double>(1LL << (l - 1));
  PiecewiseCost c;
  c.a.resize(L + 1);
  c.p.resize(L);
  c.q.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    double x0 = anchor_x[l], x1 = anchor_x[l + 1];
    double y0 = scale * std::pow(x0, v), y1 = scale * std::pow(x1, v);
    if (x0 == 0.0) y0 = 0.0;
    c.a[l] = x0;
    c.p[l] = (y1 - y0) / (x1 - x0);
    c.q[l] = y0 - c.p[l] * x0;
  }
  c.a[L] = std::max(anchor_x[L], static_cast<double>(k_max) + 1.0);
  c.check();
  return c;
}

/// One constant segment [k, k+1) per table entry; reproduces the table exactly
/// at integer points.
inline PiecewiseCost build_table_cost(const std::vector<double>& values) {
  require(!values.empty(), "table cost: empty table");
  PiecewiseCost c;
  std::size_t L = values.size();
  c.a.resize(L + 1);
  c.p.assign(L, 0.0);
  c.q = values;
  for (std::size_t l = 0; l <= L; ++l) c.a[l] = static_cast<double>(l);
  c.check();
  return c;
}

inline double eval_expansion_cost(const PiecewiseCost& cost, double delta_k) {
  return cost.eval(delta_k);
}

}  // namespace mcep
