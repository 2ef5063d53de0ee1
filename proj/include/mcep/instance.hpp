#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcep/common.hpp"
#include "mcep/piecewise.hpp"

namespace mcep {

using json = nlohmann::json;

/// Validated problem data. Immutable after construction; safe to share across
/// workers. Time indices: periods run t = 1..T (allocation, revenue, penalty);
/// expansion costs exist for t = 0..T (t = 0 is the initial build).
struct Instance {
  int N = 0;  // facilities
  int I = 0;  // customers
  int T = 0;  // periods
  double gamma = 1.0;
  double unit_size = 1.0;  // demand units per capacity unit
  double periods_scale = 1.0;

  std::vector<Matrix> r;  // r[t] is I x N, money per demand unit; t = 1..T (r[0] mirrors r[1])
  Matrix b;               // (T+1) x I, money per demand unit; row t used for t >= 1

  std::vector<std::vector<PiecewiseCost>> costs;  // costs[n][t], t = 0..T

  std::vector<double> xi0;        // initial demand per customer
  std::vector<long long> k_max;   // capacity ceiling per facility
  Matrix W;                       // I x N, capacity units per demand unit

  std::vector<long long> theta1_max;           // per facility
  std::optional<Matrix> theta2_max;            // N x (T+1) when present; column t used for t >= 1

  double alpha = 0.95;
  double beta = 0.99;

  double gbm_mu = 0.04;     // default drift for scenario generation
  double gbm_sigma = 0.16;  // default volatility

  const Matrix& rt(int t) const { return r[static_cast<std::size_t>(t)]; }
  double bt(int t, int i) const { return b(static_cast<std::size_t>(t), static_cast<std::size_t>(i)); }
  const PiecewiseCost& cost(int n, int t) const {
    return costs[static_cast<std::size_t>(n)][static_cast<std::size_t>(t)];
  }
  double discount(int t) const { return std::pow(gamma, t); }
};

/// Checks every structural invariant; returns human-readable violations.
inline std::vector<std::string> instance_violations(const Instance& v) {
  std::vector<std::string> errs;
  auto bad = [&](const std::string& m) { errs.push_back(m); };

  if (v.N < 1) bad("N must be >= 1");
  if (v.I < 1) bad("I must be >= 1");
  if (v.T < 1) bad("T must be >= 1");
  if (!(v.gamma > 0.0 && v.gamma <= 1.0)) bad("gamma must lie in (0,1]");
  if (!(v.unit_size > 0.0)) bad("unit_size must be positive");
  if (!(v.periods_scale > 0.0)) bad("periods_scale must be positive");
  if (!(v.alpha > 0.0 && v.alpha < 1.0)) bad("alpha must lie in (0,1)");
  if (!(v.beta >= 0.0 && v.beta <= 1.0)) bad("beta must lie in [0,1]");
  if (v.N < 1 || v.I < 1 || v.T < 1) return errs;

  std::size_t N = static_cast<std::size_t>(v.N), I = static_cast<std::size_t>(v.I),
              T = static_cast<std::size_t>(v.T);
  if (v.r.size() != T + 1) bad("r must carry one I x N matrix per period 1..T");
  for (std::size_t t = 0; t < v.r.size(); ++t) {
    if (v.r[t].rows != I || v.r[t].cols != N) bad("r[" + std::to_string(t) + "] is not I x N");
    for (double x : v.r[t].data)
      if (x < 0) { bad("revenues must be nonnegative"); break; }
  }
  if (v.b.rows != T + 1 || v.b.cols != I) bad("b must be (T+1) x I");
  for (double x : v.b.data)
    if (x < 0) { bad("penalties must be nonnegative"); break; }
  if (v.xi0.size() != I) bad("xi0 must have I entries");
  for (double x : v.xi0)
    if (x < 0) { bad("xi0 must be nonnegative"); break; }
  if (v.k_max.size() != N) bad("K_max must have N entries");
  for (long long k : v.k_max)
    if (k < 1) { bad("K_max must be >= 1 componentwise"); break; }
  if (v.W.rows != I || v.W.cols != N) bad("W must be I x N");
  for (double x : v.W.data)
    if (x < 0) { bad("W must be nonnegative"); break; }
  for (std::size_t n = 0; n < N && v.W.rows == I && v.W.cols == N; ++n) {
    bool positive = false;
    for (std::size_t i = 0; i < I; ++i) positive = positive || v.W(i, n) > 0;
    if (!positive) bad("W column " + std::to_string(n) + " has no positive entry");
  }
  if (v.theta1_max.size() != N) bad("theta1_max must have N entries");
  for (long long x : v.theta1_max)
    if (x < 0) { bad("theta1_max must be nonnegative"); break; }
  if (v.theta2_max) {
    if (v.theta2_max->rows != N || v.theta2_max->cols != T + 1) bad("theta2_max must be N x (T+1)");
    for (double x : v.theta2_max->data)
      if (x < 0) { bad("theta2_max must be nonnegative"); break; }
  }
  if (v.costs.size() != N) bad("costs must have one row per facility");
  for (std::size_t n = 0; n < v.costs.size(); ++n) {
    if (v.costs[n].size() != T + 1) {
      bad("costs[" + std::to_string(n) + "] must cover periods 0..T");
      continue;
    }
    for (std::size_t t = 0; t <= T; ++t) {
      const PiecewiseCost& c = v.costs[n][t];
      try {
        c.check();
      } catch (const McepError& e) {
        bad("costs[" + std::to_string(n) + "][" + std::to_string(t) + "]: " + e.what());
        continue;
      }
      if (n < v.k_max.size() && !(static_cast<double>(v.k_max[n]) < c.a.back()))
        bad("costs[" + std::to_string(n) + "][" + std::to_string(t) +
            "]: K_max must be < last breakpoint");
    }
  }
  return errs;
}

namespace detail {

inline PiecewiseCost cost_from_json(const json& j, long long k_max) {
  std::string type = j.at("type").get<std::string>();
  if (type == "fixed_charge")
    return build_fixed_charge_cost(j.at("fixed").get<double>(), j.at("marginal").get<double>(), k_max);
  if (type == "power")
    return build_power_cost(j.at("scale").get<double>(), j.at("v").get<double>(), k_max);
  if (type == "table")
    return build_table_cost(j.at("values").get<std::vector<double>>());
  if (type == "pwl") {
    PiecewiseCost c;
    c.a = j.at("breakpoints").get<std::vector<double>>();
    c.p = j.at("slopes").get<std::vector<double>>();
    c.q = j.at("intercepts").get<std::vector<double>>();
    c.check();
    return c;
  }
  throw McepError("unknown cost type: " + type);
}

inline Matrix matrix_from_json(const json& j) {
  Matrix m;
  m.rows = j.size();
  m.cols = m.rows ? j.at(0).size() : 0;
  m.data.reserve(m.rows * m.cols);
  for (const auto& row : j) {
    require(row.size() == m.cols, "ragged matrix in instance file");
    for (const auto& x : row) m.data.push_back(x.get<double>());
  }
  return m;
}

}  // namespace detail

/// Parses and validates an instance document. Broadcast shorthands: r may be a
/// single I x N matrix (constant over t); b may be a scalar or an I-vector;
/// costs may be a single spec or one spec per facility. periods_scale rescales
/// r and b (profit flow per model period), default 1.
inline Instance validate_instance(const json& doc) {
  Instance v;
  v.N = doc.at("N").get<int>();
  v.I = doc.at("I").get<int>();
  v.T = doc.at("T").get<int>();
  require(v.N >= 1 && v.I >= 1 && v.T >= 1, "N, I, T must be >= 1");
  std::size_t N = static_cast<std::size_t>(v.N), I = static_cast<std::size_t>(v.I),
              T = static_cast<std::size_t>(v.T);
  v.gamma = doc.at("gamma").get<double>();
  v.unit_size = doc.value("unit_size", 1.0);
  v.periods_scale = doc.value("periods_scale", 1.0);
  v.alpha = doc.value("alpha", 0.95);
  v.beta = doc.value("beta", 0.99);
  v.gbm_mu = doc.value("gbm_mu", 0.04);
  v.gbm_sigma = doc.value("gbm_sigma", 0.16);

  const json& jr = doc.at("r");
  bool r_per_period = jr.is_array() && !jr.empty() && jr.at(0).is_array() &&
                      !jr.at(0).empty() && jr.at(0).at(0).is_array();
  v.r.resize(T + 1);
  if (r_per_period) {
    require(jr.size() == T, "per-period r must have T entries");
    for (std::size_t t = 1; t <= T; ++t) v.r[t] = detail::matrix_from_json(jr.at(t - 1));
  } else {
    Matrix m = detail::matrix_from_json(jr);
    for (std::size_t t = 1; t <= T; ++t) v.r[t] = m;
  }
  v.r[0] = v.r[1];

  const json& jb = doc.at("b");
  v.b = Matrix(T + 1, I, 0.0);
  for (std::size_t t = 1; t <= T; ++t)
    for (std::size_t i = 0; i < I; ++i) {
      if (jb.is_number())
        v.b(t, i) = jb.get<double>();
      else if (!jb.empty() && jb.at(0).is_array())
        v.b(t, i) = jb.at(t - 1).at(i).get<double>();
      else
        v.b(t, i) = jb.at(i).get<double>();
    }

  if (v.periods_scale != 1.0) {
    for (auto& m : v.r)
      for (double& x : m.data) x *= v.periods_scale;
    for (double& x : v.b.data) x *= v.periods_scale;
  }

  v.xi0 = doc.at("xi0").get<std::vector<double>>();
  v.k_max = doc.at("K_max").get<std::vector<long long>>();
  require(v.k_max.size() == N, "K_max must have N entries");
  v.W = detail::matrix_from_json(doc.at("W"));

  if (doc.contains("theta1_max"))
    v.theta1_max = doc.at("theta1_max").get<std::vector<long long>>();
  else
    v.theta1_max = v.k_max;

  if (doc.contains("theta2_max")) {
    const json& j2 = doc.at("theta2_max");
    Matrix m(N, T + 1, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t <= T; ++t)
        m(n, t) = j2.is_number() ? j2.get<double>()
                                 : (j2.at(0).is_array() ? j2.at(n).at(std::min(t, T - 1)).get<double>()
                                                        : j2.at(n).get<double>());
    v.theta2_max = m;
  }

  const json& jc = doc.at("costs");
  v.costs.resize(N);
  for (std::size_t n = 0; n < N; ++n) {
    v.costs[n].resize(T + 1);
    const json* jn = &jc;
    if (jc.is_array()) jn = &jc.at(n);
    for (std::size_t t = 0; t <= T; ++t) {
      const json* jt = jn;
      if (jn->is_array()) jt = &jn->at(std::min(t, jn->size() - 1));
      v.costs[n][t] = detail::cost_from_json(*jt, v.k_max[n]);
    }
  }

  std::vector<std::string> errs = instance_violations(v);
  if (!errs.empty()) {
    std::ostringstream os;
    os << "invalid instance:";
    for (const std::string& e : errs) os << "\n  - " << e;
    throw McepError(os.str());
  }
  return v;
}

inline Instance load_instance(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open instance file: " + path);
  json doc = json::parse(in);
  return validate_instance(doc);
}

}  // namespace mcep
