#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "mcep/common.hpp"
#include "mcep/rng.hpp"

namespace mcep {

/// Demand sample paths, flat-indexed (scenario s, period t in 0..T, customer i).
/// xi[s][0][*] is identical across scenarios (t = 0 demand is known).
struct ScenarioSet {
  std::size_t S = 0;
  int T = 0;
  int I = 0;
  std::uint64_t seed = 0;
  double mu_bar = 0.0;
  double sigma_bar = 0.0;
  std::vector<double> xi;  // size S * (T+1) * I

  double at(std::size_t s, int t, int i) const {
    return xi[(s * (static_cast<std::size_t>(T) + 1) + static_cast<std::size_t>(t)) *
                  static_cast<std::size_t>(I) +
              static_cast<std::size_t>(i)];
  }
  double& at(std::size_t s, int t, int i) {
    return xi[(s * (static_cast<std::size_t>(T) + 1) + static_cast<std::size_t>(t)) *
                  static_cast<std::size_t>(I) +
              static_cast<std::size_t>(i)];
  }
  /// Pointer to the I demands of (s, t).
  const double* row(std::size_t s, int t) const {
    return &xi[(s * (static_cast<std::size_t>(T) + 1) + static_cast<std::size_t>(t)) *
               static_cast<std::size_t>(I)];
  }
};

/// Multiplicative random walk xi_t = max(0, (1 + mu_bar + sigma_bar*omega) * xi_{t-1})
/// with omega iid standard normal per (s, t, i); when share_shocks is set one
/// omega per (s, t) drives every customer. Scenario s draws from its own
/// substream, so the set is reproducible and independent of generation order.
inline ScenarioSet generate_gbm(const std::vector<double>& xi0, double mu_bar, double sigma_bar,
                                int T, std::size_t S, std::uint64_t seed,
                                bool share_shocks = false) {
  require(T >= 1, "generate_gbm: T must be >= 1");
  require(S >= 1, "generate_gbm: S must be >= 1");
  for (double x : xi0) require(x >= 0, "generate_gbm: xi0 must be nonnegative");
  ScenarioSet set;
  set.S = S;
  set.T = T;
  set.I = static_cast<int>(xi0.size());
  set.seed = seed;
  set.mu_bar = mu_bar;
  set.sigma_bar = sigma_bar;
  set.xi.resize(S * (static_cast<std::size_t>(T) + 1) * xi0.size());
  for (std::size_t s = 0; s < S; ++s) {
    Rng rng(seed, "gbm", s);
    for (int i = 0; i < set.I; ++i) set.at(s, 0, i) = xi0[static_cast<std::size_t>(i)];
    for (int t = 1; t <= T; ++t) {
      double shared = share_shocks ? rng.next_normal() : 0.0;
      for (int i = 0; i < set.I; ++i) {
        double omega = share_shocks ? shared : rng.next_normal();
        double grown = (1.0 + mu_bar + sigma_bar * omega) * set.at(s, t - 1, i);
        set.at(s, t, i) = grown > 0.0 ? grown : 0.0;
      }
    }
  }
  return set;
}

/// Rounded weighted demand per facility: round(W^T xi), half away from zero.
inline std::vector<long long> weighted_demand(const Matrix& W, const double* xi_t) {
  std::vector<long long> r(W.cols);
  for (std::size_t n = 0; n < W.cols; ++n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < W.rows; ++i) acc += W(i, n) * xi_t[i];
    r[n] = iround(acc);
  }
  return r;
}

inline std::vector<long long> weighted_demand(const Matrix& W, const std::vector<double>& xi_t) {
  return weighted_demand(W, xi_t.data());
}

/// CSV persistence, header "s,t,i,xi", values at full round-trip precision.
inline void write_scenarios_csv(const ScenarioSet& set, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot open scenario file for writing: " + path);
  out << "s,t,i,xi\n";
  for (std::size_t s = 0; s < set.S; ++s)
    for (int t = 0; t <= set.T; ++t)
      for (int i = 0; i < set.I; ++i)
        out << s << ',' << t << ',' << i << ',' << fmt_full(set.at(s, t, i)) << '\n';
  require(out.good(), "failed writing scenario file: " + path);
}

inline ScenarioSet read_scenarios_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open scenario file: " + path);
  std::string header;
  std::getline(in, header);
  require(header == "s,t,i,xi", "scenario file must start with header s,t,i,xi");
  struct Entry {
    std::size_t s;
    int t, i;
    double xi;
  };
  std::vector<Entry> entries;
  std::size_t max_s = 0;
  int max_t = 0, max_i = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Entry e;
    char* end = nullptr;
    e.s = std::strtoull(line.c_str(), &end, 10);
    require(*end == ',', "malformed scenario row: " + line);
    e.t = static_cast<int>(std::strtol(end + 1, &end, 10));
    require(*end == ',', "malformed scenario row: " + line);
    e.i = static_cast<int>(std::strtol(end + 1, &end, 10));
    require(*end == ',', "malformed scenario row: " + line);
    e.xi = std::strtod(end + 1, &end);
    entries.push_back(e);
    max_s = std::max(max_s, e.s);
    max_t = std::max(max_t, e.t);
    max_i = std::max(max_i, e.i);
  }
  require(!entries.empty(), "scenario file has no rows: " + path);
  ScenarioSet set;
  set.S = max_s + 1;
  set.T = max_t;
  set.I = max_i + 1;
  set.xi.assign(set.S * (static_cast<std::size_t>(set.T) + 1) * static_cast<std::size_t>(set.I),
                -1.0);
  for (const Entry& e : entries) set.at(e.s, e.t, e.i) = e.xi;
  for (double x : set.xi) require(x >= 0, "scenario file is missing entries or has negatives");
  return set;
}

}  // namespace mcep
