#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "mcep/baseline.hpp"
#include "mcep/risk.hpp"
#include "test_util.hpp"

using namespace mcep;

namespace {

// One-facility, one-customer instance with unit weights: profit has the
// closed form (r+b)*min(xi, K) - b*xi = 8*min(xi, K) - 2*xi and the
// fixed-charge expansion cost is dk > 0 ? 3 + 2*dk : 0.
Instance line_instance(int T, long long k_max) {
  Instance v;
  v.N = 1;
  v.I = 1;
  v.T = T;
  v.gamma = 0.9;
  v.unit_size = 1.0;
  v.alpha = 0.8;
  v.beta = 0.5;
  v.r.assign(static_cast<std::size_t>(T) + 1, Matrix(1, 1, 6.0));
  v.b = Matrix(static_cast<std::size_t>(T) + 1, 1, 2.0);
  v.xi0 = {1.0};
  v.k_max = {k_max};
  v.W = Matrix(1, 1, 1.0);
  v.theta1_max = {2};
  v.costs.resize(1);
  v.costs[0].assign(static_cast<std::size_t>(T) + 1, build_fixed_charge_cost(3.0, 2.0, k_max));
  require(instance_violations(v).empty(), "toy instance must be valid");
  return v;
}

ScenarioSet manual_set(int T, int I, std::vector<double> flat) {
  ScenarioSet s;
  s.T = T;
  s.I = I;
  s.S = flat.size() / (static_cast<std::size_t>(T + 1) * static_cast<std::size_t>(I));
  s.xi = std::move(flat);
  return s;
}

// Fully closed-form discounted cost of a scalar plan on the line instance;
// independent of the LP and piecewise machinery.
double line_plan_cost(const std::vector<long long>& k, const std::vector<double>& path,
                      double gamma, int T) {
  double q = k[0] > 0 ? 3.0 + 2.0 * static_cast<double>(k[0]) : 0.0;
  for (int t = 1; t <= T; ++t) {
    auto tt = static_cast<std::size_t>(t);
    long long dk = k[tt] - k[tt - 1];
    double build = dk > 0 ? 3.0 + 2.0 * static_cast<double>(dk) : 0.0;
    double profit = 8.0 * std::min(path[tt], static_cast<double>(k[tt - 1])) - 2.0 * path[tt];
    q += std::pow(gamma, t) * (build - profit);
  }
  return q;
}

// Random nondecreasing plan within the instance's boxes.
std::vector<std::vector<long long>> random_plan(Rng& rng, const Instance& inst) {
  std::size_t N = static_cast<std::size_t>(inst.N);
  std::vector<std::vector<long long>> plan(static_cast<std::size_t>(inst.T) + 1,
                                           std::vector<long long>(N, 0));
  for (std::size_t n = 0; n < N; ++n) {
    long long k = static_cast<long long>(
        rng.next_below(static_cast<std::uint64_t>(inst.k_max[n]) + 1));
    for (std::size_t t = 0; t < plan.size(); ++t) {
      plan[t][n] = k;
      k = std::min(k + static_cast<long long>(rng.next_below(2)), inst.k_max[n]);
    }
  }
  return plan;
}

// Expected discounted negative profit of a plan, priced by fresh LP solves.
double exact_mean_recourse(const std::vector<std::vector<long long>>& plan,
                           const ScenarioSet& set, const Instance& inst) {
  double acc = 0.0;
  for (std::size_t s = 0; s < set.S; ++s)
    acc += plan_scenario_cut(plan, set, s, inst).gen_value;
  return acc / static_cast<double>(set.S);
}

}  // namespace

TEST_CASE("zero demand commits no capacity", "[baseline]") {
  Instance inst = line_instance(3, 3);
  inst.xi0 = {0.0};
  ScenarioSet set = manual_set(3, 1, std::vector<double>(8, 0.0));  // S = 2, all zero

  InflexiblePlan plan = solve_inflexible(inst, set);
  REQUIRE(plan.converged);
  for (const auto& row : plan.K)
    for (long long k : row) CHECK(k == 0);
  CHECK(plan.cost == Catch::Approx(0.0).margin(1e-10));
  CHECK(plan.enpv == Catch::Approx(0.0).margin(1e-10));
  CHECK(plan.gap <= 1e-9);
}

TEST_CASE("deterministic plan search matches closed-form enumeration", "[baseline]") {
  Instance inst = line_instance(2, 2);
  std::vector<std::vector<double>> paths = {
      {1.0, 1.0, 1.0}, {1.0, 1.6, 2.4}, {2.0, 1.2, 0.4}, {0.6, 2.4, 0.8}};
  for (const auto& path : paths) {
    INFO("path " << path[0] << "," << path[1] << "," << path[2]);
    ScenarioSet set = manual_set(2, 1, path);

    double best = kInf;
    std::vector<long long> best_k;
    for (long long k0 = 0; k0 <= 2; ++k0)
      for (long long k1 = k0; k1 <= 2; ++k1)
        for (long long k2 = k1; k2 <= 2; ++k2) {
          double q = line_plan_cost({k0, k1, k2}, path, inst.gamma, inst.T);
          if (q < best) {
            best = q;
            best_k = {k0, k1, k2};
          }
        }

    InflexiblePlan plan = solve_inflexible(inst, set);
    REQUIRE(plan.converged);
    CHECK(plan.cost == Catch::Approx(best).margin(1e-7));
    std::vector<long long> got{plan.K[0][0], plan.K[1][0], plan.K[2][0]};
    CHECK(line_plan_cost(got, path, inst.gamma, inst.T) == Catch::Approx(best).margin(1e-7));
  }
}

TEST_CASE("cuts are tight at their plan and valid minorants elsewhere", "[baseline]") {
  Rng rng(2024, "baseline-cuts", 0);
  for (int trial = 0; trial < 6; ++trial) {
    Instance inst = testing::random_small_instance(rng, 2, 2, 3);
    ScenarioSet set =
        generate_gbm(inst.xi0, 0.1, 0.3, inst.T, 4, 100 + static_cast<std::uint64_t>(trial));
    auto plan = random_plan(rng, inst);
    INFO("trial " << trial);

    std::vector<BendersCut> per_s;
    for (std::size_t s = 0; s < set.S; ++s) {
      per_s.push_back(plan_scenario_cut(plan, set, s, inst));
      CHECK(per_s.back().gen_error <= 1e-8);
    }
    BendersCut mean_cut = benders_cut(per_s);
    CHECK(cut_value(mean_cut, plan) ==
          Catch::Approx(mean_cut.gen_value).margin(1e-8 * (1.0 + std::abs(mean_cut.gen_value))));

    for (int other = 0; other < 6; ++other) {
      auto probe = random_plan(rng, inst);
      double exact = exact_mean_recourse(probe, set, inst);
      double minorant = cut_value(mean_cut, probe);
      CHECK(exact >= minorant - 1e-7 * (1.0 + std::abs(exact)));
    }
  }
}

TEST_CASE("slack capacity yields a flat cut", "[baseline]") {
  Instance inst = line_instance(2, 8);
  ScenarioSet set = manual_set(2, 1, {1.0, 1.0, 1.0});
  std::vector<std::vector<long long>> plan(3, std::vector<long long>{8});

  BendersCut cut = plan_scenario_cut(plan, set, 0, inst);
  for (double gv : cut.g.data) CHECK(std::abs(gv) <= 1e-9);
  // Binding supply rows price at r + b, so the scenario value is
  // -sum_t gamma^t * 6 * xi_t.
  double expect = -(0.9 * 6.0 + 0.81 * 6.0);
  CHECK(cut.gen_value == Catch::Approx(expect).margin(1e-9));
  CHECK(cut.gen_error <= 1e-9);
}

TEST_CASE("bounds sandwich, converge, and certify the reported plan", "[baseline]") {
  Instance inst = line_instance(4, 4);
  ScenarioSet set = generate_gbm(inst.xi0, 0.25, 0.35, inst.T, 12, 7);
  BaselineParams p;
  p.tol = 1e-9;

  InflexiblePlan plan = solve_inflexible(inst, set, p);
  REQUIRE(plan.converged);
  CHECK(plan.gap <= p.tol * (1.0 + std::abs(plan.ub)));
  validate_plan(plan.K, inst);

  double prev_lb = -kInf, prev_ub = kInf;
  for (const auto& row : plan.trace) {
    CHECK(row.lb >= prev_lb - 1e-9);
    CHECK(row.ub <= prev_ub + 1e-9);
    CHECK(row.lb <= row.ub + 1e-7 * (1.0 + std::abs(row.ub)));
    prev_lb = row.lb;
    prev_ub = row.ub;
  }
  for (const BendersCut& cut : plan.cuts) CHECK(cut.slack >= -1e-7);

  CHECK(plan.enpv == Catch::Approx(-plan.cost).margin(1e-12));
  EvalReport rep = evaluate_plan(plan.K, set, inst, inst.alpha, inst.beta);
  CHECK(std::abs(rep.enpv - plan.enpv) <= 1e-6 * (1.0 + std::abs(plan.enpv)));
}

TEST_CASE("multicut agrees with the aggregated mode and is deterministic", "[baseline]") {
  Instance inst = line_instance(3, 3);
  ScenarioSet set = generate_gbm(inst.xi0, 0.2, 0.4, inst.T, 5, 13);

  BaselineParams single;
  InflexiblePlan a = solve_inflexible(inst, set, single);
  BaselineParams multi;
  multi.multicut = true;
  InflexiblePlan b = solve_inflexible(inst, set, multi);
  BaselineParams grouped;
  grouped.cut_groups = 3;
  InflexiblePlan c = solve_inflexible(inst, set, grouped);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  REQUIRE(c.converged);
  CHECK(a.cost == Catch::Approx(b.cost).margin(1e-7 * (1.0 + std::abs(a.cost))));
  CHECK(a.cost == Catch::Approx(c.cost).margin(1e-7 * (1.0 + std::abs(a.cost))));

  InflexiblePlan a2 = solve_inflexible(inst, set, single);
  CHECK(a.cost == a2.cost);
  CHECK(a.K == a2.K);
  CHECK(a.iterations == a2.iterations);
}

TEST_CASE("flexible search at beta = 1 is worth at least the inflexible plan", "[baseline]") {
  Instance inst = line_instance(3, 4);
  ScenarioSet set = generate_gbm(inst.xi0, 0.3, 0.4, inst.T, 8, 5);

  InflexiblePlan inflex = solve_inflexible(inst, set);
  REQUIRE(inflex.converged);

  AlgoParams ap;
  ap.beta = 1.0;
  ap.m_bar = 4;
  ap.k_bar = 20;
  ap.k_underline = 4;
  ap.epsilon_theta = 0.5;
  ap.seed = 11;
  ap.multicut_rounds = 2;
  DecompositionResult flex = run_decomposition(inst, set, ap);

  // At beta = 1 both objectives are plain expected discounted cost, so the
  // value of flexibility should be nonnegative up to heuristic slack.
  CHECK(flex.objective <= inflex.cost + 0.05 * (1.0 + std::abs(inflex.cost)));
}

TEST_CASE("plan csv round-trips", "[baseline]") {
  std::vector<std::vector<long long>> plan{{1, 0}, {2, 0}, {2, 3}};
  std::string path = "test_plan_roundtrip.csv";
  write_plan_csv(plan, path);
  auto back = read_plan_csv(path);
  CHECK(back == plan);
  std::remove(path.c_str());
}
