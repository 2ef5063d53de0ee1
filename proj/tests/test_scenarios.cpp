#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "mcep/scenarios.hpp"

using namespace mcep;

TEST_CASE("zero volatility gives exact compound growth", "[scenarios]") {
  ScenarioSet set = generate_gbm({100.0, 40.0}, 0.04, 0.0, 5, 3, 7);
  for (std::size_t s = 0; s < set.S; ++s)
    for (int t = 0; t <= 5; ++t) {
      CHECK_THAT(set.at(s, t, 0), Catch::Matchers::WithinRel(100.0 * std::pow(1.04, t), 1e-12));
      CHECK_THAT(set.at(s, t, 1), Catch::Matchers::WithinRel(40.0 * std::pow(1.04, t), 1e-12));
    }
}

TEST_CASE("t=0 demand is shared and paths stay nonnegative", "[scenarios]") {
  ScenarioSet set = generate_gbm({50.0, 10.0, 0.0}, 0.0, 2.5, 8, 64, 123);
  for (std::size_t s = 0; s < set.S; ++s) {
    CHECK(set.at(s, 0, 0) == 50.0);
    CHECK(set.at(s, 0, 1) == 10.0);
    CHECK(set.at(s, 0, 2) == 0.0);
    for (int t = 0; t <= set.T; ++t)
      for (int i = 0; i < set.I; ++i) CHECK(set.at(s, t, i) >= 0.0);
  }
  // Volatility 2.5 drives many paths into the max(0, .) reflection; once a
  // path hits zero it stays there.
  bool saw_zero = false;
  for (std::size_t s = 0; s < set.S; ++s)
    for (int i = 0; i < set.I; ++i)
      if (set.at(s, set.T, i) == 0.0) saw_zero = true;
  CHECK(saw_zero);
}

TEST_CASE("sample mean tracks the drift within three standard errors", "[scenarios]") {
  const std::size_t S = 10000;
  const double mu = 0.04, sigma = 0.16;
  ScenarioSet set = generate_gbm({100.0}, mu, sigma, 6, S, 2024);
  for (int t = 1; t <= 6; ++t) {
    double mean = 0.0;
    for (std::size_t s = 0; s < S; ++s) mean += set.at(s, t, 0);
    mean /= static_cast<double>(S);
    double want = 100.0 * std::pow(1.0 + mu, t);
    // Var of one step factor is sigma^2; crude SE bound via per-period scaling.
    double sd_t = want * sigma * std::sqrt(static_cast<double>(t));
    double se = 3.0 * sd_t / std::sqrt(static_cast<double>(S));
    INFO("t=" << t << " mean=" << mean << " want=" << want << " band=" << se);
    CHECK(std::abs(mean - want) <= se);
  }
}

TEST_CASE("same seed reproduces identical paths, different seed differs", "[scenarios]") {
  ScenarioSet a = generate_gbm({10.0, 20.0}, 0.05, 0.2, 4, 16, 99);
  ScenarioSet b = generate_gbm({10.0, 20.0}, 0.05, 0.2, 4, 16, 99);
  ScenarioSet c = generate_gbm({10.0, 20.0}, 0.05, 0.2, 4, 16, 100);
  CHECK(a.xi == b.xi);
  CHECK(a.xi != c.xi);
}

TEST_CASE("shared shocks move all customers together", "[scenarios]") {
  ScenarioSet set = generate_gbm({100.0, 200.0}, 0.0, 0.3, 5, 32, 5, true);
  for (std::size_t s = 0; s < set.S; ++s)
    for (int t = 1; t <= set.T; ++t) {
      double f0 = set.at(s, t, 0) / set.at(s, t - 1, 0);
      double f1 = set.at(s, t, 1) / set.at(s, t - 1, 1);
      CHECK_THAT(f0, Catch::Matchers::WithinAbs(f1, 1e-12));
    }
}

TEST_CASE("weighted demand rounds half away from zero", "[scenarios]") {
  Matrix W(1, 1, 0.01);
  CHECK(weighted_demand(W, {449.9}) == std::vector<long long>{4});
  CHECK(weighted_demand(W, {450.0}) == std::vector<long long>{5});
  CHECK(weighted_demand(W, {50.0}) == std::vector<long long>{1});
  CHECK(weighted_demand(W, {150.0}) == std::vector<long long>{2});
  CHECK(weighted_demand(W, {250.0}) == std::vector<long long>{3});

  Matrix W2(2, 2, 0.0);
  W2(0, 0) = 0.5;
  W2(1, 0) = 0.25;
  W2(1, 1) = 1.0;
  CHECK(weighted_demand(W2, {3.0, 2.0}) == std::vector<long long>{2, 2});
}

TEST_CASE("scenario csv round-trips exactly", "[scenarios]") {
  ScenarioSet set = generate_gbm({498.0, 518.0, 293.0}, 0.04, 0.16, 7, 25, 31415);
  std::filesystem::path path = std::filesystem::temp_directory_path() / "mcep_scen_rt.csv";
  write_scenarios_csv(set, path.string());
  ScenarioSet back = read_scenarios_csv(path.string());
  REQUIRE(back.S == set.S);
  REQUIRE(back.T == set.T);
  REQUIRE(back.I == set.I);
  CHECK(back.xi == set.xi);  // bitwise equality via %.17g round-trip
  std::filesystem::remove(path);
}

TEST_CASE("scenario csv rejects malformed input", "[scenarios]") {
  std::filesystem::path path = std::filesystem::temp_directory_path() / "mcep_scen_bad.csv";
  {
    std::ofstream out(path);
    out << "s,t,i,demand\n0,0,0,5\n";
  }
  CHECK_THROWS_AS(read_scenarios_csv(path.string()), McepError);
  std::filesystem::remove(path);
}
