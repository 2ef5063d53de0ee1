// Command-line driver: scenario generation, flexible-policy search, fixed-plan
// benchmarking, out-of-sample evaluation, and beta sweeps. All randomness flows
// from a single --seed; each command derives its own substream by a fixed label
// so commands can be re-run in isolation reproducibly.
#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mcep/baseline.hpp"
#include "mcep/decomposition.hpp"
#include "mcep/instance.hpp"
#include "mcep/policy.hpp"
#include "mcep/risk.hpp"
#include "mcep/scenarios.hpp"

namespace {

using namespace mcep;
namespace fs = std::filesystem;

// Exit codes: 0 = all artifacts written and solves finished within tolerance,
// 1 = error (bad input, IO failure), 3 = artifacts written but a solve stopped
// at its iteration limit before certifying its tolerance.
constexpr int kExitNotConverged = 3;

std::uint64_t substream(std::uint64_t seed, std::string_view label) {
  return Rng(seed, label, 0).next_u64();
}

fs::path ensure_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw McepError("cannot create output directory: " + out);
  return dir;
}

ScenarioSet load_set_for(const Instance& inst, const std::string& path) {
  ScenarioSet set = read_scenarios_csv(path);
  require(set.I == inst.I && set.T == inst.T,
          "scenario file " + path + " does not match the instance dimensions");
  return set;
}

void note(const std::string& path) { std::printf("wrote %s\n", path.c_str()); }

void write_baseline_trace_csv(const std::string& path,
                              const std::vector<BaselineIterationTrace>& rows) {
  std::ofstream out(path);
  require(out.good(), "cannot open trace file for writing: " + path);
  out << "iter,lb,ub,cuts,nodes,wall_ms\n";
  for (const BaselineIterationTrace& r : rows)
    out << r.iter << ',' << fmt_full(r.lb) << ',' << fmt_full(r.ub) << ',' << r.cuts_active << ','
        << r.nodes << ',' << fmt_full(r.wall_ms) << '\n';
  require(out.good(), "failed writing trace file: " + path);
}

std::string beta_tag(double beta) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", beta);
  return buf;
}

// ---------------------------------------------------------------------------
// gen-scenarios

struct GenConfig {
  std::string instance, out;
  std::size_t train = 200, test = 1000;
  std::uint64_t seed = 1;
  double mu = 0.0, sigma = 0.0;
  bool has_mu = false, has_sigma = false;
  bool share_shocks = false;
};

int run_gen(const GenConfig& c) {
  Instance inst = load_instance(c.instance);
  double mu = c.has_mu ? c.mu : inst.gbm_mu;
  double sigma = c.has_sigma ? c.sigma : inst.gbm_sigma;
  require(c.train > 0 || c.test > 0, "nothing to generate: --train and --test are both 0");
  fs::path dir = ensure_dir(c.out);
  if (c.train > 0) {
    ScenarioSet set = generate_gbm(inst.xi0, mu, sigma, inst.T, c.train,
                                   substream(c.seed, "cli-train"), c.share_shocks);
    std::string path = (dir / "train.csv").string();
    write_scenarios_csv(set, path);
    note(path);
  }
  if (c.test > 0) {
    ScenarioSet set = generate_gbm(inst.xi0, mu, sigma, inst.T, c.test,
                                   substream(c.seed, "cli-test"), c.share_shocks);
    std::string path = (dir / "test.csv").string();
    write_scenarios_csv(set, path);
    note(path);
  }
  std::printf("GBM drift %g, volatility %g, horizon T=%d\n", mu, sigma, inst.T);
  return 0;
}

// ---------------------------------------------------------------------------
// solve-flex

struct FlexConfig {
  std::string instance, train, out;
  double alpha = 0.0, beta = 0.0;
  bool has_alpha = false, has_beta = false;
  std::uint64_t seed = 1;
  int max_iter = 25;
  double epsilon = 1e-6;
  int k_bar = 60;
  int multicut_rounds = 0;
  double ssp_gap = 1e-4;
  bool deterministic = false, dump_lp = false;
};

int run_flex(const FlexConfig& c) {
  Instance inst = load_instance(c.instance);
  ScenarioSet set = load_set_for(inst, c.train);
  fs::path dir = ensure_dir(c.out);

  AlgoParams p;
  if (c.has_alpha) p.alpha = c.alpha;
  if (c.has_beta) p.beta = c.beta;
  p.m_bar = c.max_iter;
  p.epsilon = c.epsilon;
  p.k_bar = c.k_bar;
  p.multicut_rounds = c.multicut_rounds;
  p.ssp_gap_rel = c.ssp_gap;
  p.seed = substream(c.seed, "cli-flex");
  if (c.dump_lp) p.dump_lp = (dir / "master.lp").string();

  DecompositionResult res = run_decomposition(inst, set, p);
  if (c.deterministic)
    for (IterationTrace& r : res.trace) r.wall_ms = 0.0;

  std::string policy_path = (dir / "policy.json").string();
  save_policy(res.policy, policy_path);
  note(policy_path);
  std::string trace_path = (dir / "trace.csv").string();
  write_trace_csv(trace_path, res.trace);
  note(trace_path);
  if (c.dump_lp) note(p.dump_lp);

  std::printf("incumbent objective %.10g after %d iterations (bounds [%.10g, %.10g])\n",
              res.objective, res.iterations, res.v_lb, res.v_ub);
  return std::isfinite(res.objective) ? 0 : kExitNotConverged;
}

// ---------------------------------------------------------------------------
// solve-inflex

struct InflexConfig {
  std::string instance, train, out;
  int max_iter = 100;
  double epsilon = 1e-6;
  long master_nodes = -1;
  bool multicut = false, deterministic = false, dump_lp = false;
};

int run_inflex(const InflexConfig& c) {
  Instance inst = load_instance(c.instance);
  ScenarioSet set = load_set_for(inst, c.train);
  fs::path dir = ensure_dir(c.out);

  BaselineParams p;
  p.tol = c.epsilon;
  p.max_iterations = c.max_iter;
  p.multicut = c.multicut;
  p.master_gap_rel = std::max(1e-9, 0.1 * c.epsilon);
  p.master_node_limit = c.master_nodes;
  if (c.dump_lp) p.dump_lp = (dir / "master.lp").string();

  InflexiblePlan plan = solve_inflexible(inst, set, p);
  if (c.deterministic)
    for (BaselineIterationTrace& r : plan.trace) r.wall_ms = 0.0;

  std::string plan_path = (dir / "plan.csv").string();
  write_plan_csv(plan.K, plan_path);
  note(plan_path);
  std::string trace_path = (dir / "plan_trace.csv").string();
  write_baseline_trace_csv(trace_path, plan.trace);
  note(trace_path);
  if (c.dump_lp) note(p.dump_lp);

  std::printf("expected cost %.10g (ENPV %.10g), gap %.3g after %d iterations%s\n", plan.cost,
              plan.enpv, plan.gap, plan.iterations, plan.converged ? "" : " [not converged]");
  return plan.converged ? 0 : kExitNotConverged;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvalConfig {
  std::string instance, test, policy, plan, out;
  double alpha = 0.0, beta = 0.0;
  bool has_alpha = false, has_beta = false;
  bool dump_trajectories = false;
};

int run_evaluate(const EvalConfig& c) {
  Instance inst = load_instance(c.instance);
  ScenarioSet set = load_set_for(inst, c.test);
  require(!c.policy.empty() || !c.plan.empty(), "nothing to evaluate: pass --policy and/or --plan");
  fs::path dir = ensure_dir(c.out);
  double alpha = c.has_alpha ? c.alpha : inst.alpha;
  double beta = c.has_beta ? c.beta : inst.beta;

  std::vector<EvalReport> rows;
  if (!c.policy.empty()) {
    PolicyParams pol = load_policy(c.policy);
    rows.push_back(evaluate_policy(pol, set, inst, alpha, beta));
    if (c.dump_trajectories) {
      std::vector<Trajectory> trs(set.S);
      parallel_for(set.S, [&](std::size_t s) { trs[s] = simulate_trajectory(pol, set, s, inst); });
      std::string tr_path = (dir / "trajectories.csv").string();
      write_trajectories_csv(trs, tr_path);
      note(tr_path);
    }
  }
  if (!c.plan.empty()) {
    std::vector<std::vector<long long>> plan = read_plan_csv(c.plan);
    validate_plan(plan, inst);
    rows.push_back(evaluate_plan(plan, set, inst, alpha, beta));
  }
  // With both inputs the first row is the policy; its value-of-flexibility
  // entry is the ENPV edge over the fixed plan on this same test set.
  if (rows.size() == 2) rows[0].vof = rows[0].enpv - rows[1].enpv;

  std::string report_path = (dir / "report.csv").string();
  write_report_csv(report_path, rows);
  note(report_path);
  for (const EvalReport& r : rows)
    std::printf("ENPV %.10g  p5 %.10g  CVaR(cost) %.10g%s\n", r.enpv, r.p5, r.cvar_cost,
                r.vof ? ("  VoF " + std::to_string(*r.vof)).c_str() : "");
  return 0;
}

// ---------------------------------------------------------------------------
// sweep-beta

struct SweepConfig {
  std::string instance, train, test, out;
  std::vector<double> betas;
  double alpha = 0.0;
  bool has_alpha = false;
  std::uint64_t seed = 1;
  int max_iter = 25;
  double epsilon = 1e-6;
  int k_bar = 60;
  int multicut_rounds = 0;
  bool deterministic = false;
};

int run_sweep(const SweepConfig& c) {
  Instance inst = load_instance(c.instance);
  ScenarioSet train = load_set_for(inst, c.train);
  ScenarioSet test = load_set_for(inst, c.test);
  fs::path dir = ensure_dir(c.out);
  double alpha = c.has_alpha ? c.alpha : inst.alpha;
  std::vector<double> betas = c.betas;
  if (betas.empty()) betas = {0.01, 0.25, 0.5, 0.75, 0.99};

  // One fixed-plan benchmark shared by every beta.
  BaselineParams bp;
  bp.tol = c.epsilon;
  bp.max_iterations = c.max_iter;
  bp.master_gap_rel = std::max(1e-9, 0.1 * c.epsilon);
  InflexiblePlan plan = solve_inflexible(inst, train, bp);
  if (c.deterministic)
    for (BaselineIterationTrace& r : plan.trace) r.wall_ms = 0.0;
  write_plan_csv(plan.K, (dir / "plan.csv").string());
  write_baseline_trace_csv((dir / "plan_trace.csv").string(), plan.trace);
  EvalReport plan_rep = evaluate_plan(plan.K, test, inst, alpha, inst.beta);
  plan_rep.vof = 0.0;
  write_report_csv((dir / "plan_report.csv").string(), {plan_rep});
  std::printf("fixed plan: training cost %.10g, test ENPV %.10g%s\n", plan.cost, plan_rep.enpv,
              plan.converged ? "" : " [not converged]");

  std::vector<EvalReport> rows;
  for (double beta : betas) {
    AlgoParams p;
    p.alpha = alpha;
    p.beta = beta;
    p.m_bar = c.max_iter;
    p.epsilon = c.epsilon;
    p.k_bar = c.k_bar;
    p.multicut_rounds = c.multicut_rounds;
    p.seed = substream(c.seed, "cli-flex");
    DecompositionResult res = run_decomposition(inst, train, p);
    if (c.deterministic)
      for (IterationTrace& r : res.trace) r.wall_ms = 0.0;
    std::string tag = beta_tag(beta);
    save_policy(res.policy, (dir / ("policy_beta_" + tag + ".json")).string());
    write_trace_csv((dir / ("trace_beta_" + tag + ".csv")).string(), res.trace);

    EvalReport rep = evaluate_policy(res.policy, test, inst, alpha, beta);
    rep.vof = rep.enpv - plan_rep.enpv;
    rows.push_back(rep);
    std::printf("beta %-5g: objective %.10g, test ENPV %.10g, VoF %.10g\n", beta, res.objective,
                rep.enpv, *rep.vof);
  }
  std::string report_path = (dir / "report.csv").string();
  write_report_csv(report_path, rows);
  note(report_path);
  return plan.converged ? 0 : kExitNotConverged;
}

}  // namespace

int main(int argc, char** argv) try {
  CLI::App app{
      "Multi-facility capacity expansion under demand uncertainty: flexible if-then "
      "policies, fixed-plan benchmarks, and out-of-sample evaluation."};
  app.require_subcommand(1);
  app.footer("Scenario-parallel work uses MCEP_THREADS threads (default: hardware concurrency).");

  GenConfig g;
  CLI::App* gen = app.add_subcommand("gen-scenarios", "Sample GBM demand paths to CSV");
  gen->add_option("--instance", g.instance, "instance JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  gen->add_option("--out", g.out, "output directory")->required();
  gen->add_option("--train", g.train, "training scenario count (0 = skip)")
      ->capture_default_str();
  gen->add_option("--test", g.test, "test scenario count (0 = skip)")->capture_default_str();
  gen->add_option("--seed", g.seed, "root RNG seed")->capture_default_str();
  CLI::Option* gmu = gen->add_option("--mu", g.mu, "GBM drift (default: instance value)");
  CLI::Option* gsig = gen->add_option("--sigma", g.sigma, "GBM volatility (default: instance value)");
  gen->add_flag("--share-shocks", g.share_shocks, "one shock per period shared by all products");
  gen->add_flag("--deterministic", "kept for workflow symmetry; output depends only on --seed");

  FlexConfig f;
  CLI::App* flex = app.add_subcommand("solve-flex", "Search for a flexible if-then policy");
  flex->add_option("--instance", f.instance, "instance JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  flex->add_option("--train", f.train, "training scenario CSV")
      ->required()
      ->check(CLI::ExistingFile);
  flex->add_option("--out", f.out, "output directory")->required();
  CLI::Option* falpha =
      flex->add_option("--alpha", f.alpha, "CVaR level (default: instance value)")
          ->check(CLI::Range(0.0, 1.0));
  CLI::Option* fbeta =
      flex->add_option("--beta", f.beta, "mean-CVaR mix (default: instance value)")
          ->check(CLI::Range(0.0, 1.0));
  flex->add_option("--seed", f.seed, "root RNG seed")->capture_default_str();
  flex->add_option("--max-iter", f.max_iter, "outer iteration budget")->capture_default_str();
  flex->add_option("--epsilon", f.epsilon, "bound-gap stop tolerance")->capture_default_str();
  flex->add_option("--k-bar", f.k_bar, "threshold-averaging step budget")->capture_default_str();
  flex->add_option("--multicut-rounds", f.multicut_rounds, "improvement-phase iterations")
      ->capture_default_str();
  flex->add_option("--ssp-gap", f.ssp_gap, "single-scenario MILP relative gap")
      ->capture_default_str();
  flex->add_flag("--deterministic", f.deterministic, "zero timing fields in trace output");
  flex->add_flag("--dump-lp", f.dump_lp, "write the final master model as LP-format text");

  InflexConfig x;
  CLI::App* inflex = app.add_subcommand("solve-inflex", "Optimize a pre-committed expansion plan");
  inflex->add_option("--instance", x.instance, "instance JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  inflex->add_option("--train", x.train, "training scenario CSV")
      ->required()
      ->check(CLI::ExistingFile);
  inflex->add_option("--out", x.out, "output directory")->required();
  inflex->add_option("--max-iter", x.max_iter, "cutting-plane iteration budget")
      ->capture_default_str();
  inflex->add_option("--epsilon", x.epsilon, "relative bound-gap stop tolerance")
      ->capture_default_str();
  inflex->add_option("--master-nodes", x.master_nodes,
                     "node budget per master solve (-1 = unlimited)")
      ->capture_default_str();
  inflex->add_flag("--multicut", x.multicut, "one cut per scenario instead of the average");
  inflex->add_flag("--deterministic", x.deterministic, "zero timing fields in trace output");
  inflex->add_flag("--dump-lp", x.dump_lp, "write the final master model as LP-format text");

  EvalConfig e;
  CLI::App* ev = app.add_subcommand("evaluate", "Evaluate saved policies/plans out of sample");
  ev->add_option("--instance", e.instance, "instance JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--test", e.test, "test scenario CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--policy", e.policy, "saved policy JSON")->check(CLI::ExistingFile);
  ev->add_option("--plan", e.plan, "saved plan CSV")->check(CLI::ExistingFile);
  ev->add_option("--out", e.out, "output directory")->required();
  CLI::Option* ealpha = ev->add_option("--alpha", e.alpha, "CVaR level (default: instance value)")
                            ->check(CLI::Range(0.0, 1.0));
  CLI::Option* ebeta = ev->add_option("--beta", e.beta, "mean-CVaR mix (default: instance value)")
                           ->check(CLI::Range(0.0, 1.0));
  ev->add_flag("--dump-trajectories", e.dump_trajectories,
               "also write simulated policy trajectories");
  ev->add_flag("--deterministic", "kept for workflow symmetry; evaluation is deterministic");

  SweepConfig w;
  CLI::App* sweep = app.add_subcommand(
      "sweep-beta", "Solve across risk mixes and tabulate out-of-sample results");
  sweep->add_option("--instance", w.instance, "instance JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--train", w.train, "training scenario CSV")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--test", w.test, "test scenario CSV")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", w.out, "output directory")->required();
  sweep->add_option("--beta", w.betas, "mean-CVaR mix, repeatable (default: 0.01 0.25 0.5 0.75 0.99)")
      ->check(CLI::Range(0.0, 1.0));
  CLI::Option* walpha =
      sweep->add_option("--alpha", w.alpha, "CVaR level (default: instance value)")
          ->check(CLI::Range(0.0, 1.0));
  sweep->add_option("--seed", w.seed, "root RNG seed")->capture_default_str();
  sweep->add_option("--max-iter", w.max_iter, "iteration budget for both solvers")
      ->capture_default_str();
  sweep->add_option("--epsilon", w.epsilon, "stop tolerance for both solvers")
      ->capture_default_str();
  sweep->add_option("--k-bar", w.k_bar, "threshold-averaging step budget")->capture_default_str();
  sweep->add_option("--multicut-rounds", w.multicut_rounds, "improvement-phase iterations")
      ->capture_default_str();
  sweep->add_flag("--deterministic", w.deterministic, "zero timing fields in trace output");

  CLI11_PARSE(app, argc, argv);

  g.has_mu = gmu->count() > 0;
  g.has_sigma = gsig->count() > 0;
  f.has_alpha = falpha->count() > 0;
  f.has_beta = fbeta->count() > 0;
  e.has_alpha = ealpha->count() > 0;
  e.has_beta = ebeta->count() > 0;
  w.has_alpha = walpha->count() > 0;

  if (app.got_subcommand(gen)) return run_gen(g);
  if (app.got_subcommand(flex)) return run_flex(f);
  if (app.got_subcommand(inflex)) return run_inflex(x);
  if (app.got_subcommand(ev)) return run_evaluate(e);
  return run_sweep(w);
} catch (const std::exception& e) {
  std::fprintf(stderr, "error: %s\n", e.what());
  return 1;
}
