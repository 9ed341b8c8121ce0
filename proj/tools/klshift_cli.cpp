#include <cstdint>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "klshift/cli.hpp"

namespace ks = klshift;

int main(int argc, char** argv) {
  CLI::App app{
      "klshift: robustness of a treatment-effect claim to covariate shift"};
  app.set_version_flag("--version", ks::kVersion);
  app.require_subcommand(1);

  auto add_learner_flags = [](CLI::App* cmd, ks::RunConfig& rc,
                              std::string& claim, std::string& learner) {
    cmd->add_option("--input", rc.input, "CSV dataset")->required();
    cmd->add_option("--outcome", rc.outcome, "outcome column (default y)");
    cmd->add_option("--treatment", rc.treatment,
                    "binary treatment column (default d)");
    cmd->add_option("--covariates", rc.covariates,
                    "covariate columns, comma separated (default: all other "
                    "columns; non-numeric columns are one-hot encoded)")
        ->delimiter(',');
    cmd->add_option("--claim", claim, "claim direction: geq or leq")
        ->check(CLI::IsMember({"geq", "leq"}));
    cmd->add_option("--learner", learner,
                    "first-stage learner: forest, boosting or linear")
        ->check(CLI::IsMember({"forest", "boosting", "linear"}));
    cmd->add_option("--folds", rc.folds, "cross-fitting folds (default 5)");
    cmd->add_option("--trim", rc.learner.trim_eps,
                    "propensity clipping bound (default 0.01)");
    cmd->add_option("--seed", rc.learner.seed, "RNG seed (default 0)");
    cmd->add_option("--alpha", rc.alpha,
                    "level of the one-sided lower bound (default 0.05)");
    cmd->add_option("--trees", rc.learner.trees,
                    "forest size (default 100)");
    cmd->add_option("--rounds", rc.learner.rounds,
                    "boosting rounds (default 200)");
    cmd->add_option("--out", rc.out, "output file (default stdout)");
  };

  // estimate
  ks::RunConfig est_cfg;
  std::string est_claim = "geq", est_learner = "forest";
  CLI::App* est = app.add_subcommand(
      "estimate", "delta* with de-biased inference for one claim");
  add_learner_flags(est, est_cfg, est_claim, est_learner);
  est->add_option("--tau-tilde", est_cfg.tau_tilde,
                  "claim threshold: a number, or z:<alpha> for the margin of "
                  "statistical significance")
      ->required();
  est->add_option("--zeta-cols", est_cfg.zeta_cols,
                  "covariate columns whose least-favorable means to report")
      ->delimiter(',');
  est->add_option("--format", est_cfg.format, "json or md (default json)")
      ->check(CLI::IsMember({"json", "md"}));

  // curve
  ks::CurveConfig curve_cfg;
  std::string curve_claim = "geq", curve_learner = "forest";
  CLI::App* curve = app.add_subcommand(
      "curve", "lambda, delta* and lower bound over a grid of thresholds");
  add_learner_flags(curve, curve_cfg.base, curve_claim, curve_learner);
  curve->add_option("--grid", curve_cfg.grid,
                    "tau_tilde grid, comma separated")
      ->delimiter(',')
      ->required();
  curve->add_flag("--profile", curve_cfg.profile,
                  "add the least-favorable mass near the CATE peak");
  curve->add_option("--profile-x", curve_cfg.profile_x,
                    "covariate column for the concentration ball");
  curve->add_option("--profile-radius", curve_cfg.profile_radius,
                    "ball radius in sd units (default 0.25)");

  // simulate
  ks::SimulateCliConfig sim_cfg;
  CLI::App* sim = app.add_subcommand(
      "simulate", "Monte Carlo comparison of plug-in and de-biased delta*");
  sim->add_option("--dgp", sim_cfg.dgp, "design id: 1, 2 or 3")
      ->required()
      ->check(CLI::Range(1, 3));
  sim->add_option("--n", sim_cfg.n, "sample size per replication");
  sim->add_option("--m", sim_cfg.m, "number of replications");
  sim->add_option("--k", sim_cfg.k, "number of covariates (default 100)");
  sim->add_option("--tau-tilde", sim_cfg.tau_tilde,
                  "claim threshold (default 1.3)");
  sim->add_option("--learner", sim_cfg.learner,
                  "forest, boosting or linear (default forest)")
      ->check(CLI::IsMember({"forest", "boosting", "linear"}));
  sim->add_option("--folds", sim_cfg.folds, "cross-fitting folds");
  sim->add_option("--trim", sim_cfg.trim, "propensity clipping bound");
  sim->add_option("--seed", sim_cfg.seed, "RNG seed");
  sim->add_option("--alpha", sim_cfg.alpha, "lower bound level");
  sim->add_option("--trees", sim_cfg.trees, "forest size");
  sim->add_option("--rounds", sim_cfg.rounds, "boosting rounds");
  sim->add_flag("--oracle", sim_cfg.oracle,
                "use analytic nuisances instead of learners");
  sim->add_option("--out", sim_cfg.out,
                  "output prefix; writes <prefix>.csv and <prefix>.md");
  sim->add_option("--format", sim_cfg.format,
                  "stdout format: csv or md (default csv)")
      ->check(CLI::IsMember({"csv", "md"}));

  // benchmark
  ks::BenchmarkCliConfig bench_cfg;
  CLI::App* bench = app.add_subcommand(
      "benchmark",
      "KL divergence between two covariate samples on a shared discretization");
  bench->add_option("--experimental", bench_cfg.experimental,
                    "CSV of the experimental sample")
      ->required();
  bench->add_option("--target", bench_cfg.target,
                    "CSV of the target population sample")
      ->required();
  bench->add_option("--columns", bench_cfg.columns,
                    "shared covariate columns, comma separated")
      ->delimiter(',')
      ->required();
  bench->add_option("--bins", bench_cfg.bins,
                    "quantile bins for continuous columns (default 10)");
  bench->add_option("--delta", bench_cfg.delta_star,
                    "delta* estimate to compare against");
  bench->add_option("--report", bench_cfg.report_path,
                    "JSON report to read delta* from");
  bench->add_option("--out", bench_cfg.out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ks::kExitOk : ks::kExitUsage;
  }

  if (*est) {
    est_cfg.direction = ks::parse_direction(est_claim);
    est_cfg.learner.kind = ks::parse_learner_kind(est_learner);
    return ks::guarded([&] { return ks::cmd_estimate(est_cfg); });
  }
  if (*curve) {
    curve_cfg.base.direction = ks::parse_direction(curve_claim);
    curve_cfg.base.learner.kind = ks::parse_learner_kind(curve_learner);
    return ks::guarded([&] { return ks::cmd_curve(curve_cfg); });
  }
  if (*sim) return ks::guarded([&] { return ks::cmd_simulate(sim_cfg); });
  if (*bench) return ks::guarded([&] { return ks::cmd_benchmark(bench_cfg); });
  return ks::kExitUsage;
}
