#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "klshift/core.hpp"
#include "klshift/csv.hpp"
#include "klshift/gmm.hpp"
#include "klshift/learners.hpp"
#include "klshift/simulate.hpp"
#include "klshift/solver.hpp"

// Command layer: configuration structs, the estimate/curve/simulate/benchmark
// pipelines, and report emission. The JSON report is the machine contract;
// markdown is rendered from it. Exit codes: 0 success, 2 usage error, 3 data
// error, 4 numerical failure.

namespace klshift {

using ordered_json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

struct RunConfig {
  std::string input;
  std::string outcome = "y";
  std::string treatment = "d";
  std::vector<std::string> covariates;  // empty = all other columns
  ClaimDirection direction = ClaimDirection::GEQ;
  std::string tau_tilde = "";  // numeric literal or "z:<alpha>"
  LearnerSpec learner;
  int folds = 5;
  double alpha = 0.05;
  std::vector<std::string> zeta_cols;
  std::string out;  // empty = stdout
  std::string format = "json";
};

inline std::string direction_name(ClaimDirection d) {
  return d == ClaimDirection::GEQ ? "geq" : "leq";
}

inline ClaimDirection parse_direction(const std::string& s) {
  if (s == "geq") return ClaimDirection::GEQ;
  if (s == "leq") return ClaimDirection::LEQ;
  throw data_error("claim must be geq or leq, got: " + s);
}

inline LearnerSpec::Kind parse_learner_kind(const std::string& s) {
  if (s == "forest") return LearnerSpec::Kind::FOREST;
  if (s == "boosting") return LearnerSpec::Kind::BOOSTING;
  if (s == "linear") return LearnerSpec::Kind::LINEAR;
  throw data_error("learner must be forest, boosting or linear, got: " + s);
}

// writes the whole payload, then renames into place
inline void write_text_file(const std::string& path,
                            const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw data_error("cannot write file: " + path);
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

inline void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty())
    std::cout << content;
  else
    write_text_file(out_path, content);
}

// ---- tau_tilde resolution ---------------------------------------------------

struct TauTildeChoice {
  double value = 0.0;
  std::string rule;  // "literal" or the z:<alpha> string
  double ate_se = std::numeric_limits<double>::quiet_NaN();
};

// "z:<alpha>" sets the margin at the edge of statistical significance:
// +- z_alpha * se(difference-in-means ATE). A claim that fails it in-sample
// is exactly one whose ATE t-statistic is below z_alpha.
inline TauTildeChoice resolve_tau_tilde(const std::string& arg,
                                        ClaimDirection direction,
                                        const Dataset& ds) {
  TauTildeChoice out;
  if (arg.empty()) throw data_error("--tau-tilde is required");
  if (arg.rfind("z:", 0) == 0) {
    double a = 0.0;
    if (!detail::parse_number(arg.substr(2), &a) || !(a > 0.0 && a < 1.0))
      throw data_error("tau-tilde z-rule needs alpha in (0,1), got: " + arg);
    double m1 = 0.0, m0 = 0.0;
    std::size_t n1 = 0, n0 = 0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (ds.d[i] == 1) {
        m1 += ds.y[i];
        ++n1;
      } else {
        m0 += ds.y[i];
        ++n0;
      }
    }
    if (n1 < 2 || n0 < 2)
      throw data_error("tau-tilde z-rule needs at least 2 units per arm");
    m1 /= static_cast<double>(n1);
    m0 /= static_cast<double>(n0);
    double v1 = 0.0, v0 = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      const double r = ds.y[i] - (ds.d[i] == 1 ? m1 : m0);
      (ds.d[i] == 1 ? v1 : v0) += r * r;
    }
    v1 /= static_cast<double>(n1 - 1);
    v0 /= static_cast<double>(n0 - 1);
    out.ate_se = std::sqrt(v1 / static_cast<double>(n1) +
                           v0 / static_cast<double>(n0));
    const double z = normal_quantile(1.0 - a);
    out.value = (direction == ClaimDirection::GEQ ? 1.0 : -1.0) * z * out.ate_se;
    out.rule = arg;
  } else {
    if (!detail::parse_number(arg, &out.value))
      throw data_error("tau-tilde must be a number or z:<alpha>, got: " + arg);
    out.rule = "literal";
  }
  return out;
}

// ---- estimate ---------------------------------------------------------------

namespace detail {

inline ordered_json learner_json(const LearnerSpec& spec, int folds) {
  ordered_json j;
  j["kind"] = learner_name(spec);
  j["folds"] = folds;
  j["trim_eps"] = spec.trim_eps;
  j["seed"] = spec.seed;
  switch (spec.kind) {
    case LearnerSpec::Kind::FOREST:
      j["trees"] = spec.trees;
      j["min_leaf"] = spec.min_leaf;
      break;
    case LearnerSpec::Kind::BOOSTING:
      j["rounds"] = spec.rounds;
      j["depth"] = spec.boost_depth;
      j["learning_rate"] = spec.learning_rate;
      break;
    case LearnerSpec::Kind::LINEAR:
      j["ridge"] = spec.ridge;
      break;
  }
  return j;
}

template <typename Fn>
auto stage(const char* name, const char* hint, Fn&& fn) {
  try {
    return fn();
  } catch (const data_error& e) {
    throw data_error(std::string(name) + ": " + e.what() +
                     (hint && *hint ? std::string("; hint: ") + hint : ""));
  } catch (const infeasible_error&) {
    throw;  // carries its own explanation
  } catch (const numerical_error& e) {
    throw numerical_error(std::string(name) + ": " + e.what() +
                          (hint && *hint ? std::string("; hint: ") + hint
                                         : ""));
  }
}

}  // namespace detail

// Full pipeline on an in-memory dataset: folds, cross-fit, de-biased GMM,
// inference, optional zeta moments, diagnostics. Statuses: "ok",
// "claim invalid at baseline" (delta* = 0), "robustness infinite"
// (tau_tilde unattainable over the observed support).
inline ordered_json run_estimate(const Dataset& ds, const RunConfig& cfg,
                                 const TauTildeChoice& tt) {
  const Claim claim{cfg.direction, tt.value};

  ordered_json rep;
  rep["command"] = "estimate";
  rep["version"] = kVersion;
  {
    ordered_json c;
    c["direction"] = direction_name(cfg.direction);
    c["tau_tilde"] = tt.value;
    c["rule"] = tt.rule;
    if (!std::isnan(tt.ate_se)) c["ate_se"] = tt.ate_se;
    rep["claim"] = c;
  }
  {
    ordered_json d;
    d["n"] = ds.n();
    d["k"] = ds.k();
    d["outcome"] = cfg.outcome;
    d["treatment"] = cfg.treatment;
    d["covariates"] = ds.x_names;
    rep["data"] = d;
  }
  rep["learner"] = detail::learner_json(cfg.learner, cfg.folds);

  const FoldPlan plan = detail::stage(
      "fold assignment", "use a smaller --folds",
      [&] { return make_folds(ds, cfg.folds, cfg.learner.seed); });
  const CateEstimate cate = detail::stage(
      "cross-fitting", "reduce --folds or try --learner linear",
      [&] { return fit_predict_crossfit(ds, cfg.learner, plan); });

  const double ate_hat = ate_under_weights(cate.tau_hat);
  const FeasibilityVerdict verdict =
      feasibility_check(cate.tau_hat, tt.value);

  ordered_json est;
  est["ate_hat"] = ate_hat;
  ordered_json diag;
  diag["trim_fraction"] = cate.trimmed_fraction;
  {
    ordered_json f;
    f["feasible"] = verdict.feasible;
    f["tau_hat_min"] = verdict.tau_min;
    f["tau_hat_max"] = verdict.tau_max;
    f["margin"] = cfg.direction == ClaimDirection::GEQ
                      ? tt.value - verdict.tau_min
                      : verdict.tau_max - tt.value;
    if (!verdict.feasible) f["reason"] = verdict.reason;
    diag["feasibility"] = f;
  }

  if (!claim_holds(ate_hat, claim)) {
    rep["status"] = "claim invalid at baseline";
    est["delta_star"] = 0.0;
    est["nu"] = 1.0;
    est["lambda"] = 0.0;
    est["se"] = nullptr;
    est["lower_bound"] = nullptr;
    est["alpha"] = cfg.alpha;
    rep["estimate"] = est;
    rep["sandwich"] = nullptr;
    rep["zeta"] = nullptr;
    rep["diagnostics"] = diag;
    return rep;
  }

  if (!verdict.feasible) {
    rep["status"] = "robustness infinite";
    est["delta_star"] = nullptr;
    est["nu"] = nullptr;
    est["lambda"] = nullptr;
    est["se"] = nullptr;
    est["lower_bound"] = nullptr;
    est["alpha"] = cfg.alpha;
    rep["estimate"] = est;
    rep["sandwich"] = nullptr;
    rep["zeta"] = nullptr;
    rep["diagnostics"] = diag;
    return rep;
  }

  const DebiasedResult deb = detail::stage(
      "de-biased gmm", "check tau-tilde against the reported feasibility margin",
      [&] {
        return solve_theta_debiased(ds.y, ds.d, cate, tt.value);
      });
  const SandwichResult sw = detail::stage(
      "variance estimation", "",
      [&] { return sandwich_variance(deb.frame); });
  const DeltaInference inf = detail::stage(
      "inference", "", [&] { return delta_inference(deb.frame, sw, cfg.alpha); });

  rep["status"] = "ok";
  est["delta_star"] = inf.delta_hat;
  est["nu"] = deb.theta.nu;
  est["lambda"] = deb.theta.lambda;
  est["se"] = inf.se;
  est["lower_bound"] = inf.lower_bound;
  est["alpha"] = cfg.alpha;
  rep["estimate"] = est;
  rep["sandwich"] = ordered_json::array(
      {ordered_json::array({sw.S(0, 0), sw.S(0, 1)}),
       ordered_json::array({sw.S(1, 0), sw.S(1, 1)})});

  if (!cfg.zeta_cols.empty()) {
    std::vector<std::vector<double>> u;
    for (const auto& name : cfg.zeta_cols) {
      bool found = false;
      for (std::size_t j = 0; j < ds.x_names.size(); ++j)
        if (ds.x_names[j] == name) {
          u.push_back(ds.x_cols[j]);
          found = true;
          break;
        }
      if (!found) throw data_error("zeta column not found: " + name);
    }
    const ZetaInference zi = detail::stage(
        "zeta moments", "drop collinear --zeta-cols",
        [&] { return zeta_moments(deb.frame, u); });
    ordered_json zarr = ordered_json::array();
    for (std::size_t j = 0; j < cfg.zeta_cols.size(); ++j) {
      ordered_json row;
      row["column"] = cfg.zeta_cols[j];
      row["estimate"] = zi.zeta[j];
      row["se"] = zi.se[j];
      zarr.push_back(row);
    }
    rep["zeta"] = zarr;
  } else {
    rep["zeta"] = nullptr;
  }

  {
    const std::vector<SupportLabel> labels =
        partition_support(cate.tau_hat, deb.theta.lambda);
    std::size_t up = 0, down = 0, neutral = 0;
    for (SupportLabel l : labels) {
      if (l == SupportLabel::UP)
        ++up;
      else if (l == SupportLabel::DOWN)
        ++down;
      else
        ++neutral;
    }
    ordered_json p;
    p["up"] = up;
    p["down"] = down;
    p["neutral"] = neutral;
    diag["partition"] = p;
  }
  diag["lambda_residual"] = deb.root.residual;
  diag["iterations"] = deb.root.iterations;
  {
    ordered_json pl;
    pl["lambda"] = deb.theta_tilde.lambda;
    pl["delta_star"] = -std::log(deb.theta_tilde.nu);
    diag["plug_in"] = pl;
  }
  rep["diagnostics"] = diag;
  return rep;
}

inline std::string report_markdown(const ordered_json& rep) {
  std::ostringstream os;
  os << "# Robustness report\n\n";
  const auto& claim = rep["claim"];
  os << "Claim: ATE " << (claim["direction"] == "geq" ? ">=" : "<=") << " "
     << claim["tau_tilde"].dump() << " (rule: "
     << claim["rule"].get<std::string>() << ")\n\n";
  os << "Status: **" << rep["status"].get<std::string>() << "**\n\n";
  os << "| quantity | value |\n|---|---|\n";
  const auto& est = rep["estimate"];
  for (const char* key :
       {"ate_hat", "delta_star", "nu", "lambda", "se", "lower_bound", "alpha"})
    os << "| " << key << " | " << est[key].dump() << " |\n";
  if (rep.contains("zeta") && rep["zeta"].is_array()) {
    os << "\n## Least favorable moments\n\n| column | estimate | se |\n|---|---|---|\n";
    for (const auto& row : rep["zeta"])
      os << "| " << row["column"].get<std::string>() << " | "
         << row["estimate"].dump() << " | " << row["se"].dump() << " |\n";
  }
  const auto& diag = rep["diagnostics"];
  os << "\n## Diagnostics\n\n| quantity | value |\n|---|---|\n";
  os << "| trim_fraction | " << diag["trim_fraction"].dump() << " |\n";
  os << "| feasible | " << diag["feasibility"]["feasible"].dump() << " |\n";
  os << "| feasibility_margin | " << diag["feasibility"]["margin"].dump()
     << " |\n";
  if (diag.contains("partition"))
    os << "| partition up/down/neutral | " << diag["partition"]["up"].dump()
       << "/" << diag["partition"]["down"].dump() << "/"
       << diag["partition"]["neutral"].dump() << " |\n";
  return os.str();
}

inline int cmd_estimate(const RunConfig& cfg) {
  const LoadedData loaded = detail::stage(
      "loading", "check --input, --outcome, --treatment, --covariates",
      [&] { return load_csv(cfg.input, cfg.outcome, cfg.treatment,
                            cfg.covariates); });
  const TauTildeChoice tt =
      resolve_tau_tilde(cfg.tau_tilde, cfg.direction, loaded.data);
  const ordered_json rep = run_estimate(loaded.data, cfg, tt);
  if (cfg.format == "md")
    emit(cfg.out, report_markdown(rep));
  else
    emit(cfg.out, rep.dump(2) + "\n");
  return kExitOk;
}

// ---- curve ------------------------------------------------------------------

struct CurveConfig {
  RunConfig base;
  std::vector<double> grid;
  bool profile = false;
  std::string profile_x;        // covariate column for the concentration ball
  double profile_radius = 0.25;  // in sd units of that covariate
};

// delta* as a function of the target tau_tilde on one dataset: lambda and
// delta* columns are the plug-in tilt (exact zero at the sample ATE), the
// lower bound is the de-biased one-sided bound. Infeasible grid points are
// kept as flagged rows.
inline int cmd_curve(const CurveConfig& cfg) {
  const RunConfig& rc = cfg.base;
  const LoadedData loaded = detail::stage(
      "loading", "check --input, --outcome, --treatment, --covariates",
      [&] { return load_csv(rc.input, rc.outcome, rc.treatment,
                            rc.covariates); });
  const Dataset& ds = loaded.data;
  if (cfg.grid.empty()) throw data_error("--grid is required");

  std::vector<double> grid;
  for (double g : cfg.grid) {
    bool dup = false;
    for (double h : grid) dup = dup || h == g;
    if (dup) {
      std::cerr << "warning: duplicate grid point " << g << " dropped\n";
      continue;
    }
    grid.push_back(g);
  }

  const FoldPlan plan = make_folds(ds, rc.folds, rc.learner.seed);
  const CateEstimate cate = detail::stage(
      "cross-fitting", "reduce --folds or try --learner linear",
      [&] { return fit_predict_crossfit(ds, rc.learner, plan); });

  const std::vector<double>* px = nullptr;
  if (cfg.profile) {
    if (cfg.profile_x.empty())
      throw data_error("--profile needs --profile-x <column>");
    for (std::size_t j = 0; j < ds.x_names.size(); ++j)
      if (ds.x_names[j] == cfg.profile_x) px = &ds.x_cols[j];
    if (!px) throw data_error("profile column not found: " + cfg.profile_x);
  }

  const std::vector<CurvePoint> curve = lambda_curve(cate.tau_hat, grid);
  ConcentrationProfile prof;
  if (px) {
    std::vector<double> feasible_grid;
    for (const auto& p : curve)
      if (p.feasible) feasible_grid.push_back(p.tau_tilde);
    if (!feasible_grid.empty())
      prof = concentration_profile(cate.tau_hat, *px, feasible_grid,
                                   cfg.profile_radius);
  }

  std::ostringstream os;
  os << "tau_tilde,lambda,delta_star,lower_bound,feasible";
  if (px) os << ",mass_in_ball";
  os << "\n";
  std::size_t prof_i = 0;
  for (const auto& p : curve) {
    os << detail::fmt_g(p.tau_tilde) << ',';
    if (!p.feasible) {
      os << ",,," << "0";
      if (px) os << ',';
      os << "\n";
      continue;
    }
    const DebiasedResult deb =
        solve_theta_debiased(ds.y, ds.d, cate, p.tau_tilde);
    const SandwichResult sw = sandwich_variance(deb.frame);
    const DeltaInference inf = delta_inference(deb.frame, sw, rc.alpha);
    os << detail::fmt_g(p.lambda, 12) << ',' << detail::fmt_g(p.delta_star, 12)
       << ',' << detail::fmt_g(inf.lower_bound, 12) << ",1";
    if (px) os << ',' << detail::fmt_g(prof.rows[prof_i++].mass_in_ball, 12);
    os << "\n";
  }
  emit(rc.out, os.str());
  return kExitOk;
}

// ---- simulate ---------------------------------------------------------------

struct SimulateCliConfig {
  int dgp = 1;
  std::size_t n = 1000;
  int m = 100;
  std::size_t k = 100;
  double tau_tilde = 1.3;
  std::string learner = "forest";
  int folds = 5;
  double trim = 0.01;
  std::uint64_t seed = 0;
  bool oracle = false;
  double alpha = 0.05;
  int trees = 100;
  int rounds = 200;
  std::string out;  // prefix; empty = stdout
  std::string format = "csv";
};

inline int cmd_simulate(const SimulateCliConfig& cfg) {
  McConfig mc;
  switch (cfg.dgp) {
    case 1:
      mc.dgp.kind = DgpKind::DGP1;
      break;
    case 2:
      mc.dgp.kind = DgpKind::DGP2;
      break;
    case 3:
      mc.dgp.kind = DgpKind::DGP3;
      break;
    default:
      throw data_error("invalid dgp id: " + std::to_string(cfg.dgp) +
                       " (expected 1, 2 or 3)");
  }
  mc.dgp.n = cfg.n;
  mc.dgp.k = cfg.k;
  mc.dgp.seed = cfg.seed;
  mc.tau_tilde = cfg.tau_tilde;
  mc.reps = cfg.m;
  mc.folds = cfg.folds;
  mc.alpha = cfg.alpha;
  mc.oracle_nuisances = cfg.oracle;
  mc.learner.kind = parse_learner_kind(cfg.learner);
  mc.learner.trees = cfg.trees;
  mc.learner.rounds = cfg.rounds;
  mc.learner.trim_eps = cfg.trim;
  mc.learner.seed = cfg.seed;

  const McResult res = run_mc(mc);
  const std::vector<McResult> all{res};
  if (cfg.out.empty()) {
    std::cout << (cfg.format == "md" ? mc_table_markdown(all)
                                     : mc_table_csv(all));
  } else {
    write_text_file(cfg.out + ".csv", mc_table_csv(all));
    write_text_file(cfg.out + ".md", mc_table_markdown(all));
  }
  return kExitOk;
}

// ---- benchmark --------------------------------------------------------------

struct BenchmarkCliConfig {
  std::string experimental;  // reweighting base
  std::string target;        // population the claim is extrapolated to
  std::vector<std::string> columns;
  int bins = 10;
  double delta_star = std::numeric_limits<double>::quiet_NaN();
  std::string report_path;  // JSON report to read delta_star from
  std::string out;
};

namespace detail {

// per-column codebook over the pooled sample: numeric columns with more than
// `bins` distinct values are cut at pooled quantiles, everything else is
// discrete by value
struct ColumnCoder {
  bool binned = false;
  std::vector<double> cuts;          // upper edges, size bins-1
  std::vector<std::string> levels;   // discrete levels, lexicographic
  std::string name;

  std::string code(const std::string& cell) const {
    if (!binned) {
      for (std::size_t l = 0; l < levels.size(); ++l)
        if (levels[l] == cell) return name + "=" + levels[l];
      throw data_error("benchmark: unseen level in column " + name + ": " +
                       cell);
    }
    double v = 0.0;
    if (!parse_number(cell, &v))
      throw data_error("benchmark: non-numeric cell in binned column " + name +
                       ": \"" + cell + "\"");
    std::size_t b = 0;
    while (b < cuts.size() && v > cuts[b]) ++b;
    return name + "#bin" + std::to_string(b);
  }
};

inline ColumnCoder make_coder(const std::string& name,
                              const std::vector<std::string>& pooled,
                              int bins) {
  ColumnCoder coder;
  coder.name = name;
  std::vector<double> numeric(pooled.size());
  bool is_numeric = true;
  for (std::size_t i = 0; i < pooled.size() && is_numeric; ++i)
    is_numeric = parse_number(pooled[i], &numeric[i]);
  if (is_numeric) {
    std::set<double> distinct(numeric.begin(), numeric.end());
    if (static_cast<int>(distinct.size()) > bins) {
      coder.binned = true;
      std::vector<double> sorted = numeric;
      std::sort(sorted.begin(), sorted.end());
      for (int b = 1; b < bins; ++b) {
        // nearest-rank pooled quantile
        const std::size_t r =
            static_cast<std::size_t>(std::ceil(static_cast<double>(b) /
                                               bins * sorted.size())) -
            1;
        coder.cuts.push_back(sorted[r]);
      }
      return coder;
    }
  }
  std::set<std::string> levels(pooled.begin(), pooled.end());
  coder.levels.assign(levels.begin(), levels.end());
  return coder;
}

}  // namespace detail

struct BenchmarkResult {
  double kl = 0.0;
  std::size_t cells = 0;
  std::string comparison;
};

// KL divergence of the target covariate distribution from the experimental
// one over a shared discretization; comparable to delta* by construction.
inline BenchmarkResult run_benchmark(const CsvTable& experimental,
                                     const CsvTable& target,
                                     const std::vector<std::string>& columns,
                                     int bins, double delta_star) {
  if (columns.empty()) throw data_error("benchmark: no shared columns given");
  if (bins < 2) throw data_error("benchmark: bins must be >= 2");
  if (experimental.rows.empty() || target.rows.empty())
    throw data_error("benchmark: empty input file");

  std::vector<detail::ColumnCoder> coders;
  for (const auto& name : columns) {
    const std::size_t je = experimental.col_index(name);
    const std::size_t jt = target.col_index(name);
    std::vector<std::string> pooled;
    pooled.reserve(experimental.rows.size() + target.rows.size());
    for (const auto& r : experimental.rows) pooled.push_back(r[je]);
    for (const auto& r : target.rows) pooled.push_back(r[jt]);
    coders.push_back(detail::make_coder(name, pooled, bins));
  }

  auto cell_counts = [&](const CsvTable& t) {
    std::map<std::string, double> counts;
    std::vector<std::size_t> idx;
    for (const auto& name : columns) idx.push_back(t.col_index(name));
    for (const auto& row : t.rows) {
      std::string key;
      for (std::size_t c = 0; c < columns.size(); ++c) {
        if (c) key += "|";
        key += coders[c].code(row[idx[c]]);
      }
      counts[key] += 1.0;
    }
    for (auto& kv : counts) kv.second /= static_cast<double>(t.rows.size());
    return counts;
  };

  const auto pexp = cell_counts(experimental);
  const auto ptar = cell_counts(target);

  std::vector<std::string> violations;
  double kl = 0.0;
  for (const auto& [cell, p] : ptar) {
    const auto it = pexp.find(cell);
    if (it == pexp.end()) {
      violations.push_back(cell);
      continue;
    }
    kl += p * std::log(p / it->second);
  }
  if (!violations.empty()) {
    std::string msg =
        "benchmark: target mass outside the experimental support in cells:";
    for (const auto& v : violations) msg += " " + v;
    throw data_error(msg);
  }

  BenchmarkResult out;
  out.kl = kl;
  out.cells = ptar.size();
  if (!std::isnan(delta_star)) {
    std::ostringstream os;
    os.precision(6);
    if (delta_star > kl)
      os << "delta_star_hat = " << delta_star << " > KL(target||experimental) = "
         << kl
         << ": the claim survives shifts larger than the benchmark shift, "
            "which suggests it extrapolates to the target population";
    else
      os << "delta_star_hat = " << delta_star
         << " <= KL(target||experimental) = " << kl
         << ": the benchmark shift is large enough to invalidate the claim, "
            "so extrapolation is not supported";
    out.comparison = os.str();
  }
  return out;
}

inline int cmd_benchmark(const BenchmarkCliConfig& cfg) {
  double delta = cfg.delta_star;
  if (!cfg.report_path.empty()) {
    std::ifstream in(cfg.report_path);
    if (!in) throw data_error("cannot open report: " + cfg.report_path);
    ordered_json rep;
    try {
      in >> rep;
    } catch (const std::exception& e) {
      throw data_error("cannot parse report " + cfg.report_path + ": " +
                       e.what());
    }
    if (!rep.contains("estimate") || !rep["estimate"].contains("delta_star") ||
        rep["estimate"]["delta_star"].is_null())
      throw data_error("report " + cfg.report_path +
                       " carries no delta_star estimate");
    delta = rep["estimate"]["delta_star"].get<double>();
  }

  const CsvTable exp_table = parse_csv_file(cfg.experimental);
  const CsvTable tar_table = parse_csv_file(cfg.target);
  const BenchmarkResult res =
      run_benchmark(exp_table, tar_table, cfg.columns, cfg.bins, delta);

  ordered_json j;
  j["command"] = "benchmark";
  j["version"] = kVersion;
  j["kl_census"] = res.kl;
  j["cells"] = res.cells;
  if (!res.comparison.empty())
    j["comparison"] = res.comparison;
  else
    j["comparison"] = nullptr;
  emit(cfg.out, j.dump(2) + "\n");
  return kExitOk;
}

// ---- error mapping ----------------------------------------------------------

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const numerical_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace klshift
