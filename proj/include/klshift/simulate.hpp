#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "klshift/core.hpp"
#include "klshift/gmm.hpp"
#include "klshift/learners.hpp"
#include "klshift/rng.hpp"
#include "klshift/solver.hpp"

// Simulation designs: X ~ U[0,1]^k, D ~ Bernoulli(p_treat) independent of X,
// Y(0) = U0, Y(1) = tau(X) + U1 with U ~ N(0, noise_sd^2). Three CATE shapes
// of increasing effective dimension (1, 3, 10 active covariates), all with
// population ATE = e - 1.

namespace klshift {

enum class DgpKind { DGP1, DGP2, DGP3, CUSTOM };

struct DgpSpec {
  DgpKind kind = DgpKind::DGP1;
  std::size_t n = 1000;
  std::size_t k = 100;
  double noise_sd = 0.25;
  double p_treat = 0.5;
  std::uint64_t seed = 0;
  std::function<double(const std::vector<double>&)> custom_tau;
  std::size_t custom_dim = 0;  // covariates read by custom_tau
};

inline std::size_t dgp_active_dim(DgpKind kind) {
  switch (kind) {
    case DgpKind::DGP1:
      return 1;
    case DgpKind::DGP2:
      return 3;
    case DgpKind::DGP3:
      return 10;
    default:
      return 0;
  }
}

inline std::string dgp_name(DgpKind kind) {
  switch (kind) {
    case DgpKind::DGP1:
      return "dgp1";
    case DgpKind::DGP2:
      return "dgp2";
    case DgpKind::DGP3:
      return "dgp3";
    default:
      return "custom";
  }
}

// tau as a function of the first dgp_active_dim coordinates
inline double dgp_tau(DgpKind kind, const double* x) {
  switch (kind) {
    case DgpKind::DGP1:
      return std::exp(x[0]);
    case DgpKind::DGP2:
      return std::exp(x[0]) * (x[1] + 0.5) * (x[2] + 0.5);
    case DgpKind::DGP3: {
      double t = std::exp(x[0]) * (x[1] + 0.5) * (x[2] + 0.5);
      for (int j = 3; j < 10; ++j) t *= 0.1 * x[j] + 0.95;
      return t;
    }
    default:
      throw data_error("dgp_tau: custom kind has no built-in tau");
  }
}

struct SimDraw {
  Dataset data;
  std::vector<double> tau_true;
};

inline SimDraw generate(const DgpSpec& spec) {
  const std::size_t need = spec.kind == DgpKind::CUSTOM
                               ? spec.custom_dim
                               : dgp_active_dim(spec.kind);
  if (spec.k < need)
    throw data_error("generate: k = " + std::to_string(spec.k) +
                     " covariates but the CATE reads " + std::to_string(need));
  if (spec.kind == DgpKind::CUSTOM && !spec.custom_tau)
    throw data_error("generate: custom kind without custom_tau");
  if (!(spec.p_treat > 0.0 && spec.p_treat < 1.0))
    throw data_error("generate: p_treat must be in (0, 1)");

  SimDraw out;
  Dataset& ds = out.data;
  ds.x_cols.assign(spec.k, std::vector<double>(spec.n));
  ds.x_names.resize(spec.k);
  for (std::size_t j = 0; j < spec.k; ++j)
    ds.x_names[j] = "x" + std::to_string(j + 1);

  RngStream xs = derive_stream(spec.seed, {kTagDgpX});
  for (std::size_t i = 0; i < spec.n; ++i)
    for (std::size_t j = 0; j < spec.k; ++j) ds.x_cols[j][i] = xs.uniform();

  out.tau_true.resize(spec.n);
  std::vector<double> row(spec.k);
  for (std::size_t i = 0; i < spec.n; ++i) {
    for (std::size_t j = 0; j < spec.k; ++j) row[j] = ds.x_cols[j][i];
    out.tau_true[i] = spec.kind == DgpKind::CUSTOM
                          ? spec.custom_tau(row)
                          : dgp_tau(spec.kind, row.data());
  }

  RngStream dstream = derive_stream(spec.seed, {kTagDgpD});
  ds.d.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i)
    ds.d[i] = dstream.uniform() < spec.p_treat ? 1 : 0;

  RngStream us = derive_stream(spec.seed, {kTagDgpU});
  ds.y.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double u1 = spec.noise_sd * us.normal();
    const double u0 = spec.noise_sd * us.normal();
    ds.y[i] = ds.d[i] == 1 ? out.tau_true[i] + u1 : u0;
  }
  ds.validate();
  return out;
}

// Oracle nuisances for this design: E[Y(1)|X] = tau(X), E[Y(0)|X] = 0,
// pi(X) = p_treat. Used to isolate the GMM stage from learner error.
inline CateEstimate oracle_nuisances(const SimDraw& draw, double p_treat) {
  CateEstimate est;
  est.tau_hat = draw.tau_true;
  est.gamma1_hat = draw.tau_true;
  est.gamma0_hat.assign(draw.tau_true.size(), 0.0);
  est.pi_hat.assign(draw.tau_true.size(), p_treat);
  est.K = 0;
  est.fold_of.assign(draw.tau_true.size(), 0);
  est.trimmed_fraction = 0.0;
  return est;
}

// ---- quadrature -------------------------------------------------------------

namespace detail {

inline constexpr double kPi = 3.14159265358979323846;

// Gauss-Legendre nodes/weights on [0, 1]
inline void gauss_legendre_01(int m, std::vector<double>* nodes,
                              std::vector<double>* weights) {
  nodes->assign(m, 0.0);
  weights->assign(m, 0.0);
  for (int i = 0; i < (m + 1) / 2; ++i) {
    // Newton from the Chebyshev-angle initial guess
    double x = std::cos(kPi * (i + 0.75) / (m + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < m; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = m * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / pp;
      x -= dx;
      if (std::fabs(dx) < 1e-15) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * pp * pp);
    (*nodes)[i] = 0.5 * (1.0 - x);
    (*weights)[i] = 0.5 * w;
    (*nodes)[m - 1 - i] = 0.5 * (1.0 + x);
    (*weights)[m - 1 - i] = 0.5 * w;
  }
}

}  // namespace detail

struct PopulationOracle {
  double delta_star = 0.0;
  double lambda = 0.0;
  double ate = 0.0;
  std::size_t nodes = 0;
};

// Population delta* for the built-in designs: the scalar lambda equation is
// solved on a deterministic quadrature of the covariate law. 1-D and 3-D use
// tensor Gauss-Legendre; the 10-D design uses a rank-1 lattice rule (Korobov,
// a = 76001, n = 2^22), accurate here to ~1e-6.
inline PopulationOracle population_delta_oracle(DgpKind kind, double tau_tilde,
                                                double tol = 1e-12) {
  std::vector<double> tau, w;
  switch (kind) {
    case DgpKind::DGP1: {
      std::vector<double> nodes;
      detail::gauss_legendre_01(64, &nodes, &w);
      tau.resize(nodes.size());
      for (std::size_t i = 0; i < nodes.size(); ++i)
        tau[i] = dgp_tau(kind, &nodes[i]);
      break;
    }
    case DgpKind::DGP2: {
      std::vector<double> nodes, w1;
      detail::gauss_legendre_01(32, &nodes, &w1);
      const std::size_t m = nodes.size();
      tau.reserve(m * m * m);
      w.reserve(m * m * m);
      double x[3];
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < m; ++b)
          for (std::size_t c = 0; c < m; ++c) {
            x[0] = nodes[a];
            x[1] = nodes[b];
            x[2] = nodes[c];
            tau.push_back(dgp_tau(kind, x));
            w.push_back(w1[a] * w1[b] * w1[c]);
          }
      break;
    }
    case DgpKind::DGP3: {
      constexpr std::uint64_t n = 1ull << 22;
      constexpr std::uint64_t a = 76001;
      std::uint64_t z[10];
      z[0] = 1;
      for (int j = 1; j < 10; ++j) z[j] = (z[j - 1] * a) % n;
      tau.resize(n);
      double x[10];
      for (std::uint64_t i = 0; i < n; ++i) {
        for (int j = 0; j < 10; ++j)
          x[j] = static_cast<double>((i * z[j]) % n) / static_cast<double>(n);
        tau[i] = dgp_tau(kind, x);
      }
      break;  // equal weights
    }
    default:
      throw data_error("population_delta_oracle: no oracle for custom kind");
  }

  PopulationOracle out;
  out.nodes = tau.size();
  if (w.empty()) {
    double s = 0.0;
    for (double t : tau) s += t;
    out.ate = s / static_cast<double>(tau.size());
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < tau.size(); ++i) s += w[i] * tau[i];
    out.ate = s;
  }
  const LambdaRoot root = solve_lambda(tau, tau_tilde, w, tol);
  out.lambda = root.lambda;
  const detail::TiltStats st = detail::tilt_stats(tau, w, tau_tilde, root.lambda);
  out.delta_star = -(st.shift + std::log(st.s0));
  return out;
}

// ---- Monte Carlo ------------------------------------------------------------

struct McConfig {
  DgpSpec dgp;
  double tau_tilde = 1.3;
  LearnerSpec learner;
  int reps = 100;
  int folds = 5;
  double alpha = 0.05;
  double tol = 1e-10;
  bool oracle_nuisances = false;  // skip learners, use analytic nuisances
  double delta_pop = std::numeric_limits<double>::quiet_NaN();
};

struct McMethodSummary {
  std::string method;  // "plug-in" or "de-biased"
  double mean_delta = 0.0;
  double bias2 = 0.0;
  double variance = 0.0;
  double mse = 0.0;  // = bias2 + variance exactly (population variance form)
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double mean_se = std::numeric_limits<double>::quiet_NaN();
};

struct McResult {
  DgpKind kind = DgpKind::DGP1;
  std::string learner;
  double tau_tilde = 0.0;
  double delta_pop = 0.0;
  int reps_requested = 0;
  int reps_used = 0;
  int failures = 0;
  std::vector<McMethodSummary> methods;  // plug-in, de-biased
};

inline std::string learner_name(const LearnerSpec& spec) {
  switch (spec.kind) {
    case LearnerSpec::Kind::LINEAR:
      return "linear";
    case LearnerSpec::Kind::FOREST:
      return "forest";
    default:
      return "boosting";
  }
}

namespace detail {

inline McMethodSummary summarize_method(const std::string& name,
                                        const std::vector<double>& est,
                                        double truth) {
  McMethodSummary s;
  s.method = name;
  const double m = static_cast<double>(est.size());
  double mean = 0.0;
  for (double v : est) mean += v;
  mean /= m;
  double var = 0.0, mse = 0.0;
  for (double v : est) {
    var += (v - mean) * (v - mean);
    mse += (v - truth) * (v - truth);
  }
  s.mean_delta = mean;
  s.variance = var / m;
  s.mse = mse / m;
  s.bias2 = (mean - truth) * (mean - truth);
  return s;
}

}  // namespace detail

// Repeated-sampling comparison of the plug-in and de-biased estimators of
// delta*. Replications that fail (infeasible draw, non-convergence) are
// counted and excluded. Coverage is for the one-sided lower bound of the
// de-biased estimator against delta_pop.
inline McResult run_mc(const McConfig& cfg) {
  if (cfg.reps < 1) throw data_error("run_mc: reps must be >= 1");
  McResult out;
  out.kind = cfg.dgp.kind;
  out.learner = cfg.oracle_nuisances ? "oracle" : learner_name(cfg.learner);
  out.tau_tilde = cfg.tau_tilde;
  if (std::isnan(cfg.delta_pop) && cfg.dgp.kind == DgpKind::CUSTOM)
    throw data_error("run_mc: custom designs need an explicit delta_pop");
  out.delta_pop = std::isnan(cfg.delta_pop)
                      ? population_delta_oracle(cfg.dgp.kind, cfg.tau_tilde)
                            .delta_star
                      : cfg.delta_pop;
  out.reps_requested = cfg.reps;

  std::vector<double> plugin_est, debiased_est;
  plugin_est.reserve(cfg.reps);
  debiased_est.reserve(cfg.reps);
  int covered = 0;
  double se_sum = 0.0;

  for (int r = 0; r < cfg.reps; ++r) {
    RngStream rs = derive_stream(cfg.dgp.seed, {kTagMcRep,
                                                static_cast<std::uint64_t>(r)});
    DgpSpec dspec = cfg.dgp;
    dspec.seed = rs.next_u64();
    try {
      const SimDraw draw = generate(dspec);
      CateEstimate cate;
      if (cfg.oracle_nuisances) {
        cate = oracle_nuisances(draw, dspec.p_treat);
      } else {
        LearnerSpec lspec = cfg.learner;
        lspec.seed = rs.next_u64();
        const FoldPlan plan = make_folds(draw.data, cfg.folds, lspec.seed);
        cate = fit_predict_crossfit(draw.data, lspec, plan);
      }
      const PluginResult plugin =
          solve_theta_plugin(cate.tau_hat, cfg.tau_tilde, cfg.tol);
      const DebiasedResult deb = solve_theta_debiased(
          draw.data.y, draw.data.d, cate, cfg.tau_tilde, cfg.tol);
      const SandwichResult sw = sandwich_variance(deb.frame);
      const DeltaInference inf = delta_inference(deb.frame, sw, cfg.alpha);
      plugin_est.push_back(plugin.delta_star);
      debiased_est.push_back(deb.delta_star);
      se_sum += inf.se;
      if (inf.lower_bound <= out.delta_pop) ++covered;
    } catch (const numerical_error&) {
      ++out.failures;
    } catch (const data_error&) {
      ++out.failures;
    }
  }

  out.reps_used = static_cast<int>(debiased_est.size());
  if (out.reps_used == 0)
    throw convergence_error("run_mc: every replication failed");

  out.methods.push_back(
      detail::summarize_method("plug-in", plugin_est, out.delta_pop));
  McMethodSummary deb =
      detail::summarize_method("de-biased", debiased_est, out.delta_pop);
  deb.coverage = static_cast<double>(covered) / out.reps_used;
  deb.mean_se = se_sum / out.reps_used;
  out.methods.push_back(deb);
  return out;
}

// ---- result tables ----------------------------------------------------------

namespace detail {

inline std::string fmt_g(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

}  // namespace detail

inline std::string mc_table_csv(const std::vector<McResult>& results) {
  std::ostringstream os;
  os << "data,tau_tilde,delta_pop,method,learner,reps,failures,mean_delta,"
        "mse,bias2,variance,coverage,mean_se\n";
  for (const auto& r : results)
    for (const auto& m : r.methods) {
      os << dgp_name(r.kind) << ',' << detail::fmt_g(r.tau_tilde) << ','
         << detail::fmt_g(r.delta_pop) << ',' << m.method << ',' << r.learner
         << ',' << r.reps_used << ',' << r.failures << ','
         << detail::fmt_g(m.mean_delta) << ',' << detail::fmt_g(m.mse) << ','
         << detail::fmt_g(m.bias2) << ',' << detail::fmt_g(m.variance) << ',';
      if (!std::isnan(m.coverage)) os << detail::fmt_g(m.coverage);
      os << ',';
      if (!std::isnan(m.mean_se)) os << detail::fmt_g(m.mean_se);
      os << '\n';
    }
  return os.str();
}

inline std::string mc_table_markdown(const std::vector<McResult>& results) {
  std::ostringstream os;
  os << "| Data | delta*(tau_tilde) | Method | Learner | MSE | Bias^2 | "
        "Variance | Coverage |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : results)
    for (const auto& m : r.methods) {
      os << "| " << dgp_name(r.kind) << " | " << detail::fmt_g(r.delta_pop, 4)
         << " (" << detail::fmt_g(r.tau_tilde, 4) << ") | " << m.method
         << " | " << r.learner << " | " << detail::fmt_g(m.mse, 4) << " | "
         << detail::fmt_g(m.bias2, 4) << " | " << detail::fmt_g(m.variance, 4)
         << " | "
         << (std::isnan(m.coverage) ? std::string("-")
                                    : detail::fmt_g(m.coverage, 4))
         << " |\n";
    }
  return os.str();
}

}  // namespace klshift
