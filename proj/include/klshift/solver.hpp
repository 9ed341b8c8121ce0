#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "klshift/core.hpp"

// Exponential-tilt solvers. The least favorable reweighting of the sample
// subject to a target ATE tau_tilde has weights w_i proportional to
// exp(-lambda (tau_i - tau_tilde)), where lambda solves
//   (1/n) sum_i exp(-lambda (tau_i - tau_tilde)) (tau_i - tau_tilde) = 0,
// and the attained KL distance is delta* = -log nu with
// nu = (1/n) sum_i exp(-lambda (tau_i - tau_tilde)).
//
// All exponential sums are evaluated in shifted form exp(z_i - c) with
// c = max_i z_i, so nothing overflows for any lambda the solver visits.
// Residuals are measured on the tilted mean sum w_i tau_i / n - tau_tilde,
// which is scale-correct and implies the raw moment residual is within tol
// as well (nu <= 1 at any root).

namespace klshift {

struct FeasibilityVerdict {
  bool feasible = false;
  double tau_min = 0.0;
  double tau_max = 0.0;
  double margin = 0.0;  // min(tau_tilde - tau_min, tau_max - tau_tilde)
  std::string reason;
};

struct LambdaRoot {
  double lambda = 0.0;
  int iterations = 0;
  double residual = 0.0;
};

struct TiltSolution {
  double lambda = 0.0;
  double nu = 1.0;
  double delta_star = 0.0;
  double achieved_ate = 0.0;
  std::vector<double> weights;  // mean-one
  bool trivial = false;         // claim already violated in-sample
  int iterations = 0;
  double residual = 0.0;
};

enum class SupportLabel { UP, DOWN, NEUTRAL };

struct CurvePoint {
  double tau_tilde = 0.0;
  double lambda = 0.0;
  double delta_star = 0.0;
  bool feasible = false;
};

struct MomentConstraint {
  std::vector<double> values;  // q_l(x_i) per observation
  double target = 0.0;         // required reweighted mean of q_l
  std::string name;
};

struct ConstrainedTiltSolution {
  double lambda = 0.0;
  std::vector<double> multipliers;
  double delta_star = 0.0;
  double achieved_ate = 0.0;
  std::vector<double> weights;
  int iterations = 0;
  double residual_norm = 0.0;
};

// Conjugate pair for a phi-divergence; KL corresponds to
// conjugate(t) = exp(t - 1), conjugate_dot(t) = exp(t - 1).
struct PhiDivergenceSpec {
  std::function<double(double)> conjugate;
  std::function<double(double)> conjugate_dot;  // nondecreasing
  std::string name;
};

struct PhiTiltSolution {
  double lambda = 0.0;
  double xi = 0.0;  // normalization multiplier
  double delta = 0.0;
  std::vector<double> weights;
  bool trivial = false;
  int iterations = 0;
};

namespace detail {

struct TiltStats {
  double s0 = 0.0;     // mean of b_i exp(z_i - c), z_i = -lambda (tau_i - tt)
  double shift = 0.0;  // c
  double tilt_mean = 0.0;  // sum w tau / n - tau_tilde
  double tilt_var = 0.0;   // tilted variance of tau
};

// base weights b must sum to 1; pass empty for uniform
inline TiltStats tilt_stats(const std::vector<double>& tau,
                            const std::vector<double>& b, double tt,
                            double lambda) {
  const std::size_t n = tau.size();
  double c = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    c = std::max(c, -lambda * (tau[i] - tt));
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  if (b.empty()) {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = tau[i] - tt;
      const double e = std::exp(-lambda * d - c);
      s0 += e;
      s1 += e * d;
      s2 += e * d * d;
    }
    s0 /= static_cast<double>(n);
    s1 /= static_cast<double>(n);
    s2 /= static_cast<double>(n);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = tau[i] - tt;
      const double e = b[i] * std::exp(-lambda * d - c);
      s0 += e;
      s1 += e * d;
      s2 += e * d * d;
    }
  }
  TiltStats st;
  st.s0 = s0;
  st.shift = c;
  st.tilt_mean = s1 / s0;
  st.tilt_var = std::max(0.0, s2 / s0 - st.tilt_mean * st.tilt_mean);
  return st;
}

inline void check_base_weights(const std::vector<double>& tau,
                               const std::vector<double>& b) {
  if (b.empty()) return;
  if (b.size() != tau.size())
    throw data_error("solve_lambda: base weights length " +
                     std::to_string(b.size()) + " != tau length " +
                     std::to_string(tau.size()));
  double sum = 0.0;
  for (double bi : b) {
    if (!(bi >= 0.0))
      throw data_error("solve_lambda: negative or NaN base weight");
    sum += bi;
  }
  if (std::fabs(sum - 1.0) > kMassTol)
    throw data_error("solve_lambda: base weights sum to " +
                     std::to_string(sum) + ", not 1");
}

inline void weighted_range(const std::vector<double>& tau,
                           const std::vector<double>& b, double* lo,
                           double* hi, double* mean) {
  *lo = std::numeric_limits<double>::infinity();
  *hi = -std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    const double w = b.empty() ? 1.0 / static_cast<double>(tau.size()) : b[i];
    if (w <= 0.0 && !b.empty()) continue;  // zero-mass points don't bind
    *lo = std::min(*lo, tau[i]);
    *hi = std::max(*hi, tau[i]);
    m += w * tau[i];
  }
  *mean = m;
}

}  // namespace detail

inline FeasibilityVerdict feasibility_check(const std::vector<double>& tau,
                                            double tau_tilde,
                                            const std::vector<double>& b = {}) {
  if (tau.empty()) throw data_error("feasibility_check: empty tau");
  detail::check_base_weights(tau, b);
  FeasibilityVerdict v;
  double mean = 0.0;
  detail::weighted_range(tau, b, &v.tau_min, &v.tau_max, &mean);
  v.margin = std::min(tau_tilde - v.tau_min, v.tau_max - tau_tilde);
  v.feasible = v.tau_min < tau_tilde && tau_tilde < v.tau_max;
  if (v.feasible) {
    v.reason = "tau_tilde strictly inside the support of tau";
  } else {
    v.reason = "tau_tilde = " + std::to_string(tau_tilde) +
               " is not strictly inside (" + std::to_string(v.tau_min) + ", " +
               std::to_string(v.tau_max) +
               "); no absolutely continuous reweighting attains it and the "
               "robustness metric is infinite";
  }
  return v;
}

// Root of the tilt moment in lambda. Strictly decreasing in lambda, so a
// geometric bracket expansion (capped at 2^60) plus bisection-safeguarded
// Newton converges for any strictly interior tau_tilde.
inline LambdaRoot solve_lambda(const std::vector<double>& tau,
                               double tau_tilde,
                               const std::vector<double>& base_weights = {},
                               double tol = 1e-10, int max_iter = 300) {
  if (tau.empty()) throw data_error("solve_lambda: empty tau");
  if (!(tol > 0.0)) throw data_error("solve_lambda: tol must be positive");
  detail::check_base_weights(tau, base_weights);

  double lo_tau, hi_tau, mean_tau;
  detail::weighted_range(tau, base_weights, &lo_tau, &hi_tau, &mean_tau);
  if (hi_tau - lo_tau < 1e-12) {
    if (std::fabs(mean_tau - tau_tilde) <= tol) return {0.0, 0, 0.0};
    throw infeasible_error(
        "solve_lambda: tau is degenerate (all values equal " +
        std::to_string(mean_tau) + ") and cannot be reweighted to " +
        std::to_string(tau_tilde) + "; robustness metric is infinite");
  }
  const FeasibilityVerdict v = feasibility_check(tau, tau_tilde, base_weights);
  if (!v.feasible) throw infeasible_error("solve_lambda: " + v.reason);

  auto resid = [&](double lam) {
    return detail::tilt_stats(tau, base_weights, tau_tilde, lam);
  };

  detail::TiltStats st = resid(0.0);
  int iters = 0;
  if (std::fabs(st.tilt_mean) <= tol) return {0.0, 0, st.tilt_mean};

  // residual is positive at 0 iff the root lies at lambda > 0
  double lo, hi;
  const double cap = std::ldexp(1.0, 60);
  if (st.tilt_mean > 0.0) {
    lo = 0.0;
    hi = 1.0;
    while (true) {
      ++iters;
      if (resid(hi).tilt_mean <= 0.0) break;
      lo = hi;
      hi *= 2.0;
      if (hi > cap)
        throw convergence_error(
            "solve_lambda: bracket cap 2^60 reached; tau_tilde = " +
            std::to_string(tau_tilde) +
            " is too close to the support boundary");
    }
  } else {
    hi = 0.0;
    lo = -1.0;
    while (true) {
      ++iters;
      if (resid(lo).tilt_mean >= 0.0) break;
      hi = lo;
      lo *= 2.0;
      if (lo < -cap)
        throw convergence_error(
            "solve_lambda: bracket cap 2^60 reached; tau_tilde = " +
            std::to_string(tau_tilde) +
            " is too close to the support boundary");
    }
  }

  // safeguarded Newton on the tilted-mean residual; derivative is
  // minus the tilted variance of tau
  double lam = 0.5 * (lo + hi);
  for (; iters < max_iter; ++iters) {
    st = resid(lam);
    const double r = st.tilt_mean;
    if (std::fabs(r) <= tol) return {lam, iters, r};
    if (r > 0.0)
      lo = lam;
    else
      hi = lam;
    double next = lam + r / std::max(st.tilt_var, 1e-300);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == lam) {
      // bracket collapsed to fp resolution; accept if the residual is
      // within a spacing-limited bound, otherwise report honestly
      if (std::fabs(r) <= tol * 1e3) return {lam, iters, r};
      break;
    }
    lam = next;
  }
  st = resid(lam);
  if (std::fabs(st.tilt_mean) <= tol) return {lam, max_iter, st.tilt_mean};
  throw convergence_error(
      "solve_lambda: no convergence after " + std::to_string(max_iter) +
      " iterations; residual = " + std::to_string(st.tilt_mean));
}

namespace detail {

// mean-one weights for a solved lambda
inline std::vector<double> tilt_weights(const std::vector<double>& tau,
                                        double tau_tilde, double lambda,
                                        double* nu_out, double* delta_out) {
  const TiltStats st = tilt_stats(tau, {}, tau_tilde, lambda);
  std::vector<double> w(tau.size());
  for (std::size_t i = 0; i < tau.size(); ++i)
    w[i] = std::exp(-lambda * (tau[i] - tau_tilde) - st.shift) / st.s0;
  if (nu_out) *nu_out = std::exp(st.shift) * st.s0;
  if (delta_out) *delta_out = -(st.shift + std::log(st.s0));
  return w;
}

}  // namespace detail

// Least favorable reweighting for a claim. If the sample already violates
// the claim, the empirical distribution itself is least favorable and the
// solution is trivial (delta* = 0, unit weights).
inline TiltSolution tilt_solve(const std::vector<double>& tau,
                               const Claim& claim, double tol = 1e-10) {
  if (tau.empty()) throw data_error("tilt_solve: empty tau");
  TiltSolution sol;
  const double ate = ate_under_weights(tau);
  if (!claim_holds(ate, claim)) {
    sol.trivial = true;
    sol.lambda = 0.0;
    sol.nu = 1.0;
    sol.delta_star = 0.0;
    sol.achieved_ate = ate;
    sol.weights.assign(tau.size(), 1.0);
    return sol;
  }
  const FeasibilityVerdict v = feasibility_check(tau, claim.tau_tilde);
  if (!v.feasible) throw infeasible_error("tilt_solve: " + v.reason);
  const LambdaRoot root = solve_lambda(tau, claim.tau_tilde, {}, tol);
  sol.lambda = root.lambda;
  sol.iterations = root.iterations;
  sol.residual = root.residual;
  sol.weights =
      detail::tilt_weights(tau, claim.tau_tilde, root.lambda, &sol.nu,
                           &sol.delta_star);
  sol.achieved_ate = ate_under_weights(tau, sol.weights);
  return sol;
}

// Labels each observation by whether the least favorable distribution moves
// mass toward it (w > 1), away from it (w < 1), or leaves it unchanged.
inline std::vector<SupportLabel> partition_support(
    const std::vector<double>& tau, double lambda, double tol = 1e-10) {
  if (tau.empty()) throw data_error("partition_support: empty tau");
  double c = -std::numeric_limits<double>::infinity();
  for (double t : tau) c = std::max(c, -lambda * t);
  double m = 0.0;
  for (double t : tau) m += std::exp(-lambda * t - c);
  m /= static_cast<double>(tau.size());
  std::vector<SupportLabel> labels(tau.size());
  for (std::size_t i = 0; i < tau.size(); ++i) {
    const double ratio = std::exp(-lambda * tau[i] - c) / m;
    if (ratio > 1.0 + tol)
      labels[i] = SupportLabel::UP;
    else if (ratio < 1.0 - tol)
      labels[i] = SupportLabel::DOWN;
    else
      labels[i] = SupportLabel::NEUTRAL;
  }
  return labels;
}

// lambda and delta* over a grid of targets; infeasible grid points are
// flagged rather than thrown.
inline std::vector<CurvePoint> lambda_curve(const std::vector<double>& tau,
                                            const std::vector<double>& grid,
                                            double tol = 1e-10) {
  std::vector<CurvePoint> out;
  out.reserve(grid.size());
  for (double tt : grid) {
    CurvePoint p;
    p.tau_tilde = tt;
    const FeasibilityVerdict v = feasibility_check(tau, tt);
    if (!v.feasible) {
      p.feasible = false;
      p.lambda = std::numeric_limits<double>::quiet_NaN();
      p.delta_star = std::numeric_limits<double>::quiet_NaN();
    } else {
      const LambdaRoot root = solve_lambda(tau, tt, {}, tol);
      p.feasible = true;
      p.lambda = root.lambda;
      detail::tilt_weights(tau, tt, root.lambda, nullptr, &p.delta_star);
    }
    out.push_back(p);
  }
  return out;
}

struct ProfileRow {
  double tau_tilde = 0.0;
  double lambda = 0.0;
  double mass_in_ball = 0.0;
};

struct ConcentrationProfile {
  std::vector<ProfileRow> rows;
  double peak_x = 0.0;       // covariate value at the argmax of tau
  bool ambiguous_peak = false;
};

// Mass the least favorable distribution places near the argmax of tau as the
// target approaches the attainable boundary. Distances are measured on the
// standardized covariate (base-sample mean/sd), so ball_radius is in sd units.
inline ConcentrationProfile concentration_profile(
    const std::vector<double>& tau, const std::vector<double>& x,
    const std::vector<double>& grid, double ball_radius, double tol = 1e-10) {
  if (tau.size() != x.size())
    throw data_error("concentration_profile: tau and x lengths differ");
  if (tau.empty()) throw data_error("concentration_profile: empty input");
  if (!(ball_radius > 0.0))
    throw data_error("concentration_profile: ball_radius must be positive");

  const double n = static_cast<double>(x.size());
  double mx = 0.0;
  for (double xi : x) mx += xi;
  mx /= n;
  double sx = 0.0;
  for (double xi : x) sx += (xi - mx) * (xi - mx);
  sx = std::sqrt(sx / n);
  if (sx < 1e-300)
    throw data_error("concentration_profile: x has zero variance");

  std::size_t peak = 0;
  for (std::size_t i = 1; i < tau.size(); ++i)
    if (tau[i] > tau[peak]) peak = i;

  ConcentrationProfile prof;
  prof.peak_x = x[peak];
  const double tau_top =
      tau[peak] - 1e-9 * std::max(1.0, std::fabs(tau[peak]));
  for (std::size_t i = 0; i < tau.size(); ++i) {
    if (tau[i] >= tau_top &&
        std::fabs(x[i] - x[peak]) / sx > ball_radius) {
      prof.ambiguous_peak = true;
      break;
    }
  }

  std::vector<char> in_ball(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    in_ball[i] = std::fabs(x[i] - x[peak]) / sx <= ball_radius ? 1 : 0;

  prof.rows.reserve(grid.size());
  for (double tt : grid) {
    const LambdaRoot root = solve_lambda(tau, tt, {}, tol);
    const std::vector<double> w =
        detail::tilt_weights(tau, tt, root.lambda, nullptr, nullptr);
    double mass = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
      if (in_ball[i]) mass += w[i];
    prof.rows.push_back({tt, root.lambda, mass / n});
  }
  return prof;
}

namespace detail {

// Phase-1 simplex feasibility for {p >= 0, sum p = 1, sum p tau = tau_tilde,
// sum p q_l = target_l}. Rows are few; columns are the n support points plus
// one artificial per row.
inline bool lp_feasible(const std::vector<std::vector<double>>& rows,
                        std::vector<double> rhs, std::size_t n) {
  const std::size_t m = rows.size();
  // canonical form with nonnegative rhs
  std::vector<std::vector<double>> a(m, std::vector<double>(n + m, 0.0));
  for (std::size_t r = 0; r < m; ++r) {
    double sgn = rhs[r] < 0.0 ? -1.0 : 1.0;
    rhs[r] *= sgn;
    for (std::size_t j = 0; j < n; ++j) a[r][j] = sgn * rows[r][j];
    a[r][n + r] = 1.0;
  }
  std::vector<std::size_t> basis(m);
  for (std::size_t r = 0; r < m; ++r) basis[r] = n + r;
  // price out artificials: objective row = -sum of constraint rows over
  // non-artificial columns
  std::vector<double> obj(n + m, 0.0);
  double obj_val = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < n; ++j) obj[j] -= a[r][j];
    obj_val -= rhs[r];
  }
  const double eps = 1e-11;
  for (int iter = 0; iter < 10000; ++iter) {
    // Bland's rule: first column with negative reduced cost
    std::size_t enter = n + m;
    for (std::size_t j = 0; j < n + m; ++j)
      if (obj[j] < -eps) {
        enter = j;
        break;
      }
    if (enter == n + m) break;
    std::size_t leave = m;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < m; ++r)
      if (a[r][enter] > eps) {
        const double ratio = rhs[r] / a[r][enter];
        if (ratio < best - eps ||
            (ratio < best + eps && (leave == m || basis[r] < basis[leave]))) {
          best = ratio;
          leave = r;
        }
      }
    if (leave == m) break;  // unbounded direction cannot occur in phase 1
    const double piv = a[leave][enter];
    for (auto& val : a[leave]) val /= piv;
    rhs[leave] /= piv;
    for (std::size_t r = 0; r < m; ++r)
      if (r != leave && std::fabs(a[r][enter]) > 1e-300) {
        const double f = a[r][enter];
        for (std::size_t j = 0; j < n + m; ++j) a[r][j] -= f * a[leave][j];
        rhs[r] -= f * rhs[leave];
      }
    if (std::fabs(obj[enter]) > 1e-300) {
      const double f = obj[enter];
      for (std::size_t j = 0; j < n + m; ++j) obj[j] -= f * a[leave][j];
      obj_val -= f * rhs[leave];
    }
    basis[leave] = enter;
  }
  return std::fabs(obj_val) <= 1e-8;
}

}  // namespace detail

// Tilt solve with additional moment constraints E_w[q_l] = target_l, solved
// jointly over (lambda, mu_1..mu_L) by damped Newton. The Jacobian of the
// residual map is minus the tilted covariance of (tau, q_1..q_L), so each
// step solves a small symmetric system.
inline ConstrainedTiltSolution constrained_tilt_solve(
    const std::vector<double>& tau,
    const std::vector<MomentConstraint>& constraints, double tau_tilde,
    double tol = 1e-10, int max_iter = 400) {
  if (tau.empty()) throw data_error("constrained_tilt_solve: empty tau");
  const std::size_t n = tau.size();
  const std::size_t L = constraints.size();
  for (const auto& c : constraints)
    if (c.values.size() != n)
      throw data_error("constrained_tilt_solve: constraint '" + c.name +
                       "' has " + std::to_string(c.values.size()) +
                       " values for n = " + std::to_string(n));

  // LP feasibility of the target moments over the simplex
  {
    std::vector<std::vector<double>> rows;
    std::vector<double> rhs;
    rows.emplace_back(n, 1.0);
    rhs.push_back(1.0);
    rows.push_back(tau);
    rhs.push_back(tau_tilde);
    for (const auto& c : constraints) {
      rows.push_back(c.values);
      rhs.push_back(c.target);
    }
    if (!detail::lp_feasible(rows, rhs, n))
      throw infeasible_error(
          "constrained_tilt_solve: no distribution on the sample support "
          "attains ATE = " +
          std::to_string(tau_tilde) + " together with the " +
          std::to_string(L) + " moment target(s); robustness metric is "
          "infinite");
  }

  const std::size_t dim = L + 1;
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(dim);
  try {
    eta[0] = solve_lambda(tau, tau_tilde, {}, std::min(tol * 1e2, 1e-8)).lambda;
  } catch (const numerical_error&) {
    eta[0] = 0.0;
  }

  // v_0 = tau - tau_tilde, v_l = q_l - target_l; residual_a = E_w[v_a]
  std::vector<const std::vector<double>*> vals(dim);
  std::vector<double> cent(dim);
  vals[0] = &tau;
  cent[0] = tau_tilde;
  for (std::size_t l = 0; l < L; ++l) {
    vals[1 + l] = &constraints[l].values;
    cent[1 + l] = constraints[l].target;
  }

  std::vector<double> w(n);
  auto eval = [&](const Eigen::VectorXd& e, Eigen::VectorXd* resid,
                  Eigen::MatrixXd* jac) {
    double c = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0.0;
      for (std::size_t a = 0; a < dim; ++a)
        z -= e[a] * ((*vals[a])[i] - cent[a]);
      w[i] = z;
      c = std::max(c, z);
    }
    double s0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = std::exp(w[i] - c);
      s0 += w[i];
    }
    for (std::size_t i = 0; i < n; ++i) w[i] *= static_cast<double>(n) / s0;
    resid->setZero(dim);
    for (std::size_t a = 0; a < dim; ++a) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        acc += w[i] * ((*vals[a])[i] - cent[a]);
      (*resid)[a] = acc / static_cast<double>(n);
    }
    if (jac) {
      jac->setZero(dim, dim);
      for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = a; b < dim; ++b) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            acc += w[i] * ((*vals[a])[i] - cent[a]) *
                   ((*vals[b])[i] - cent[b]);
          const double cov = acc / static_cast<double>(n) -
                             (*resid)[a] * (*resid)[b];
          (*jac)(a, b) = -cov;
          (*jac)(b, a) = -cov;
        }
    }
  };

  Eigen::VectorXd resid(dim);
  Eigen::MatrixXd jac(dim, dim);
  int iters = 0;
  for (; iters < max_iter; ++iters) {
    eval(eta, &resid, &jac);
    const double rn = resid.lpNorm<Eigen::Infinity>();
    if (rn <= tol) break;
    Eigen::MatrixXd reg = jac;
    for (std::size_t a = 0; a < dim; ++a) reg(a, a) -= 1e-12;
    Eigen::VectorXd step = reg.ldlt().solve(-resid);
    double t = 1.0;
    Eigen::VectorXd r_try(dim);
    bool moved = false;
    while (t >= 1e-10) {
      Eigen::VectorXd cand = eta + t * step;
      eval(cand, &r_try, nullptr);
      if (r_try.lpNorm<Eigen::Infinity>() < rn * (1.0 - 1e-4 * t) ||
          r_try.lpNorm<Eigen::Infinity>() <= tol) {
        eta = cand;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved)
      throw convergence_error(
          "constrained_tilt_solve: damped Newton stalled at residual " +
          std::to_string(rn) +
          "; the moment targets are likely attainable only on the boundary "
          "of the simplex");
  }
  eval(eta, &resid, nullptr);
  const double rn = resid.lpNorm<Eigen::Infinity>();
  if (rn > tol)
    throw convergence_error(
        "constrained_tilt_solve: no convergence after " +
        std::to_string(max_iter) + " iterations; residual = " +
        std::to_string(rn));

  ConstrainedTiltSolution sol;
  sol.lambda = eta[0];
  sol.multipliers.assign(eta.data() + 1, eta.data() + dim);
  sol.weights = w;
  sol.delta_star = kl_weighted_empirical(w);
  sol.achieved_ate = ate_under_weights(tau, w);
  sol.iterations = iters;
  sol.residual_norm = rn;
  return sol;
}

// Least favorable reweighting under a general phi-divergence, via the dual
// conditions  mean conjugate_dot(t_i) = 1  and  mean conjugate_dot(t_i)
// (tau_i - tau_tilde) = 0  with t_i = -lambda (tau_i - tau_tilde) - xi.
// Nested monotone scalar solves: xi given lambda, then lambda.
inline PhiTiltSolution phi_tilt_solve(const std::vector<double>& tau,
                                      const Claim& claim,
                                      const PhiDivergenceSpec& spec,
                                      double tol = 1e-9) {
  if (tau.empty()) throw data_error("phi_tilt_solve: empty tau");
  if (!spec.conjugate || !spec.conjugate_dot)
    throw data_error("phi_tilt_solve: conjugate and conjugate_dot required");
  const std::size_t n = tau.size();
  const double tt = claim.tau_tilde;

  auto solve_scalar = [&](const std::function<double(double)>& f, double lo,
                          double hi, const char* what) {
    // f must be monotone nonincreasing with a sign change in [lo, hi]
    double flo = f(lo), fhi = f(hi);
    int guard = 0;
    while (flo < 0.0 && guard++ < 90) {
      hi = lo;
      fhi = flo;
      lo = lo < 0 ? lo * 2.0 : lo - std::max(1.0, std::fabs(lo));
      flo = f(lo);
    }
    guard = 0;
    while (fhi > 0.0 && guard++ < 90) {
      lo = hi;
      flo = fhi;
      hi = hi > 0 ? hi * 2.0 : hi + std::max(1.0, std::fabs(hi));
      fhi = f(hi);
    }
    if (flo < 0.0 || fhi > 0.0)
      throw convergence_error(std::string("phi_tilt_solve: cannot bracket ") +
                              what);
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double fm = f(mid);
      if (std::fabs(fm) <= tol || hi - lo < 1e-15 * std::max(1.0, std::fabs(mid)))
        return mid;
      if (fm > 0.0)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  };

  auto xi_for = [&](double lambda) {
    auto norm_gap = [&](double xi) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        acc += spec.conjugate_dot(-lambda * (tau[i] - tt) - xi);
      return acc / static_cast<double>(n) - 1.0;
    };
    // conjugate_dot is nondecreasing, so the gap decreases in xi
    return solve_scalar(norm_gap, -1.0, 1.0, "the normalization multiplier");
  };

  PhiTiltSolution sol;
  const double ate = ate_under_weights(tau);
  if (!claim_holds(ate, claim)) {
    sol.trivial = true;
    sol.lambda = 0.0;
    sol.xi = xi_for(0.0);
    sol.weights.assign(n, 1.0);
    sol.delta = 0.0;
    return sol;
  }
  const FeasibilityVerdict v = feasibility_check(tau, tt);
  if (!v.feasible) throw infeasible_error("phi_tilt_solve: " + v.reason);

  int outer_iters = 0;
  auto tilt_gap = [&](double lambda) {
    ++outer_iters;
    const double xi = xi_for(lambda);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      acc += spec.conjugate_dot(-lambda * (tau[i] - tt) - xi) * (tau[i] - tt);
    return acc / static_cast<double>(n);
  };
  const double lambda = solve_scalar(tilt_gap, -1.0, 1.0, "lambda");
  const double xi = xi_for(lambda);

  sol.lambda = lambda;
  sol.xi = xi;
  sol.iterations = outer_iters;
  sol.weights.resize(n);
  double dual = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = -lambda * (tau[i] - tt) - xi;
    sol.weights[i] = spec.conjugate_dot(t);
    dual -= spec.conjugate(t);
  }
  sol.delta = dual / static_cast<double>(n) - xi;
  return sol;
}

}  // namespace klshift
