#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "klshift/core.hpp"
#include "klshift/learners.hpp"
#include "klshift/solver.hpp"

// De-biased GMM for theta = (nu, lambda). Moments per observation, with
// Delta_i = tau_hat_i - tau_tilde and e_i = exp(-lambda Delta_i):
//   g_1 = e_i - nu,          g_2 = e_i Delta_i,
// and the first-stage influence correction
//   phi = [ e_i (-lambda); e_i (1 - lambda Delta_i) ] *
//         [ d (y - gamma1)/pi - (1 - d)(y - gamma0)/(1 - pi) ].
// phi has mean zero at the true nuisances for any theta, and psi = g + phi
// is Neyman orthogonal: first-stage estimation error moves mean psi only at
// second order. The de-biased estimator solves mean g(theta) + mean
// phi(theta_tilde) = 0 with theta_tilde a plug-in pilot.

namespace klshift {

struct Theta {
  double nu = 1.0;
  double lambda = 0.0;
};

struct MomentColumns {
  std::vector<double> g1, g2;
};

struct InfluenceColumns {
  std::vector<double> phi1, phi2;
  std::vector<double> resid;  // AIPW residual factor
};

inline MomentColumns moment_g(const Theta& theta,
                              const std::vector<double>& tau_hat,
                              double tau_tilde) {
  MomentColumns cols;
  cols.g1.resize(tau_hat.size());
  cols.g2.resize(tau_hat.size());
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    const double d = tau_hat[i] - tau_tilde;
    const double e = std::exp(-theta.lambda * d);
    cols.g1[i] = e - theta.nu;
    cols.g2[i] = e * d;
  }
  return cols;
}

inline InfluenceColumns influence_phi(const Theta& theta,
                                      const std::vector<double>& y,
                                      const std::vector<int>& d,
                                      const CateEstimate& cate,
                                      double tau_tilde) {
  const std::size_t n = y.size();
  if (d.size() != n || cate.tau_hat.size() != n)
    throw data_error("influence_phi: input lengths differ");
  InfluenceColumns cols;
  cols.phi1.resize(n);
  cols.phi2.resize(n);
  cols.resid.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dd = cate.tau_hat[i] - tau_tilde;
    const double e = std::exp(-theta.lambda * dd);
    const double r =
        d[i] == 1
            ? (y[i] - cate.gamma1_hat[i]) / cate.pi_hat[i]
            : -(y[i] - cate.gamma0_hat[i]) / (1.0 - cate.pi_hat[i]);
    cols.resid[i] = r;
    cols.phi1[i] = e * (-theta.lambda) * r;
    cols.phi2[i] = e * (1.0 - theta.lambda * dd) * r;
  }
  return cols;
}

// Per-observation frame at the solved parameters; basis for all variance
// estimation.
struct MomentFrame {
  Theta theta;        // g evaluated here
  Theta theta_tilde;  // phi evaluated here
  double tau_tilde = 0.0;
  std::vector<double> delta;    // tau_hat - tau_tilde
  std::vector<double> e_hat;    // exp(-lambda_hat * delta)
  std::vector<double> e_tilde;  // exp(-lambda_tilde * delta)
  std::vector<double> g1, g2, phi1, phi2, resid;

  std::size_t n() const { return delta.size(); }
  double psi1(std::size_t i) const { return g1[i] + phi1[i]; }
  double psi2(std::size_t i) const { return g2[i] + phi2[i]; }
};

struct PluginResult {
  Theta theta;
  double delta_star = 0.0;
  LambdaRoot root;
};

// Plug-in GMM point estimate: identical lambda root and delta* as
// tilt_solve on the same tau_hat values.
inline PluginResult solve_theta_plugin(const std::vector<double>& tau_hat,
                                       double tau_tilde, double tol = 1e-10) {
  PluginResult res;
  res.root = solve_lambda(tau_hat, tau_tilde, {}, tol);
  const detail::TiltStats st =
      detail::tilt_stats(tau_hat, {}, tau_tilde, res.root.lambda);
  res.theta.lambda = res.root.lambda;
  res.theta.nu = std::exp(st.shift) * st.s0;
  res.delta_star = -(st.shift + std::log(st.s0));
  return res;
}

struct DebiasedResult {
  Theta theta;
  Theta theta_tilde;
  double delta_star = 0.0;
  Eigen::Vector2d correction = Eigen::Vector2d::Zero();  // mean phi
  MomentFrame frame;
  LambdaRoot root;
};

namespace detail {

// raw moment mean[e^{-lambda delta} delta] evaluated safely; saturates at
// +-1e308 instead of overflowing so bracket expansion keeps working
inline double raw_tilt_moment(const std::vector<double>& delta, double lambda,
                              double* deriv) {
  double c = -std::numeric_limits<double>::infinity();
  for (double d : delta) c = std::max(c, -lambda * d);
  double s1 = 0.0, s2 = 0.0;
  for (double d : delta) {
    const double e = std::exp(-lambda * d - c);
    s1 += e * d;
    s2 += e * d * d;
  }
  const double n = static_cast<double>(delta.size());
  s1 /= n;
  s2 /= n;
  auto scaled = [&](double s) {
    if (s == 0.0) return 0.0;
    const double l = c + std::log(std::fabs(s));
    if (l > 709.0) return s > 0.0 ? 1e308 : -1e308;
    return s > 0.0 ? std::exp(l) : -std::exp(l);
  };
  if (deriv) *deriv = -scaled(s2);
  return scaled(s1);
}

}  // namespace detail

// Solves mean g(theta) + mean phi(theta_tilde) = 0. The second equation
// pins lambda through a strictly decreasing scalar moment (safeguarded
// bisection + Newton), then nu is explicit; this is Newton on the stacked
// triangular system with a derivative-free fallback built in.
inline DebiasedResult solve_theta_debiased(const std::vector<double>& y,
                                           const std::vector<int>& d,
                                           const CateEstimate& cate,
                                           double tau_tilde,
                                           double tol = 1e-10,
                                           int iterations = 1) {
  if (iterations < 1)
    throw data_error("solve_theta_debiased: iterations must be >= 1");
  const std::size_t n = y.size();
  if (d.size() != n || cate.tau_hat.size() != n)
    throw data_error("solve_theta_debiased: input lengths differ");

  DebiasedResult res;
  const PluginResult plugin = solve_theta_plugin(cate.tau_hat, tau_tilde, tol);
  res.theta_tilde = plugin.theta;

  std::vector<double> delta(n);
  for (std::size_t i = 0; i < n; ++i)
    delta[i] = cate.tau_hat[i] - tau_tilde;

  InfluenceColumns phi;
  Theta at = plugin.theta;
  for (int pass = 0; pass < iterations; ++pass) {
    res.theta_tilde = at;
    phi = influence_phi(at, y, d, cate, tau_tilde);
    double c1 = 0.0, c2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      c1 += phi.phi1[i];
      c2 += phi.phi2[i];
    }
    c1 /= static_cast<double>(n);
    c2 /= static_cast<double>(n);
    res.correction << c1, c2;

    // lambda solves mean[e(lambda) delta] = -c2
    auto f = [&](double lam, double* der) {
      return detail::raw_tilt_moment(delta, lam, der) + c2;
    };
    double lam = at.lambda;
    double flam = f(lam, nullptr);
    int iters = 0;
    double lo, hi;
    if (std::fabs(flam) <= tol) {
      res.root = {lam, 0, flam};
    } else {
      double step = 1.0;
      if (flam > 0.0) {
        lo = lam;
        hi = lam + step;
        while (f(hi, nullptr) > 0.0) {
          lo = hi;
          step *= 2.0;
          hi = lam + step;
          if (++iters > 200)
            throw convergence_error(
                "solve_theta_debiased: cannot bracket the corrected moment");
        }
      } else {
        hi = lam;
        lo = lam - step;
        while (f(lo, nullptr) < 0.0) {
          hi = lo;
          step *= 2.0;
          lo = lam - step;
          if (++iters > 200)
            throw convergence_error(
                "solve_theta_debiased: cannot bracket the corrected moment");
        }
      }
      double cur = 0.5 * (lo + hi);
      bool done = false;
      for (int it = 0; it < 300; ++it) {
        double der = 0.0;
        const double fv = f(cur, &der);
        if (std::fabs(fv) <= tol) {
          res.root = {cur, it, fv};
          done = true;
          break;
        }
        if (fv > 0.0)
          lo = cur;
        else
          hi = cur;
        double next = der < 0.0 ? cur - fv / der : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (next == cur) {
          res.root = {cur, it, fv};
          done = true;
          break;
        }
        cur = next;
      }
      if (!done)
        throw convergence_error(
            "solve_theta_debiased: corrected moment did not converge");
      lam = res.root.lambda;
    }

    const detail::TiltStats st =
        detail::tilt_stats(cate.tau_hat, {}, tau_tilde, lam);
    at.lambda = lam;
    at.nu = std::exp(st.shift) * st.s0 + c1;
  }

  res.theta = at;
  if (!(res.theta.nu > 0.0))
    throw numerical_error(
        "solve_theta_debiased: nu_hat = " + std::to_string(res.theta.nu) +
        " violates the restriction 0 <= nu; tau_tilde is too extreme for "
        "this sample");
  res.delta_star = -std::log(res.theta.nu);

  MomentFrame& fr = res.frame;
  fr.theta = res.theta;
  fr.theta_tilde = res.theta_tilde;
  fr.tau_tilde = tau_tilde;
  fr.delta = std::move(delta);
  fr.e_hat.resize(n);
  fr.e_tilde.resize(n);
  fr.g1.resize(n);
  fr.g2.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    fr.e_hat[i] = std::exp(-res.theta.lambda * fr.delta[i]);
    fr.e_tilde[i] = std::exp(-res.theta_tilde.lambda * fr.delta[i]);
    fr.g1[i] = fr.e_hat[i] - res.theta.nu;
    fr.g2[i] = fr.e_hat[i] * fr.delta[i];
  }
  fr.phi1 = std::move(phi.phi1);
  fr.phi2 = std::move(phi.phi2);
  fr.resid = std::move(phi.resid);
  return res;
}

struct SandwichResult {
  Eigen::Matrix2d S = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d G = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d Omega = Eigen::Matrix2d::Zero();
};

// S = G^-1 Omega G^-T with the analytic g-Jacobian
//   G = [ -1, -mean(delta e) ; 0, -mean(delta^2 e) ]
// (the theta-derivative of phi is mean-zero at the truth and is omitted)
// and Omega = mean psi psi'.
inline SandwichResult sandwich_variance(const MomentFrame& frame) {
  const std::size_t n = frame.n();
  if (n == 0) throw data_error("sandwich_variance: empty frame");
  double de = 0.0, d2e = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    de += frame.delta[i] * frame.e_hat[i];
    d2e += frame.delta[i] * frame.delta[i] * frame.e_hat[i];
  }
  de /= static_cast<double>(n);
  d2e /= static_cast<double>(n);
  if (!(d2e > 1e-14))
    throw numerical_error(
        "sandwich_variance: tilted variance of tau_hat along lambda is "
        "numerically zero (tau_hat is homogeneous); the lambda direction is "
        "degenerate");

  SandwichResult out;
  out.G << -1.0, -de, 0.0, -d2e;
  for (std::size_t i = 0; i < n; ++i) {
    const double p1 = frame.psi1(i), p2 = frame.psi2(i);
    out.Omega(0, 0) += p1 * p1;
    out.Omega(0, 1) += p1 * p2;
    out.Omega(1, 1) += p2 * p2;
  }
  out.Omega(1, 0) = out.Omega(0, 1);
  out.Omega /= static_cast<double>(n);

  const Eigen::Matrix2d gi = out.G.inverse();
  out.S = gi * out.Omega * gi.transpose();
  out.S = 0.5 * (out.S + out.S.transpose().eval());
  return out;
}

// inverse standard normal CDF (Acklam's rational approximation, |eps|<1.2e-9)
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw data_error("normal_quantile: p must be in (0, 1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double q, r, x;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  } else if (p <= phigh) {
    q = p - 0.5;
    r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
          c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  }
  return x;
}

struct DeltaInference {
  double delta_hat = 0.0;
  double se = 0.0;
  double lower_bound = 0.0;
  double alpha = 0.05;
  double z = 0.0;
};

// delta_hat = -log nu_hat; by the delta method Var(delta_hat) = S11/nu^2/n,
// reported as a one-sided lower confidence bound (robustness claims care
// about how small delta* could be).
inline DeltaInference delta_inference(const MomentFrame& frame,
                                      const SandwichResult& sw,
                                      double alpha = 0.05) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw data_error("delta_inference: alpha must be in (0, 1)");
  const double nu = frame.theta.nu;
  if (!(nu > 0.0))
    throw numerical_error(
        "delta_inference: nu_hat <= 0 violates the GMM restriction");
  DeltaInference out;
  out.alpha = alpha;
  out.delta_hat = -std::log(nu);
  out.se = std::sqrt(std::max(sw.S(0, 0), 0.0) / (nu * nu) /
                     static_cast<double>(frame.n()));
  out.z = normal_quantile(1.0 - alpha);
  out.lower_bound = out.delta_hat - out.z * out.se;
  return out;
}

struct ZetaInference {
  std::vector<double> zeta;
  std::vector<double> se;
  Eigen::MatrixXd sandwich;  // (2+s) x (2+s)
};

// Functionals zeta_j = E_F*[u_j(X)] under the least favorable distribution,
// estimated jointly with theta by block elimination:
//   zeta_j = (mean[u_j e] + mean[phi_u_j]) / nu,
//   phi_u_j = u_j e_tilde (-lambda_tilde) resid.
// The augmented sandwich stacks psi with g_u + phi_u.
inline ZetaInference zeta_moments(const MomentFrame& frame,
                                  const std::vector<std::vector<double>>& u,
                                  bool include_correction = true) {
  const std::size_t n = frame.n();
  const std::size_t s = u.size();
  if (s == 0) throw data_error("zeta_moments: no u columns");
  for (const auto& col : u)
    if (col.size() != n)
      throw data_error("zeta_moments: u column length mismatch");
  if (include_correction && frame.resid.size() != n)
    throw data_error(
        "zeta_moments: frame carries no influence residuals; build it via "
        "solve_theta_debiased or pass include_correction = false");

  // reject collinear u columns: the joint system is then redundant
  {
    Eigen::MatrixXd gram(s + 1, s + 1);
    std::vector<const std::vector<double>*> cols(s + 1);
    const std::vector<double> ones(n, 1.0);
    cols[0] = &ones;
    for (std::size_t j = 0; j < s; ++j) cols[j + 1] = &u[j];
    for (std::size_t a = 0; a <= s; ++a)
      for (std::size_t b = a; b <= s; ++b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          acc += (*cols[a])[i] * (*cols[b])[i];
        gram(a, b) = acc / static_cast<double>(n);
        gram(b, a) = gram(a, b);
      }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    const double lead = eig.eigenvalues().maxCoeff();
    if (!(eig.eigenvalues().minCoeff() > 1e-10 * std::max(lead, 1.0)))
      throw data_error(
          "zeta_moments: u columns are collinear (with the constant); drop "
          "redundant functionals");
  }

  const double nu = frame.theta.nu;
  const double lam_t = frame.theta_tilde.lambda;
  ZetaInference out;
  out.zeta.resize(s);
  std::vector<std::vector<double>> phi_u(s, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < s; ++j) {
    double m_ue = 0.0, m_phi = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m_ue += u[j][i] * frame.e_hat[i];
      if (include_correction) {
        phi_u[j][i] = u[j][i] * frame.e_tilde[i] * (-lam_t) * frame.resid[i];
        m_phi += phi_u[j][i];
      }
    }
    out.zeta[j] = (m_ue + m_phi) / (static_cast<double>(n) * nu);
  }

  // augmented Jacobian: rows are (g1, g2, g_u_j), columns (nu, lambda, zeta)
  const std::size_t dim = 2 + s;
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(dim, dim);
  double de = 0.0, d2e = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    de += frame.delta[i] * frame.e_hat[i];
    d2e += frame.delta[i] * frame.delta[i] * frame.e_hat[i];
  }
  de /= static_cast<double>(n);
  d2e /= static_cast<double>(n);
  G(0, 0) = -1.0;
  G(0, 1) = -de;
  G(1, 1) = -d2e;
  for (std::size_t j = 0; j < s; ++j) {
    double ude = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      ude += u[j][i] * frame.delta[i] * frame.e_hat[i];
    ude /= static_cast<double>(n);
    G(2 + j, 0) = -out.zeta[j];
    G(2 + j, 1) = -ude;
    G(2 + j, 2 + j) = -nu;
  }

  Eigen::MatrixXd Omega = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd psi(dim);
  for (std::size_t i = 0; i < n; ++i) {
    psi[0] = frame.psi1(i);
    psi[1] = frame.psi2(i);
    for (std::size_t j = 0; j < s; ++j) {
      const double gu = u[j][i] * frame.e_hat[i] - nu * out.zeta[j];
      psi[2 + j] = gu + (include_correction ? phi_u[j][i] : 0.0);
    }
    Omega.selfadjointView<Eigen::Lower>().rankUpdate(psi, 1.0);
  }
  Omega = Omega.selfadjointView<Eigen::Lower>();
  Omega /= static_cast<double>(n);

  const Eigen::MatrixXd gi = G.partialPivLu().inverse();
  out.sandwich = gi * Omega * gi.transpose();
  out.sandwich = 0.5 * (out.sandwich + out.sandwich.transpose().eval());
  out.se.resize(s);
  for (std::size_t j = 0; j < s; ++j)
    out.se[j] = std::sqrt(std::max(out.sandwich(2 + j, 2 + j), 0.0) /
                          static_cast<double>(n));
  return out;
}

// ---- orthogonality diagnostic ----------------------------------------------

struct NeymanTruth {
  std::vector<double> gamma1, gamma0, pi;  // analytic truth per observation
  std::vector<double> h1, h0;              // perturbation direction
};

struct NeymanRow {
  double r = 0.0;
  double dpsi = 0.0;  // || mean psi(gamma + r h) - mean psi(gamma) ||
  double dg = 0.0;    // same for the uncorrected moment g
};

struct NeymanResult {
  std::vector<NeymanRow> rows;
  // per-observation directional derivatives at r = 0 (central differences at
  // the smallest positive grid r): mean and sd of each moment component
  Eigen::Vector2d dpsi_mean = Eigen::Vector2d::Zero();
  Eigen::Vector2d dpsi_sd = Eigen::Vector2d::Zero();
  Eigen::Vector2d dg_mean = Eigen::Vector2d::Zero();
  Eigen::Vector2d dg_sd = Eigen::Vector2d::Zero();
};

// Walks the nuisance path gamma_r = gamma + r h at fixed theta0 and reports
// how the sample moments move. The corrected moment's drift must be O(r^2)
// while the raw moment's is O(r).
inline NeymanResult neyman_check(const NeymanTruth& truth,
                                 const std::vector<double>& y,
                                 const std::vector<int>& d, const Theta& theta0,
                                 double tau_tilde,
                                 const std::vector<double>& r_grid) {
  const std::size_t n = y.size();
  if (truth.gamma1.size() != n || truth.gamma0.size() != n ||
      truth.pi.size() != n || truth.h1.size() != n || truth.h0.size() != n ||
      d.size() != n)
    throw data_error("neyman_check: input lengths differ");
  if (r_grid.empty()) throw data_error("neyman_check: empty r grid");

  // per-observation moments at nuisance offset r
  auto eval_obs = [&](std::size_t i, double r, double* g_out,
                      double* psi_out) {
    const double g1v = truth.gamma1[i] + r * truth.h1[i];
    const double g0v = truth.gamma0[i] + r * truth.h0[i];
    const double dd = (g1v - g0v) - tau_tilde;
    const double e = std::exp(-theta0.lambda * dd);
    const double resid = d[i] == 1
                             ? (y[i] - g1v) / truth.pi[i]
                             : -(y[i] - g0v) / (1.0 - truth.pi[i]);
    const double g_1 = e - theta0.nu;
    const double g_2 = e * dd;
    const double p_1 = g_1 + e * (-theta0.lambda) * resid;
    const double p_2 = g_2 + e * (1.0 - theta0.lambda * dd) * resid;
    g_out[0] = g_1;
    g_out[1] = g_2;
    psi_out[0] = p_1;
    psi_out[1] = p_2;
  };

  auto mean_at = [&](double r, Eigen::Vector2d* g_mean,
                     Eigen::Vector2d* psi_mean) {
    double g[2], p[2];
    g_mean->setZero();
    psi_mean->setZero();
    for (std::size_t i = 0; i < n; ++i) {
      eval_obs(i, r, g, p);
      (*g_mean)[0] += g[0];
      (*g_mean)[1] += g[1];
      (*psi_mean)[0] += p[0];
      (*psi_mean)[1] += p[1];
    }
    *g_mean /= static_cast<double>(n);
    *psi_mean /= static_cast<double>(n);
  };

  Eigen::Vector2d g0_mean, psi0_mean;
  mean_at(0.0, &g0_mean, &psi0_mean);

  NeymanResult out;
  out.rows.reserve(r_grid.size());
  double r_small = 0.0;
  for (double r : r_grid) {
    Eigen::Vector2d gm, pm;
    mean_at(r, &gm, &pm);
    NeymanRow row;
    row.r = r;
    row.dg = (gm - g0_mean).norm();
    row.dpsi = (pm - psi0_mean).norm();
    out.rows.push_back(row);
    if (r > 0.0 && (r_small == 0.0 || r < r_small)) r_small = r;
  }

  if (r_small > 0.0) {
    const double h = r_small;
    Eigen::Vector2d sum_g = Eigen::Vector2d::Zero(),
                    sum2_g = Eigen::Vector2d::Zero(),
                    sum_p = Eigen::Vector2d::Zero(),
                    sum2_p = Eigen::Vector2d::Zero();
    double gp[2], pp[2], gm[2], pm[2];
    for (std::size_t i = 0; i < n; ++i) {
      eval_obs(i, h, gp, pp);
      eval_obs(i, -h, gm, pm);
      for (int c = 0; c < 2; ++c) {
        const double dg = (gp[c] - gm[c]) / (2.0 * h);
        const double dp = (pp[c] - pm[c]) / (2.0 * h);
        sum_g[c] += dg;
        sum2_g[c] += dg * dg;
        sum_p[c] += dp;
        sum2_p[c] += dp * dp;
      }
    }
    const double nn = static_cast<double>(n);
    for (int c = 0; c < 2; ++c) {
      out.dg_mean[c] = sum_g[c] / nn;
      out.dpsi_mean[c] = sum_p[c] / nn;
      out.dg_sd[c] =
          std::sqrt(std::max(0.0, sum2_g[c] / nn - out.dg_mean[c] * out.dg_mean[c]));
      out.dpsi_sd[c] = std::sqrt(
          std::max(0.0, sum2_p[c] / nn - out.dpsi_mean[c] * out.dpsi_mean[c]));
    }
  }
  return out;
}

}  // namespace klshift
