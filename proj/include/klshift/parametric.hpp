#pragma once

#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "klshift/core.hpp"

// Closed normal classes. When X ~ N(mu, Sigma) and the CATE is quadratic,
// tau(x) = x'Ax + b'x + c, the least favorable distribution is again normal:
//   Sigma* = (Sigma^-1 + 2 lambda A)^-1,
//   mu*    = Sigma* (Sigma^-1 mu - lambda b),
// with lambda chosen so that E_{N(mu*,Sigma*)}[tau] = tau_tilde. The linear
// case (A = 0) collapses to mu* = mu - lambda Sigma b, Sigma* = Sigma,
// lambda = (b'mu - tau_tilde) / (b'Sigma b).

namespace klshift {

struct NormalModel {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
};

struct QuadraticCate {
  Eigen::MatrixXd A;    // empty or zero for a linear CATE
  Eigen::VectorXd beta;
  double c = 0.0;
};

struct NormalLfSolution {
  double lambda = 0.0;
  NormalModel lf;
  double delta_star = 0.0;
};

// KL divergence D(a || b) between normals of dimension k:
// 0.5 [ log det(Sigma_b)/det(Sigma_a) - k
//       + (mu_a - mu_b)' Sigma_b^-1 (mu_a - mu_b) + tr(Sigma_b^-1 Sigma_a) ]
inline double normal_kl(const NormalModel& a, const NormalModel& b) {
  const Eigen::Index k = a.mu.size();
  if (b.mu.size() != k || a.sigma.rows() != k || a.sigma.cols() != k ||
      b.sigma.rows() != k || b.sigma.cols() != k)
    throw data_error("normal_kl: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt_a(a.sigma);
  if (llt_a.info() != Eigen::Success)
    throw pd_error("normal_kl: first covariance is not positive definite");
  Eigen::LLT<Eigen::MatrixXd> llt_b(b.sigma);
  if (llt_b.info() != Eigen::Success)
    throw pd_error("normal_kl: second covariance is not positive definite");

  double logdet_a = 0.0, logdet_b = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    logdet_a += 2.0 * std::log(llt_a.matrixL()(i, i));
    logdet_b += 2.0 * std::log(llt_b.matrixL()(i, i));
  }
  const Eigen::VectorXd dm = a.mu - b.mu;
  const double quad = dm.dot(llt_b.solve(dm));
  const double trace = llt_b.solve(a.sigma).trace();
  return 0.5 * (logdet_b - logdet_a - static_cast<double>(k) + quad + trace);
}

namespace detail {

inline void check_model(const NormalModel& model, const QuadraticCate& cate) {
  const Eigen::Index k = model.mu.size();
  if (model.sigma.rows() != k || model.sigma.cols() != k)
    throw data_error("normal_lf: covariance is " +
                     std::to_string(model.sigma.rows()) + "x" +
                     std::to_string(model.sigma.cols()) + " but mu has " +
                     std::to_string(k) + " entries");
  if (cate.beta.size() != k)
    throw data_error("normal_lf: beta has " + std::to_string(cate.beta.size()) +
                     " entries for dimension " + std::to_string(k));
  if (cate.A.size() != 0 && (cate.A.rows() != k || cate.A.cols() != k))
    throw data_error("normal_lf: A is " + std::to_string(cate.A.rows()) + "x" +
                     std::to_string(cate.A.cols()) + " for dimension " +
                     std::to_string(k));
}

}  // namespace detail

inline NormalLfSolution normal_lf(const NormalModel& model,
                                  const QuadraticCate& cate, double tau_tilde,
                                  double tol = 1e-10) {
  detail::check_model(model, cate);
  const Eigen::Index k = model.mu.size();
  Eigen::LLT<Eigen::MatrixXd> llt(model.sigma);
  if (llt.info() != Eigen::Success)
    throw pd_error("normal_lf: base covariance is not positive definite");

  const bool linear = cate.A.size() == 0 || cate.A.isZero(0.0);

  if (linear) {
    const Eigen::VectorXd sb = model.sigma * cate.beta;
    const double denom = cate.beta.dot(sb);
    const double base_ate = cate.beta.dot(model.mu) + cate.c;
    if (denom <= 0.0) {
      // constant CATE: only its own value is attainable
      if (std::fabs(base_ate - tau_tilde) <= tol) {
        NormalLfSolution sol;
        sol.lambda = 0.0;
        sol.lf = model;
        sol.delta_star = 0.0;
        return sol;
      }
      throw infeasible_error(
          "normal_lf: CATE is constant (" + std::to_string(base_ate) +
          ") under the model; target " + std::to_string(tau_tilde) +
          " is unattainable and the robustness metric is infinite");
    }
    NormalLfSolution sol;
    sol.lambda = (base_ate - tau_tilde) / denom;
    sol.lf.mu = model.mu - sol.lambda * sb;
    sol.lf.sigma = model.sigma;
    sol.delta_star = 0.5 * sol.lambda * sol.lambda * denom;
    return sol;
  }

  // quadratic case: scalar root in lambda, restricted to the set where
  // Sigma^-1 + 2 lambda A stays positive definite
  const Eigen::MatrixXd A = 0.5 * (cate.A + cate.A.transpose());
  const Eigen::MatrixXd sigma_inv =
      llt.solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::VectorXd sigma_inv_mu = llt.solve(model.mu);

  struct Eval {
    bool pd = false;
    double ate = 0.0;
    Eigen::VectorXd mu_star;
    Eigen::MatrixXd sigma_star;
  };
  auto eval_at = [&](double lam) {
    Eval e;
    const Eigen::MatrixXd M = sigma_inv + 2.0 * lam * A;
    Eigen::LLT<Eigen::MatrixXd> lltm(M);
    if (lltm.info() != Eigen::Success) return e;
    e.pd = true;
    e.sigma_star = lltm.solve(Eigen::MatrixXd::Identity(k, k));
    e.mu_star = lltm.solve(sigma_inv_mu - lam * cate.beta);
    e.ate = e.mu_star.dot(A * e.mu_star) + (A * e.sigma_star).trace() +
            cate.beta.dot(e.mu_star) + cate.c;
    return e;
  };

  Eval at0 = eval_at(0.0);
  const double r0 = at0.ate - tau_tilde;
  if (std::fabs(r0) <= tol) {
    NormalLfSolution sol;
    sol.lambda = 0.0;
    sol.lf.mu = at0.mu_star;
    sol.lf.sigma = at0.sigma_star;
    sol.delta_star = 0.0;
    return sol;
  }

  // expand toward the root (ATE decreases in lambda), halving the step
  // whenever the PD boundary is crossed
  const double dir = r0 > 0.0 ? 1.0 : -1.0;
  double lo = 0.0;
  double step = dir;
  double hi = 0.0;
  Eval at_hi;
  bool pd_failure_seen = false;
  double pd_failure_at = 0.0;
  for (int it = 0;; ++it) {
    if (it > 4000)
      throw convergence_error(
          "normal_lf: could not bracket lambda for tau_tilde = " +
          std::to_string(tau_tilde));
    const double cand = lo + step;
    const Eval e = eval_at(cand);
    if (!e.pd) {
      pd_failure_seen = true;
      pd_failure_at = cand;
      step *= 0.5;
      if (std::fabs(step) < 1e-14 * std::max(1.0, std::fabs(lo))) {
        if (pd_failure_seen)
          throw pd_error(
              "normal_lf: Sigma^-1 + 2 lambda A loses positive definiteness "
              "at lambda = " +
              std::to_string(pd_failure_at) + " before ATE reaches " +
              std::to_string(tau_tilde));
      }
      continue;
    }
    if ((e.ate - tau_tilde) * dir <= 0.0) {
      hi = cand;
      at_hi = e;
      break;
    }
    lo = cand;
    step *= 2.0;
    if (std::fabs(lo + step) > std::ldexp(1.0, 60))
      throw convergence_error(
          "normal_lf: bracket cap reached; tau_tilde = " +
          std::to_string(tau_tilde) + " is unattainable within the class");
  }

  // bisection on the bracketed, monotone residual
  double a_end = lo, b_end = hi;
  double lambda_hat = hi;
  Eval best = at_hi;
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (a_end + b_end);
    const Eval e = eval_at(mid);
    if (!e.pd) {
      // interval endpoints are PD; a midpoint failure is fp-degenerate
      throw pd_error(
          "normal_lf: Sigma^-1 + 2 lambda A loses positive definiteness at "
          "lambda = " +
          std::to_string(mid));
    }
    lambda_hat = mid;
    best = e;
    const double r = e.ate - tau_tilde;
    if (std::fabs(r) <= tol ||
        (b_end - a_end) < 1e-15 * std::max(1.0, std::fabs(mid)))
      break;
    if (r * dir > 0.0)
      a_end = mid;
    else
      b_end = mid;
  }

  NormalLfSolution sol;
  sol.lambda = lambda_hat;
  sol.lf.mu = best.mu_star;
  sol.lf.sigma = best.sigma_star;
  NormalModel base{model.mu, model.sigma};
  sol.delta_star = normal_kl(sol.lf, base);
  return sol;
}

}  // namespace klshift
