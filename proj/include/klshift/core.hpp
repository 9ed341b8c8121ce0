#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

// Core types and distribution utilities: datasets, claims, discrete KL
// divergence and its weighted-empirical analogue.

namespace klshift {

// ---- errors ----------------------------------------------------------------

// invalid shapes, masses, or column data
struct data_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// numerical failures (non-convergence, degeneracy, lost positive-definiteness)
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// the requested target ATE cannot be produced by any reweighting of the data
struct infeasible_error : numerical_error {
  using numerical_error::numerical_error;
};

struct convergence_error : numerical_error {
  using numerical_error::numerical_error;
};

struct pd_error : numerical_error {
  using numerical_error::numerical_error;
};

// ---- data ------------------------------------------------------------------

struct Sample {
  double y = 0.0;
  int d = 0;
  std::vector<double> x;
};

// Columnar dataset: x_cols[j][i] is covariate j of observation i.
struct Dataset {
  std::vector<double> y;
  std::vector<int> d;
  std::vector<std::vector<double>> x_cols;
  std::vector<std::string> x_names;

  std::size_t n() const { return y.size(); }
  std::size_t k() const { return x_cols.size(); }

  Sample row(std::size_t i) const {
    Sample s;
    s.y = y[i];
    s.d = d[i];
    s.x.reserve(k());
    for (const auto& col : x_cols) s.x.push_back(col[i]);
    return s;
  }

  void validate() const {
    if (y.empty()) throw data_error("dataset: empty");
    if (d.size() != n())
      throw data_error("dataset: treatment column length " +
                       std::to_string(d.size()) + " != n " +
                       std::to_string(n()));
    for (std::size_t j = 0; j < x_cols.size(); ++j)
      if (x_cols[j].size() != n())
        throw data_error("dataset: covariate column " + std::to_string(j) +
                         " length " + std::to_string(x_cols[j].size()) +
                         " != n " + std::to_string(n()));
    for (int di : d)
      if (di != 0 && di != 1)
        throw data_error("dataset: treatment indicator must be 0 or 1, got " +
                         std::to_string(di));
    for (double yi : y)
      if (!std::isfinite(yi))
        throw data_error("dataset: non-finite outcome value");
    for (std::size_t j = 0; j < x_cols.size(); ++j)
      for (double xv : x_cols[j])
        if (!std::isfinite(xv))
          throw data_error("dataset: non-finite covariate value in column " +
                           std::to_string(j));
  }
};

enum class ClaimDirection { GEQ, LEQ };

// "ATE >= tau_tilde" (GEQ) or "ATE <= tau_tilde" (LEQ)
struct Claim {
  ClaimDirection direction = ClaimDirection::GEQ;
  double tau_tilde = 0.0;
};

inline bool claim_holds(double ate, const Claim& c) {
  return c.direction == ClaimDirection::GEQ ? ate >= c.tau_tilde
                                            : ate <= c.tau_tilde;
}

struct DiscreteDistribution {
  std::vector<double> mass;
};

// ---- divergences -----------------------------------------------------------

inline constexpr double kMassTol = 1e-8;

namespace detail {

inline void check_distribution(const std::vector<double>& p,
                               const char* name) {
  double sum = 0.0;
  for (double m : p) {
    if (!(m >= 0.0))
      throw data_error(std::string(name) + ": negative or NaN mass");
    sum += m;
  }
  if (std::fabs(sum - 1.0) > kMassTol)
    throw data_error(std::string(name) + ": masses sum to " +
                     std::to_string(sum) + ", not 1");
}

}  // namespace detail

// D_KL(p || q) = sum_i p_i log(p_i / q_i), with 0 log 0 := 0.
// Requires absolute continuity: p_i > 0 with q_i = 0 is an error.
inline double kl_discrete(const std::vector<double>& p,
                          const std::vector<double>& q) {
  if (p.size() != q.size())
    throw data_error("kl_discrete: supports differ in size (" +
                     std::to_string(p.size()) + " vs " +
                     std::to_string(q.size()) + ")");
  detail::check_distribution(p, "kl_discrete: p");
  detail::check_distribution(q, "kl_discrete: q");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0)
      throw data_error("kl_discrete: absolute continuity violated at cell " +
                       std::to_string(i) + " (p > 0, q = 0)");
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

// KL of the reweighted empirical distribution against the empirical one:
// (1/n) sum_i w_i log w_i for mean-one weights w.
inline double kl_weighted_empirical(const std::vector<double>& w) {
  if (w.empty()) throw data_error("kl_weighted_empirical: empty weights");
  double sum = 0.0;
  for (double wi : w) {
    if (!(wi >= 0.0))
      throw data_error("kl_weighted_empirical: negative or NaN weight");
    sum += wi;
  }
  const double n = static_cast<double>(w.size());
  if (std::fabs(sum / n - 1.0) > kMassTol)
    throw data_error("kl_weighted_empirical: weights have mean " +
                     std::to_string(sum / n) + ", not 1");
  double kl = 0.0;
  for (double wi : w)
    if (wi > 0.0) kl += wi * std::log(wi);
  return kl / n;
}

// ATE of the reweighted sample, (1/n) sum_i w_i tau_i. Empty weights mean the
// unweighted sample average.
inline double ate_under_weights(const std::vector<double>& tau,
                                const std::vector<double>& weights = {}) {
  if (tau.empty()) throw data_error("ate_under_weights: empty tau");
  if (!weights.empty() && weights.size() != tau.size())
    throw data_error("ate_under_weights: weights length " +
                     std::to_string(weights.size()) + " != tau length " +
                     std::to_string(tau.size()));
  double acc = 0.0;
  if (weights.empty()) {
    for (double t : tau) acc += t;
  } else {
    for (std::size_t i = 0; i < tau.size(); ++i) acc += weights[i] * tau[i];
  }
  return acc / static_cast<double>(tau.size());
}

}  // namespace klshift
