#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "klshift/core.hpp"
#include "klshift/rng.hpp"
#include "klshift/tree.hpp"

// First-stage learners and cross-fitting. gamma1 is fit on treated units of
// the complement folds, gamma0 on control units, and the propensity on all
// complement units; every observation receives out-of-fold predictions only.

namespace klshift {

struct LearnerSpec {
  enum class Kind { LINEAR, FOREST, BOOSTING };
  Kind kind = Kind::FOREST;
  // forest
  int trees = 100;
  int max_depth = 0;  // 0 = unlimited (capped at 25)
  int min_leaf = 5;
  int mtry = 0;  // 0 = ceil(sqrt(k))
  // boosting
  int rounds = 200;
  int boost_depth = 3;
  double learning_rate = 0.1;
  double subsample = 1.0;
  // linear
  double ridge = 1e-8;
  // propensity clipping
  double trim_eps = 0.01;
  std::uint64_t seed = 0;
};

struct FoldPlan {
  int K = 0;
  std::vector<int> fold_of;
};

// Stratified fold assignment: each treatment arm is shuffled and dealt
// round-robin, so arm proportions are balanced across folds.
inline FoldPlan make_folds(const Dataset& data, int K, std::uint64_t seed) {
  data.validate();
  if (K < 2) throw data_error("make_folds: K must be at least 2");
  std::vector<std::size_t> arm[2];
  for (std::size_t i = 0; i < data.n(); ++i)
    arm[data.d[i]].push_back(i);
  for (int a = 0; a < 2; ++a)
    if (arm[a].size() < static_cast<std::size_t>(K))
      throw data_error(
          "make_folds: arm d=" + std::to_string(a) + " has only " +
          std::to_string(arm[a].size()) + " units for K = " +
          std::to_string(K) + "; some fold would have an empty arm, use a "
          "smaller K");
  FoldPlan plan;
  plan.K = K;
  plan.fold_of.assign(data.n(), -1);
  for (int a = 0; a < 2; ++a) {
    RngStream rng = derive_stream(seed, {kTagFolds, static_cast<std::uint64_t>(a)});
    rng.shuffle(arm[a]);
    for (std::size_t i = 0; i < arm[a].size(); ++i)
      plan.fold_of[arm[a][i]] = static_cast<int>(i % K);
  }
  return plan;
}

// ---- models ----------------------------------------------------------------

struct LinearModel {
  Eigen::VectorXd coef;
  double intercept = 0.0;
  bool logistic = false;

  template <typename FeatFn>
  double predict(FeatFn&& feat) const {
    double z = intercept;
    for (Eigen::Index j = 0; j < coef.size(); ++j)
      z += coef[j] * feat(static_cast<int>(j));
    return logistic ? 1.0 / (1.0 + std::exp(-z)) : z;
  }
};

struct ForestModel {
  std::vector<Tree> trees;

  template <typename FeatFn>
  double predict(FeatFn&& feat) const {
    double acc = 0.0;
    for (const Tree& t : trees) acc += t.predict(feat);
    return trees.empty() ? 0.0 : acc / static_cast<double>(trees.size());
  }
};

struct BoostModel {
  double f0 = 0.0;
  double learning_rate = 0.1;
  std::vector<Tree> trees;
  bool logistic = false;

  template <typename FeatFn>
  double predict(FeatFn&& feat) const {
    double z = f0;
    for (const Tree& t : trees) z += learning_rate * t.predict(feat);
    return logistic ? 1.0 / (1.0 + std::exp(-z)) : z;
  }
};

using Model = std::variant<LinearModel, ForestModel, BoostModel>;

template <typename FeatFn>
double predict_model(const Model& m, FeatFn&& feat) {
  return std::visit([&](const auto& mm) { return mm.predict(feat); }, m);
}

// ---- fitting ---------------------------------------------------------------

namespace detail {

inline LinearModel fit_linear(const std::vector<std::vector<double>>& cols,
                              const std::vector<std::size_t>& rows,
                              const std::vector<double>& target, double ridge,
                              bool logistic) {
  const std::size_t m = rows.size();
  const Eigen::Index k = static_cast<Eigen::Index>(cols.size());
  Eigen::MatrixXd X(m, k + 1);
  Eigen::VectorXd y(m);
  for (std::size_t i = 0; i < m; ++i) {
    X(i, 0) = 1.0;
    for (Eigen::Index j = 0; j < k; ++j) X(i, j + 1) = cols[j][rows[i]];
    y[i] = target[rows[i]];
  }
  Eigen::VectorXd b = Eigen::VectorXd::Zero(k + 1);
  const double reg = logistic ? std::max(ridge, 1e-6) : ridge;
  Eigen::MatrixXd penalty = Eigen::MatrixXd::Identity(k + 1, k + 1) * reg;
  penalty(0, 0) = 0.0;  // intercept unpenalized

  if (!logistic) {
    const Eigen::MatrixXd xtx = X.transpose() * X + penalty;
    b = xtx.ldlt().solve(X.transpose() * y);
  } else {
    for (int it = 0; it < 40; ++it) {
      const Eigen::VectorXd z = X * b;
      Eigen::VectorXd p(m), w(m);
      for (std::size_t i = 0; i < m; ++i) {
        p[i] = 1.0 / (1.0 + std::exp(-z[i]));
        w[i] = std::max(p[i] * (1.0 - p[i]), 1e-9);
      }
      const Eigen::MatrixXd xtwx =
          X.transpose() * w.asDiagonal() * X + penalty;
      const Eigen::VectorXd grad = X.transpose() * (y - p) - penalty * b;
      const Eigen::VectorXd step = xtwx.ldlt().solve(grad);
      b += step;
      if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
    }
  }
  LinearModel model;
  model.intercept = b[0];
  model.coef = b.tail(k);
  model.logistic = logistic;
  return model;
}

inline ForestModel fit_forest(const std::vector<std::vector<double>>& cols,
                              const std::vector<std::size_t>& rows,
                              const std::vector<double>& target,
                              const LearnerSpec& spec, std::uint64_t seed,
                              std::uint64_t stream_id) {
  TreeParams params;
  params.max_depth = spec.max_depth;
  params.min_leaf = spec.min_leaf;
  params.mtry = spec.mtry > 0
                    ? spec.mtry
                    : static_cast<int>(
                          std::ceil(std::sqrt(static_cast<double>(cols.size()))));
  ForestModel model;
  model.trees.reserve(spec.trees);
  std::vector<std::size_t> boot(rows.size());
  for (int t = 0; t < spec.trees; ++t) {
    RngStream rng = derive_stream(
        seed, {kTagTree, stream_id, static_cast<std::uint64_t>(t)});
    for (std::size_t i = 0; i < rows.size(); ++i)
      boot[i] = rows[rng.uniform_int(rows.size())];
    model.trees.push_back(fit_tree(cols, target, {}, boot, params, rng));
  }
  return model;
}

inline BoostModel fit_boosting(const std::vector<std::vector<double>>& cols,
                               const std::vector<std::size_t>& rows,
                               const std::vector<double>& target,
                               const LearnerSpec& spec, bool logistic,
                               std::uint64_t seed, std::uint64_t stream_id) {
  const std::size_t m = rows.size();
  BoostModel model;
  model.learning_rate = spec.learning_rate;
  model.logistic = logistic;

  if (logistic) {
    double p_bar = 0.0;
    for (std::size_t r : rows) p_bar += target[r];
    p_bar = std::clamp(p_bar / static_cast<double>(m), 1e-6, 1.0 - 1e-6);
    model.f0 = std::log(p_bar / (1.0 - p_bar));
  } else {
    double mean = 0.0;
    for (std::size_t r : rows) mean += target[r];
    model.f0 = mean / static_cast<double>(m);
  }

  TreeParams params;
  params.max_depth = spec.boost_depth;
  params.min_leaf = spec.min_leaf;
  params.mtry = 0;

  std::vector<double> f(m, model.f0);
  // gradient/hessian live on full-length vectors indexed by dataset row
  std::vector<double> grad(cols.empty() ? 0 : cols[0].size(), 0.0);
  std::vector<double> hess;
  if (logistic) hess.assign(grad.size(), 0.0);

  std::vector<std::size_t> fit_rows;
  model.trees.reserve(spec.rounds);
  for (int round = 0; round < spec.rounds; ++round) {
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t r = rows[i];
      if (logistic) {
        const double p = 1.0 / (1.0 + std::exp(-f[i]));
        grad[r] = target[r] - p;
        hess[r] = std::max(p * (1.0 - p), 1e-9);
      } else {
        grad[r] = target[r] - f[i];
      }
    }
    fit_rows.assign(rows.begin(), rows.end());
    if (spec.subsample < 1.0) {
      RngStream rng = derive_stream(
          seed, {kTagSubsample, stream_id, static_cast<std::uint64_t>(round)});
      rng.shuffle(fit_rows);
      const std::size_t keep = std::max<std::size_t>(
          1, static_cast<std::size_t>(spec.subsample * static_cast<double>(m)));
      fit_rows.resize(keep);
    }
    RngStream rng = derive_stream(
        seed, {kTagTree, stream_id, static_cast<std::uint64_t>(round)});
    Tree tree = fit_tree(cols, grad, hess, fit_rows, params, rng);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t r = rows[i];
      f[i] += spec.learning_rate *
              tree.predict([&](int ft) { return cols[ft][r]; });
    }
    model.trees.push_back(std::move(tree));
  }
  return model;
}

inline Model fit_regression(const std::vector<std::vector<double>>& cols,
                            const std::vector<std::size_t>& rows,
                            const std::vector<double>& target,
                            const LearnerSpec& spec, std::uint64_t stream_id) {
  switch (spec.kind) {
    case LearnerSpec::Kind::LINEAR:
      return fit_linear(cols, rows, target, spec.ridge, false);
    case LearnerSpec::Kind::FOREST:
      return fit_forest(cols, rows, target, spec, spec.seed, stream_id);
    case LearnerSpec::Kind::BOOSTING:
      return fit_boosting(cols, rows, target, spec, false, spec.seed,
                          stream_id);
  }
  throw data_error("fit_regression: unknown learner kind");
}

// probability-calibrated propensity learner
inline Model fit_propensity(const std::vector<std::vector<double>>& cols,
                            const std::vector<std::size_t>& rows,
                            const std::vector<double>& target,
                            const LearnerSpec& spec, std::uint64_t stream_id) {
  switch (spec.kind) {
    case LearnerSpec::Kind::LINEAR:
      return fit_linear(cols, rows, target, spec.ridge, true);
    case LearnerSpec::Kind::FOREST:
      // regression forest on the indicator; leaf means are class fractions
      return fit_forest(cols, rows, target, spec, spec.seed, stream_id);
    case LearnerSpec::Kind::BOOSTING:
      return fit_boosting(cols, rows, target, spec, true, spec.seed,
                          stream_id);
  }
  throw data_error("fit_propensity: unknown learner kind");
}

}  // namespace detail

// ---- cross-fitting ---------------------------------------------------------

struct CateEstimate {
  std::vector<double> tau_hat;
  std::vector<double> gamma1_hat;
  std::vector<double> gamma0_hat;
  std::vector<double> pi_hat;  // clipped to [trim_eps, 1 - trim_eps]
  std::vector<int> fold_of;
  int K = 0;
  double trimmed_fraction = 0.0;

  struct FoldModels {
    Model gamma1;
    Model gamma0;
    Model pi;
  };
  std::vector<FoldModels> models;
};

inline CateEstimate fit_predict_crossfit(const Dataset& data,
                                         const LearnerSpec& spec,
                                         const FoldPlan& plan) {
  data.validate();
  const std::size_t n = data.n();
  if (plan.fold_of.size() != n)
    throw data_error("fit_predict_crossfit: fold plan covers " +
                     std::to_string(plan.fold_of.size()) +
                     " rows for n = " + std::to_string(n));
  if (plan.K < 2) throw data_error("fit_predict_crossfit: K must be >= 2");
  if (!(spec.trim_eps >= 0.0 && spec.trim_eps < 0.5))
    throw data_error("fit_predict_crossfit: trim_eps must be in [0, 0.5)");

  std::vector<double> y_real(data.y);
  std::vector<double> d_real(n);
  for (std::size_t i = 0; i < n; ++i)
    d_real[i] = static_cast<double>(data.d[i]);

  CateEstimate est;
  est.K = plan.K;
  est.fold_of = plan.fold_of;
  est.tau_hat.assign(n, 0.0);
  est.gamma1_hat.assign(n, 0.0);
  est.gamma0_hat.assign(n, 0.0);
  est.pi_hat.assign(n, 0.0);
  est.models.resize(plan.K);

  const std::size_t need =
      spec.kind == LearnerSpec::Kind::LINEAR
          ? 2
          : static_cast<std::size_t>(std::max(spec.min_leaf, 2));

  std::size_t clipped = 0;
  for (int fold = 0; fold < plan.K; ++fold) {
    std::vector<std::size_t> comp1, comp0, comp_all, test;
    for (std::size_t i = 0; i < n; ++i) {
      if (plan.fold_of[i] == fold) {
        test.push_back(i);
      } else {
        comp_all.push_back(i);
        (data.d[i] == 1 ? comp1 : comp0).push_back(i);
      }
    }
    if (comp1.size() < need || comp0.size() < need)
      throw data_error(
          "fit_predict_crossfit: complement of fold " + std::to_string(fold) +
          " has " + std::to_string(comp1.size()) + " treated / " +
          std::to_string(comp0.size()) + " control units, fewer than " +
          std::to_string(need) + "; use a smaller K or a simpler learner");

    const std::uint64_t base = static_cast<std::uint64_t>(fold) * 3;
    CateEstimate::FoldModels fm;
    fm.gamma1 = detail::fit_regression(data.x_cols, comp1, y_real, spec, base);
    fm.gamma0 =
        detail::fit_regression(data.x_cols, comp0, y_real, spec, base + 1);
    fm.pi =
        detail::fit_propensity(data.x_cols, comp_all, d_real, spec, base + 2);

    for (std::size_t i : test) {
      auto feat = [&](int f) { return data.x_cols[f][i]; };
      const double g1 = predict_model(fm.gamma1, feat);
      const double g0 = predict_model(fm.gamma0, feat);
      double pi = predict_model(fm.pi, feat);
      const double lo = spec.trim_eps, hi = 1.0 - spec.trim_eps;
      if (pi < lo || pi > hi) {
        pi = std::clamp(pi, lo, hi);
        ++clipped;
      }
      est.gamma1_hat[i] = g1;
      est.gamma0_hat[i] = g0;
      est.pi_hat[i] = pi;
      est.tau_hat[i] = g1 - g0;
    }
    est.models[fold] = std::move(fm);
  }
  est.trimmed_fraction = static_cast<double>(clipped) / static_cast<double>(n);
  return est;
}

// CATE prediction at new covariate rows: fold models averaged.
inline std::vector<double> predict_cate(
    const CateEstimate& est, const std::vector<std::vector<double>>& x_rows) {
  if (est.models.empty())
    throw data_error("predict_cate: estimate has no fold models");
  std::vector<double> out;
  out.reserve(x_rows.size());
  for (const auto& row : x_rows) {
    auto feat = [&](int f) { return row[static_cast<std::size_t>(f)]; };
    double acc = 0.0;
    for (const auto& fm : est.models)
      acc += predict_model(fm.gamma1, feat) - predict_model(fm.gamma0, feat);
    out.push_back(acc / static_cast<double>(est.models.size()));
  }
  return out;
}

}  // namespace klshift
