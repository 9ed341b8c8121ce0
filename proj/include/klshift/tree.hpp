#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "klshift/rng.hpp"

// Regression trees with a Newton (gradient/hessian) split criterion.
// With unit hessians this is the classic variance-reduction CART split:
// gain = G_L^2/H_L + G_R^2/H_R - G^2/H, leaf value = G/H.
//
// Determinism: candidate features are scanned in ascending index order and
// thresholds in ascending value order; a split replaces the incumbent only
// on a strictly larger gain, so ties resolve to the lowest feature index and
// the lowest threshold.

namespace klshift {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  double value = 0.0;
  int left = -1;
  int right = -1;
};

struct Tree {
  std::vector<TreeNode> nodes;

  template <typename FeatFn>
  double predict(FeatFn&& feat) const {
    int at = 0;
    while (nodes[at].feature >= 0)
      at = feat(nodes[at].feature) <= nodes[at].threshold ? nodes[at].left
                                                          : nodes[at].right;
    return nodes[at].value;
  }
};

struct TreeParams {
  int max_depth = 25;
  int min_leaf = 5;
  int mtry = 0;  // 0 = use all features
};

namespace detail {

struct SortedPoint {
  double x;
  double g;
  double h;
};

struct NodeTask {
  std::size_t begin;
  std::size_t end;
  int depth;
  int node_id;
};

}  // namespace detail

// Fits a tree to gradient/hessian targets over the given rows (repeats
// allowed, e.g. bootstrap draws). hess may be empty for unit hessians.
inline Tree fit_tree(const std::vector<std::vector<double>>& x_cols,
                     const std::vector<double>& grad,
                     const std::vector<double>& hess,
                     std::vector<std::size_t> rows, const TreeParams& params,
                     RngStream& rng) {
  const int k = static_cast<int>(x_cols.size());
  const int mtry =
      params.mtry <= 0 ? k : std::min(params.mtry, k);
  const int max_depth = params.max_depth <= 0
                            ? 25
                            : std::min(params.max_depth, 25);
  const std::size_t min_leaf =
      static_cast<std::size_t>(std::max(params.min_leaf, 1));

  Tree tree;
  tree.nodes.reserve(64);
  tree.nodes.push_back({});

  std::vector<detail::NodeTask> stack;
  stack.push_back({0, rows.size(), 0, 0});

  std::vector<int> feature_pool(k);
  std::vector<detail::SortedPoint> pts;
  std::vector<std::size_t> scratch;

  while (!stack.empty()) {
    const detail::NodeTask task = stack.back();
    stack.pop_back();
    const std::size_t m = task.end - task.begin;

    double g_sum = 0.0, h_sum = 0.0;
    for (std::size_t i = task.begin; i < task.end; ++i) {
      g_sum += grad[rows[i]];
      h_sum += hess.empty() ? 1.0 : hess[rows[i]];
    }
    TreeNode& node = tree.nodes[task.node_id];
    node.value = h_sum > 0.0 ? g_sum / h_sum : 0.0;

    if (task.depth >= max_depth || m < 2 * min_leaf) continue;

    // candidate features, ascending for deterministic tie-breaks
    for (int f = 0; f < k; ++f) feature_pool[f] = f;
    if (mtry < k) {
      for (int j = 0; j < mtry; ++j) {
        const int pick =
            j + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k - j)));
        std::swap(feature_pool[j], feature_pool[pick]);
      }
      std::sort(feature_pool.begin(), feature_pool.begin() + mtry);
    }

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_gain = 1e-12;  // require a strictly positive improvement
    const double parent_score = h_sum > 0.0 ? g_sum * g_sum / h_sum : 0.0;

    for (int fi = 0; fi < mtry; ++fi) {
      const int f = feature_pool[fi];
      const std::vector<double>& col = x_cols[f];
      pts.resize(m);
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t r = rows[task.begin + i];
        pts[i] = {col[r], grad[r], hess.empty() ? 1.0 : hess[r]};
      }
      std::sort(pts.begin(), pts.end(),
                [](const detail::SortedPoint& a, const detail::SortedPoint& b) {
                  return a.x < b.x;
                });
      if (pts.front().x == pts.back().x) continue;

      double gl = 0.0, hl = 0.0;
      for (std::size_t i = 0; i + 1 < m; ++i) {
        gl += pts[i].g;
        hl += pts[i].h;
        if (pts[i].x == pts[i + 1].x) continue;
        const std::size_t left_n = i + 1;
        if (left_n < min_leaf || m - left_n < min_leaf) continue;
        const double gr = g_sum - gl, hr = h_sum - hl;
        if (hl <= 0.0 || hr <= 0.0) continue;
        const double gain = gl * gl / hl + gr * gr / hr - parent_score;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = pts[i].x + 0.5 * (pts[i + 1].x - pts[i].x);
        }
      }
    }

    if (best_feature < 0) continue;

    scratch.clear();
    scratch.reserve(m);
    std::size_t left_count = 0;
    for (std::size_t i = task.begin; i < task.end; ++i)
      if (x_cols[best_feature][rows[i]] <= best_threshold) {
        scratch.push_back(rows[i]);
        ++left_count;
      }
    for (std::size_t i = task.begin; i < task.end; ++i)
      if (!(x_cols[best_feature][rows[i]] <= best_threshold))
        scratch.push_back(rows[i]);
    std::copy(scratch.begin(), scratch.end(), rows.begin() + task.begin);

    const int left_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    tree.nodes[task.node_id].feature = best_feature;
    tree.nodes[task.node_id].threshold = best_threshold;
    tree.nodes[task.node_id].left = left_id;
    tree.nodes[task.node_id].right = left_id + 1;

    stack.push_back({task.begin + left_count, task.end, task.depth + 1,
                     left_id + 1});
    stack.push_back({task.begin, task.begin + left_count, task.depth + 1,
                     left_id});
  }
  return tree;
}

}  // namespace klshift
