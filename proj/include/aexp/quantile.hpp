#pragma once

// Elite selection and quantile machinery.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numeric>
#include <span>
#include <vector>

#include "aexp/errors.hpp"
#include "aexp/mixture.hpp"

namespace aexp {

// Action-value function for one fixed state: values for a batch of
// actions (d x M, one per column) and the gradients dQ/da of each.
template <class F>
concept ActionValueFn = requires(const F& f, const Mat& actions) {
  { f.values(actions) } -> std::convertible_to<Vec>;
  { f.action_grads(actions) } -> std::convertible_to<Mat>;
};

struct EliteSet {
  Mat actions;                     // d x h, descending by value
  std::vector<int> indices;        // positions in the input batch
  Vec values;                      // h, descending
  int h = 0;
  double threshold = 0.0;          // lowest selected value
};

// Number of elites ceil(rho * N), never zero. The small slack keeps
// products like 0.2 * 30 = 6.000000000000001 from rounding up to 7.
inline int elite_count(double rho, int n) {
  const int h = static_cast<int>(std::ceil(rho * n - 1e-9));
  return std::clamp(h, 1, n);
}

/// Keeps the ceil(rho*N) highest-valued actions. Ties preserve input order.
inline EliteSet empirical_top_quantile(const Mat& actions, const Vec& values, double rho) {
  const int n = static_cast<int>(values.size());
  require(n >= 1, "empirical_top_quantile: empty input");
  require(actions.cols() == n, "empirical_top_quantile: actions/values size mismatch");
  require(rho > 0.0 && rho <= 1.0, "empirical_top_quantile: rho must be in (0,1]");

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return values(a) > values(b); });

  EliteSet e;
  e.h = elite_count(rho, n);
  e.indices.assign(order.begin(), order.begin() + e.h);
  e.actions.resize(actions.rows(), e.h);
  e.values.resize(e.h);
  for (int i = 0; i < e.h; ++i) {
    e.actions.col(i) = actions.col(e.indices[i]);
    e.values(i) = values(e.indices[i]);
  }
  e.threshold = e.values(e.h - 1);
  return e;
}

// Gradient ascent on Q in action space, clipped to the box after every
// step. Columns whose ascent turns non-finite keep their starting action.
template <ActionValueFn Q>
Mat ascend_actions(const Mat& actions, const Q& q, int n_steps, double lr, const ActionBox& box) {
  require(n_steps >= 0, "ascend_actions: n_steps must be >= 0");
  Mat cur = actions;
  std::vector<bool> failed(static_cast<std::size_t>(actions.cols()), false);
  for (int s = 0; s < n_steps; ++s) {
    const Mat g = q.action_grads(cur);
    for (Eigen::Index c = 0; c < cur.cols(); ++c) {
      if (failed[c]) continue;
      Vec next = cur.col(c) + lr * g.col(c);
      if (!next.allFinite()) {
        failed[c] = true;
        cur.col(c) = actions.col(c);
        continue;
      }
      cur.col(c) = box.clip(next);
    }
  }
  return cur;
}

inline double default_ascent_lr(const ActionBox& box) {
  return 0.01 * (box.high - box.low).maxCoeff();
}

/// Ascends every action n_steps along dQ/da, then keeps the top quantile
/// of the refined actions.
template <ActionValueFn Q>
EliteSet refine_then_select(const Mat& actions, const Q& q, int n_steps, double ascent_lr,
                            double rho, const ActionBox& box) {
  const Mat refined = n_steps > 0 ? ascend_actions(actions, q, n_steps, ascent_lr, box) : actions;
  return empirical_top_quantile(refined, q.values(refined), rho);
}

/// Asymmetric absolute loss whose expected minimizer over l is the
/// (1-rho)-quantile of y.
inline double pinball_loss(double y, double l, double rho) {
  return y >= l ? (y - l) * (1.0 - rho) : (l - y) * rho;
}

inline double mean_pinball(std::span<const double> ys, double l, double rho) {
  double s = 0.0;
  for (double y : ys) s += pinball_loss(y, l, rho);
  return s / static_cast<double>(ys.size());
}

/// Minimizes the sample-mean pinball loss over [min y, max y] by ternary
/// search; the objective is convex so the bracket keeps a minimizer.
inline double true_quantile(std::span<const double> ys, double rho, double tol = 1e-9) {
  require(!ys.empty(), "true_quantile: no samples");
  require(rho > 0.0 && rho <= 1.0, "true_quantile: rho must be in (0,1]");
  auto [mn, mx] = std::minmax_element(ys.begin(), ys.end());
  double lo = *mn, hi = *mx;
  if (hi - lo <= 0.0) return lo;
  while (hi - lo > tol) {
    const double m1 = lo + (hi - lo) / 3.0;
    const double m2 = hi - (hi - lo) / 3.0;
    if (mean_pinball(ys, m1, rho) <= mean_pinball(ys, m2, rho))
      hi = m2;
    else
      lo = m1;
  }
  return 0.5 * (lo + hi);
}

template <class Sampler>
  requires std::invocable<Sampler&>
double true_quantile(Sampler&& draw, double rho, int n_mc, double tol = 1e-9) {
  require(n_mc >= 1, "true_quantile: n_mc must be >= 1");
  std::vector<double> ys(static_cast<std::size_t>(n_mc));
  for (auto& y : ys) y = static_cast<double>(draw());
  return true_quantile(std::span<const double>(ys), rho, tol);
}

}  // namespace aexp
