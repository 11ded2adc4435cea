#pragma once

// Comparison methods: OU exploration noise, NAF, per-step CEM over Q
// (QT-Opt style), an off-policy actor-critic with a Sarsa critic, and an
// exhaustive-grid argmax for one-dimensional actions.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "aexp/actor.hpp"
#include "aexp/errors.hpp"
#include "aexp/expert.hpp"
#include "aexp/mixture.hpp"
#include "aexp/nn.hpp"
#include "aexp/quantile.hpp"
#include "aexp/replay.hpp"
#include "aexp/rng.hpp"

namespace aexp {

// ---- OU noise --------------------------------------------------------------

struct OuNoise {
  Vec x;
  double mu = 0.0;
  double theta = 0.15;
  double sigma = 0.2;

  static OuNoise zeros(int d, double mu = 0.0, double theta = 0.15, double sigma = 0.2) {
    return {Vec::Constant(d, mu), mu, theta, sigma};
  }
  void reset() { x.setConstant(mu); }
};

inline Vec ou_next(OuNoise& ou, Rng& rng) {
  for (Eigen::Index j = 0; j < ou.x.size(); ++j)
    ou.x(j) += ou.theta * (ou.mu - ou.x(j)) + ou.sigma * standard_normal(rng);
  return ou.x;
}

// ---- NAF -------------------------------------------------------------------
//
// Heads per state: [ V | mean pre-activations (d) | L entries (d(d+1)/2) ]
// with L lower triangular, filled row by row, diagonal exp(raw).

constexpr int naf_head_size(int d) { return 1 + d + d * (d + 1) / 2; }

struct NafHeads {
  double value = 0.0;
  Vec mean;
  Mat chol;  // L, so that the precision is L L^T
};

inline NafHeads naf_heads(const Vec& raw, const ActionBox& box) {
  const int d = box.dim();
  require(raw.size() == naf_head_size(d), "naf: head size mismatch");
  NafHeads h;
  h.value = raw(0);
  h.mean = box.center() + box.half_width().cwiseProduct(raw.segment(1, d).array().tanh().matrix());
  h.chol = Mat::Zero(d, d);
  int p = 1 + d;
  for (int r = 0; r < d; ++r)
    for (int c = 0; c <= r; ++c, ++p) h.chol(r, c) = r == c ? std::exp(raw(p)) : raw(p);
  return h;
}

inline double naf_advantage(const NafHeads& h, const Vec& a) {
  const Vec u = h.chol.transpose() * (a - h.mean);
  return -0.5 * u.squaredNorm();
}

inline double naf_q(const NafHeads& h, const Vec& a) { return h.value + naf_advantage(h, a); }

// dQ/d raw heads at action a.
inline Vec naf_q_grad(const Vec& raw, const NafHeads& h, const Vec& a, const ActionBox& box) {
  const int d = box.dim();
  const Vec u = a - h.mean;
  const Mat prec = h.chol * h.chol.transpose();
  Vec g(naf_head_size(d));
  g(0) = 1.0;
  const Vec dq_dmean = prec * u;
  for (int j = 0; j < d; ++j) {
    const double t = std::tanh(raw(1 + j));
    g(1 + j) = dq_dmean(j) * box.half_width()(j) * (1.0 - t * t);
  }
  const Mat dq_dl = -(u * u.transpose()) * h.chol;  // d/dL of -1/2 u^T L L^T u
  int p = 1 + d;
  for (int r = 0; r < d; ++r)
    for (int c = 0; c <= r; ++c, ++p) g(p) = r == c ? dq_dl(r, c) * h.chol(r, c) : dq_dl(r, c);
  return g;
}

struct NafState {
  nn::Mlp net;
  nn::Mlp target;
  nn::Adam opt;
  ActionBox box;
  double gamma = 0.99;
  double tau = 0.01;
  double scale = 1.0;  // exploration scale on the learned covariance
};

inline NafState make_naf(int state_dim, int hidden, const ActionBox& box, double gamma, double tau,
                         double scale, std::uint64_t seed) {
  using nn::Activation;
  NafState n;
  n.net = nn::mlp_init({state_dim, hidden, hidden, naf_head_size(box.dim())},
                       {Activation::relu, Activation::relu, Activation::linear}, mix64(seed ^ 0x6e6166ULL));
  n.target = n.net;
  n.opt = nn::make_adam(n.net);
  n.box = box;
  n.gamma = gamma;
  n.tau = tau;
  n.scale = scale;
  return n;
}

inline NafHeads naf_eval(const nn::Mlp& net, const Vec& state, const ActionBox& box) {
  return naf_heads(nn::predict(net, state), box);
}

// mu + scale * z with z ~ N(0, (L L^T)^{-1}), clipped to the box.
inline Vec naf_explore(const NafHeads& h, double scale, const ActionBox& box, Rng& rng) {
  Vec xi(h.mean.size());
  for (auto& v : xi) v = standard_normal(rng);
  const Vec z = h.chol.transpose().triangularView<Eigen::Upper>().solve(xi);
  return box.clip(h.mean + scale * z);
}

/// TD step toward r + gamma * V_target(s'); returns false and leaves the
/// network untouched on a non-finite loss or gradient.
inline bool naf_update(NafState& n, const Batch& batch, double lr) {
  const Eigen::Index b = batch.size();
  require(b >= 1, "naf_update: empty batch");
  Vec y = batch.rewards;
  const bool any_boot = std::any_of(batch.terminal.begin(), batch.terminal.end(), [](bool t) { return !t; });
  if (any_boot) {
    const Mat next = nn::predict(n.target, batch.next_states);
    for (Eigen::Index i = 0; i < b; ++i)
      if (!batch.terminal[static_cast<std::size_t>(i)]) y(i) += n.gamma * next(0, i);
  }
  const auto tr = nn::forward(n.net, batch.states);
  Mat out_grad(tr.output().rows(), b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const Vec raw = tr.output().col(i);
    const NafHeads h = naf_heads(raw, n.box);
    const double delta = naf_q(h, batch.actions.col(i)) - y(i);
    out_grad.col(i) = delta / static_cast<double>(b) * naf_q_grad(raw, h, batch.actions.col(i), n.box);
  }
  if (!out_grad.allFinite()) return false;
  auto bw = nn::backward(n.net, tr, out_grad);
  if (!bw.grad.all_finite()) return false;
  nn::adam_step(n.opt, n.net, bw.grad, lr);
  nn::blend_into(n.target, n.net, n.tau);
  return true;
}

// ---- QT-Opt style CEM --------------------------------------------------------

struct CemResult {
  Vec best;
  double best_value = -std::numeric_limits<double>::infinity();
  MixtureParams fitted;  // sampler after the last refit
};

// Two components at center -/+ half_width/2, each with stdev half_width/2.
inline MixtureParams qtopt_initial(const ActionBox& box) {
  const Vec c = box.center(), hw = box.half_width();
  Mat mean(box.dim(), 2), sd(box.dim(), 2);
  mean.col(0) = c - 0.5 * hw;
  mean.col(1) = c + 0.5 * hw;
  sd.col(0) = 0.5 * hw;
  sd.col(1) = 0.5 * hw;
  return make_mixture(Vec::Constant(2, 0.5), mean, sd);
}

// Hard-assigns elites to the nearest current mean and refits each
// component's moments. Components left without elites get weight zero.
inline MixtureParams refit_mixture(const MixtureParams& cur, const Mat& elites, double var_floor = 1e-4) {
  const int k = cur.k;
  std::vector<std::vector<int>> members(static_cast<std::size_t>(k));
  for (Eigen::Index e = 0; e < elites.cols(); ++e) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < k; ++i) {
      const double dist = (elites.col(e) - cur.mean.col(i)).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = i;
      }
    }
    members[static_cast<std::size_t>(best)].push_back(static_cast<int>(e));
  }
  MixtureParams next = cur;
  next.raw.resize(0);
  for (int i = 0; i < k; ++i) {
    const auto& idx = members[static_cast<std::size_t>(i)];
    next.coef(i) = static_cast<double>(idx.size()) / static_cast<double>(elites.cols());
    if (idx.empty()) continue;
    Vec mu = Vec::Zero(cur.d);
    for (int e : idx) mu += elites.col(e);
    mu /= static_cast<double>(idx.size());
    Vec var = Vec::Zero(cur.d);
    for (int e : idx) var += (elites.col(e) - mu).cwiseAbs2();
    var /= static_cast<double>(idx.size());
    next.mean.col(i) = mu;
    next.stdev.col(i) = var.cwiseMax(var_floor).cwiseSqrt();
  }
  return next;
}

/// Per-step CEM over the action box under q.
template <ActionValueFn Q>
CemResult qtopt_search(const Q& q, const ActionBox& box, int iters, int n_samples, int n_elite, Rng& rng) {
  require(iters >= 1, "qtopt: iters must be >= 1");
  require(n_samples >= 1 && n_elite >= 1, "qtopt: sample and elite counts must be positive");
  n_elite = std::min(n_elite, n_samples);
  CemResult res;
  res.fitted = qtopt_initial(box);
  for (int it = 0; it < iters; ++it) {
    const auto draws = sample(res.fitted, rng, n_samples, box);
    Mat actions(box.dim(), n_samples);
    for (int i = 0; i < n_samples; ++i) actions.col(i) = draws[static_cast<std::size_t>(i)].action;
    const Vec v = q.values(actions);
    const auto elite = empirical_top_quantile(actions, v, static_cast<double>(n_elite) / n_samples);
    if (elite.values(0) > res.best_value || res.best.size() == 0) {
      res.best_value = elite.values(0);
      res.best = elite.actions.col(0);
    }
    res.fitted = refit_mixture(res.fitted, elite.actions.leftCols(std::min(elite.h, n_elite)));
  }
  return res;
}

template <ActionValueFn Q>
Vec qtopt_action(const Q& q, const ActionBox& box, int iters, int n_samples, int n_elite, Rng& rng) {
  return qtopt_search(q, box, iters, n_samples, n_elite, rng).best;
}

// ---- Exhaustive grid argmax ------------------------------------------------

inline Mat action_grid(const ActionBox& box, double step) {
  if (box.dim() != 1) throw ConfigError("optimal-q: only one-dimensional actions are supported");
  require(step > 0.0, "optimal-q: grid step must be positive");
  const double lo = box.low(0), hi = box.high(0);
  const auto n = static_cast<Eigen::Index>(std::floor((hi - lo) / step + 1e-9)) + 1;
  Mat g(1, n);
  for (Eigen::Index i = 0; i < n; ++i) g(0, i) = std::min(hi, lo + static_cast<double>(i) * step);
  return g;
}

/// Grid argmax of q over the box; ties go to the lowest action.
template <ActionValueFn Q>
Vec optimal_q_action(const Q& q, const ActionBox& box, double grid_step) {
  const Mat grid = action_grid(box, grid_step);
  const Vec v = q.values(grid);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return grid.col(best);
}

// ---- Actor-critic ----------------------------------------------------------

/// Sarsa target r + gamma * Q_target(s', a'') with a'' ~ pi_w(s').
inline Vec sarsa_targets(const Batch& batch, const ExpertState& critic, const ActorState& actor, Rng& rng) {
  const Eigen::Index n = batch.size();
  require(n >= 1, "ac_critic_update: empty batch");
  if (std::all_of(batch.terminal.begin(), batch.terminal.end(), [](bool t) { return t; }))
    return batch.rewards;
  const Mat heads = nn::predict(actor.fast, nn::predict(critic.trunk, batch.next_states));
  Mat next_actions(critic.action_dim(), n);
  for (Eigen::Index i = 0; i < n; ++i)
    next_actions.col(i) = sample(to_mixture(heads.col(i), actor.k, actor.d, actor.box), rng, 1, actor.box)[0].action;
  const Vec boot = q_values(critic.target_trunk, critic.target_q, batch.next_states, next_actions);
  Vec y(n);
  for (Eigen::Index i = 0; i < n; ++i)
    y(i) = batch.rewards(i) + (batch.terminal[static_cast<std::size_t>(i)] ? 0.0 : critic.gamma * boot(i));
  return y;
}

inline bool ac_critic_update(ExpertState& critic, const Batch& batch, const ActorState& actor, double lr,
                             Rng& rng) {
  return q_update(critic, batch, sarsa_targets(batch, critic, actor, rng), lr);
}

struct AcDirection {
  nn::Grad grad;
  Mat feature_grad;
  double mean_advantage = 0.0;
  bool finite = true;
};

/// Score-function direction grad log pi(a|s) * (Q(s,a) - mean_i Q(s,b_i)),
/// a and b_i drawn from pi_w, averaged over the batch.
template <class QAt>
AcDirection ac_actor_direction(const ActorState& actor, const Mat& features, QAt&& q_at, int n_baseline,
                               Rng& rng) {
  require(n_baseline >= 1, "ac_actor_update: n_baseline must be >= 1");
  const Eigen::Index batch = features.cols();
  const nn::Trace tr = nn::forward(actor.fast, features);
  Mat head_grads(tr.output().rows(), batch);
  AcDirection dir;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto mix = to_mixture(tr.output().col(b), actor.k, actor.d, actor.box);
    const auto drawn = sample(mix, rng, 1 + n_baseline, actor.box);
    Mat acts(actor.d, 1 + n_baseline);
    for (int i = 0; i <= n_baseline; ++i) acts.col(i) = drawn[static_cast<std::size_t>(i)].action;
    const Vec v = q_at(b).values(acts);
    // Mean of differences, so a constant critic gives exactly zero.
    const double adv = (v(0) - v.tail(n_baseline).array()).mean();
    dir.mean_advantage += adv / static_cast<double>(batch);
    head_grads.col(b) = adv * log_density_grad(mix, drawn[0].draw);
  }
  if (!head_grads.allFinite()) {
    dir.finite = false;
    dir.grad = nn::zeros_like(actor.fast);
    return dir;
  }
  auto bw = nn::backward(actor.fast, tr, head_grads / static_cast<double>(batch));
  dir.grad = std::move(bw.grad);
  dir.feature_grad = std::move(bw.input_grad);
  dir.finite = dir.grad.all_finite();
  return dir;
}

template <class QAt>
bool ac_actor_update(ActorState& actor, const Mat& features, QAt&& q_at, int n_baseline, double lr, Rng& rng) {
  auto dir = ac_actor_direction(actor, features, q_at, n_baseline, rng);
  return dir.finite && apply_ascent(actor, dir.grad, lr);
}

}  // namespace aexp
