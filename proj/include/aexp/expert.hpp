#pragma once

// Q-learning expert on a shared state trunk with late action fusion:
//
//   features = trunk(s)              (relu layer shared with the actor)
//   Q(s, a)  = q_branch([features; a])
//
// Bootstrap values come from the target copies (target_trunk, target_q);
// the maximal next action is proposed by the actor and refined on the
// online Q.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "aexp/actor.hpp"
#include "aexp/errors.hpp"
#include "aexp/mixture.hpp"
#include "aexp/nn.hpp"
#include "aexp/quantile.hpp"
#include "aexp/replay.hpp"

namespace aexp {

struct ExpertState {
  nn::Mlp trunk;
  nn::Mlp q;
  nn::Mlp target_trunk;
  nn::Mlp target_q;
  nn::Adam trunk_opt;
  nn::Adam q_opt;
  double gamma = 0.99;
  double tau = 0.01;
  ActionBox box;

  int feature_dim() const { return trunk.out_dim(); }
  int action_dim() const { return box.dim(); }
};

inline ExpertState make_expert(int state_dim, int hidden, const ActionBox& box, double gamma,
                               double tau, std::uint64_t seed) {
  using nn::Activation;
  ExpertState e;
  e.trunk = nn::mlp_init({state_dim, hidden}, {Activation::relu}, mix64(seed ^ 0x7472756eULL));
  e.q = nn::mlp_init({hidden + box.dim(), hidden, 1}, {Activation::relu, Activation::linear},
                     mix64(seed ^ 0x71ULL));
  e.target_trunk = e.trunk;
  e.target_q = e.q;
  e.trunk_opt = nn::make_adam(e.trunk);
  e.q_opt = nn::make_adam(e.q);
  e.gamma = gamma;
  e.tau = tau;
  e.box = box;
  return e;
}

inline Mat fuse(const Mat& features, const Mat& actions) {
  require(features.cols() == actions.cols(), "fuse: batch size mismatch");
  Mat x(features.rows() + actions.rows(), features.cols());
  x.topRows(features.rows()) = features;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

// Network whose first-layer input is [fixed; action], restricted to one
// value of `fixed`. The fixed part of the first layer is folded into a
// per-state bias once, so each extra action costs O(width * d) there.
// Satisfies ActionValueFn.
struct FusedQ {
  const nn::Mlp* net = nullptr;
  Vec base;  // W[:, :fixed] * fixed + b of the first layer

  FusedQ(const nn::Mlp& n, const Vec& fixed) : net(&n) {
    const auto& l0 = n.layers.front();
    require(fixed.size() < l0.in_dim(), "FusedQ: fixed input too wide");
    base = l0.weight.leftCols(fixed.size()) * fixed + l0.bias;
  }

  Vec values(const Mat& actions) const {
    const auto& l0 = net->layers.front();
    Mat x = l0.weight.rightCols(actions.rows()) * actions;
    x.colwise() += base;
    nn::detail::apply_activation(l0.act, x);
    for (std::size_t k = 1; k < net->layers.size(); ++k) {
      const auto& l = net->layers[k];
      Mat z = l.weight * x;
      z.colwise() += l.bias;
      nn::detail::apply_activation(l.act, z);
      x = std::move(z);
    }
    return x.row(0).transpose();
  }

  Mat action_grads(const Mat& actions) const {
    const auto& layers = net->layers;
    const std::size_t n = layers.size();
    std::vector<Mat> pre(n), out(n);
    {
      Mat z = layers[0].weight.rightCols(actions.rows()) * actions;
      z.colwise() += base;
      pre[0] = z;
      nn::detail::apply_activation(layers[0].act, z);
      out[0] = std::move(z);
    }
    for (std::size_t k = 1; k < n; ++k) {
      Mat z = layers[k].weight * out[k - 1];
      z.colwise() += layers[k].bias;
      pre[k] = z;
      nn::detail::apply_activation(layers[k].act, z);
      out[k] = std::move(z);
    }
    Mat delta = Mat::Ones(1, actions.cols());
    for (std::size_t k = n; k-- > 0;) {
      switch (layers[k].act) {
        case nn::Activation::relu:
          delta = (pre[k].array() > 0.0).select(delta.array(), 0.0).matrix();
          break;
        case nn::Activation::tanh:
          delta = (delta.array() * (1.0 - out[k].array().square())).matrix();
          break;
        case nn::Activation::linear: break;
      }
      if (k == 0) break;
      Mat prev = layers[k].weight.transpose() * delta;
      delta = std::move(prev);
    }
    return layers[0].weight.rightCols(actions.rows()).transpose() * delta;
  }
};

inline Mat trunk_features(const ExpertState& e, const Mat& states) { return nn::predict(e.trunk, states); }

inline FusedQ online_q_at(const ExpertState& e, const Vec& features) { return FusedQ(e.q, features); }

// Q values for B (state, action) pairs.
inline Vec q_values(const nn::Mlp& trunk, const nn::Mlp& q, const Mat& states, const Mat& actions) {
  if (states.cols() != actions.cols()) throw ContractError("q_values: batch size mismatch");
  const Mat f = nn::predict(trunk, states);
  return nn::predict(q, fuse(f, actions)).row(0).transpose();
}

inline double q_value(const ExpertState& e, const Vec& state, const Vec& action) {
  if (state.size() != e.trunk.in_dim() || action.size() != e.action_dim())
    throw ContractError("q_value: shape mismatch");
  return q_values(e.trunk, e.q, Mat(state), Mat(action))(0);
}

/// Starts from the actor's predominant mode and ascends Q(s, .) for
/// n_ascent steps, returning the best iterate seen.
template <ActionValueFn Q>
Vec ascend_from(const Vec& start, const Q& q, int n_ascent, double lr, const ActionBox& box) {
  require(n_ascent >= 0, "max_action_estimate: n_ascent must be >= 0");
  Vec best = start;
  if (n_ascent == 0) return best;
  double best_q = q.values(Mat(start))(0);
  Vec cur = start;
  for (int s = 0; s < n_ascent; ++s) {
    const Vec g = q.action_grads(Mat(cur)).col(0);
    Vec next = cur + lr * g;
    if (!next.allFinite()) break;
    cur = box.clip(next);
    const double v = q.values(Mat(cur))(0);
    if (!std::isfinite(v)) break;
    if (v > best_q) {
      best_q = v;
      best = cur;
    }
  }
  return best;
}

inline Vec max_action_from_features(const ActorState& actor, const ExpertState& e, const Vec& features,
                                    int n_ascent, double lr) {
  const Vec mode = predominant_mode(actor.mixture(features));
  return ascend_from(mode, online_q_at(e, features), n_ascent, lr, e.box);
}

inline Vec max_action_estimate(const ActorState& actor, const ExpertState& e, const Vec& state,
                               int n_ascent, double lr = -1.0) {
  if (lr < 0.0) lr = default_ascent_lr(e.box);
  const Vec f = nn::predict(e.trunk, state);
  return max_action_from_features(actor, e, f, n_ascent, lr);
}

/// r + gamma * Q_target(s', a') with a' from the actor; r on terminal steps.
inline Vec q_targets(const Batch& batch, const ExpertState& e, const ActorState& actor,
                     int n_ascent = 0, double lr = -1.0) {
  require(batch.size() >= 1, "q_targets: empty batch");
  if (lr < 0.0) lr = default_ascent_lr(e.box);
  const Eigen::Index n = batch.size();
  if (std::all_of(batch.terminal.begin(), batch.terminal.end(), [](bool t) { return t; }))
    return batch.rewards;
  const Mat f_next = nn::predict(e.trunk, batch.next_states);
  const Mat heads = nn::predict(actor.fast, f_next);
  Mat next_actions(e.action_dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec mode = predominant_mode(to_mixture(heads.col(i), actor.k, actor.d, actor.box));
    next_actions.col(i) =
        n_ascent > 0 ? ascend_from(mode, online_q_at(e, f_next.col(i)), n_ascent, lr, e.box) : mode;
  }
  const Vec boot = q_values(e.target_trunk, e.target_q, batch.next_states, next_actions);
  Vec y(n);
  for (Eigen::Index i = 0; i < n; ++i)
    y(i) = batch.rewards(i) + (batch.terminal[static_cast<std::size_t>(i)] ? 0.0 : e.gamma * boot(i));
  return y;
}

struct ExpertGrads {
  nn::Grad trunk;
  nn::Grad q;
  double loss = 0.0;  // 0.5 * mean squared TD error
};

// Semi-gradient of 0.5 * mean (Q(s,a) - y)^2, targets held constant.
inline ExpertGrads expert_gradients(const ExpertState& e, const Batch& batch, const Vec& targets) {
  require(targets.size() == batch.size(), "q_update: batch/targets size mismatch");
  const double n = static_cast<double>(batch.size());
  const auto tr_trunk = nn::forward(e.trunk, batch.states);
  const auto tr_q = nn::forward(e.q, fuse(tr_trunk.output(), batch.actions));
  const Vec delta = tr_q.output().row(0).transpose() - targets;
  ExpertGrads g;
  g.loss = 0.5 * delta.squaredNorm() / n;
  auto bw_q = nn::backward(e.q, tr_q, delta.transpose() / n);
  auto bw_trunk = nn::backward(e.trunk, tr_trunk, bw_q.input_grad.topRows(e.feature_dim()));
  g.q = std::move(bw_q.grad);
  g.trunk = std::move(bw_trunk.grad);
  return g;
}

inline void blend_targets(ExpertState& e) {
  nn::blend_into(e.target_trunk, e.trunk, e.tau);
  nn::blend_into(e.target_q, e.q, e.tau);
}

/// One Adam step on the TD loss followed by the soft target update.
/// Returns false (and changes nothing) when the loss or gradient is not finite.
inline bool q_update(ExpertState& e, const Batch& batch, const Vec& targets, double lr) {
  auto g = expert_gradients(e, batch, targets);
  if (!std::isfinite(g.loss) || !g.q.all_finite() || !g.trunk.all_finite()) return false;
  nn::adam_step(e.q_opt, e.q, g.q, lr);
  nn::adam_step(e.trunk_opt, e.trunk, g.trunk, lr);
  blend_targets(e);
  return true;
}

}  // namespace aexp
