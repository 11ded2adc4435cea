#pragma once

// Conditional CEM actor with fast and slow policy weights.
//
// The policy network maps state features to mixture heads. Actions are
// sampled from the slow weights w', the top quantile under Q is kept, and
// the fast weights w ascend the elite log-likelihood:
//
//   w   <- Proj( w + lr * (1/N) * sum_{a in elite} grad_w log pi_w(a|s) )
//   w'  <- (1 - a') w' + a' w

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "aexp/errors.hpp"
#include "aexp/mixture.hpp"
#include "aexp/nn.hpp"
#include "aexp/quantile.hpp"
#include "aexp/rng.hpp"

namespace aexp {

struct ActorState {
  nn::Mlp fast;  // w
  nn::Mlp slow;  // w'
  int k = 2;
  int d = 1;
  ActionBox box;
  double w_max = 1e6;
  long t = 0;
  std::optional<nn::Adam> adam;  // set: Adam steps; unset: plain ascent

  MixtureParams mixture(const Vec& features) const {
    return to_mixture(nn::predict(fast, features), k, d, box);
  }
  MixtureParams slow_mixture(const Vec& features) const {
    return to_mixture(nn::predict(slow, features), k, d, box);
  }
};

// Policy branch: features -> hidden (relu) ... -> mixture heads (linear).
inline ActorState make_actor(int feature_dim, std::vector<int> hidden, int k, const ActionBox& box,
                             std::uint64_t seed, bool use_adam = true) {
  std::vector<int> topo{feature_dim};
  topo.insert(topo.end(), hidden.begin(), hidden.end());
  topo.push_back(mixture_head_size(k, box.dim()));
  std::vector<nn::Activation> acts(topo.size() - 1, nn::Activation::relu);
  acts.back() = nn::Activation::linear;
  ActorState a;
  a.fast = nn::mlp_init(topo, acts, seed);
  a.slow = a.fast;
  a.k = k;
  a.d = box.dim();
  a.box = box;
  if (use_adam) a.adam = nn::make_adam(a.fast);
  return a;
}

enum class ScheduleMode { constant, theory };

struct Schedule {
  ScheduleMode mode = ScheduleMode::constant;
  // constant mode
  double actor_lr = 1e-3;
  double slow_rate = 1.0;
  double expert_lr = 1e-2;
  int n_samples = 30;
  // theory mode: a0 / (1+t)^p and N_t = N0 * ceil(growth^floor(t / epoch))
  double a0 = 0.5;
  double actor_exp = 0.6;
  double slow_exp = 0.8;
  double expert_exp = 0.9;
  int n0 = 10;
  double growth = 2.0;
  long epoch = 1000;
};

struct StepSizes {
  double actor;
  double slow;
  double expert;
  int n_samples;
};

inline StepSizes schedule_at(const Schedule& s, long t) {
  require(t >= 0, "schedule_at: t must be >= 0");
  if (s.mode == ScheduleMode::constant) return {s.actor_lr, s.slow_rate, s.expert_lr, s.n_samples};
  const double base = 1.0 + static_cast<double>(t);
  const double n = s.n0 * std::ceil(std::pow(s.growth, static_cast<double>(t / s.epoch)));
  return {s.a0 / std::pow(base, s.actor_exp), std::min(1.0, s.a0 / std::pow(base, s.slow_exp)),
          s.a0 / std::pow(base, s.expert_exp), static_cast<int>(n)};
}

struct CcemOptions {
  int n_samples = 30;
  double rho = 0.2;
  bool refine = false;
  int refine_steps = 10;
  double ascent_lr = 0.04;
};

// Per-state pieces of one CCEM step.
struct CcemStateStep {
  Vec head_grad;   // (1/N) sum over elites of d log pi_w / d raw heads
  EliteSet elite;
  Mat likelihood_points;  // d x h, where the fast log-likelihood is evaluated
};

/// Samples N actions from the slow mixture, selects elites under q and
/// returns the fast-head gradient of the normalized elite log-likelihood.
template <ActionValueFn Q>
CcemStateStep ccem_state_step(const MixtureParams& slow_mix, const MixtureParams& fast_mix,
                              const Q& q, const CcemOptions& opt, const ActionBox& box,
                              Rng& rng) {
  require(opt.n_samples >= 1, "ccem: N must be >= 1");
  const auto samples = sample(slow_mix, rng, opt.n_samples, box);
  const int d = box.dim();
  Mat actions(d, opt.n_samples);
  for (int i = 0; i < opt.n_samples; ++i) actions.col(i) = samples[i].action;

  CcemStateStep out;
  if (opt.refine) {
    out.elite = refine_then_select(actions, q, opt.refine_steps, opt.ascent_lr, opt.rho, box);
    out.likelihood_points = out.elite.actions;
  } else {
    out.elite = empirical_top_quantile(actions, q.values(actions), opt.rho);
    out.likelihood_points.resize(d, out.elite.h);
    for (int i = 0; i < out.elite.h; ++i)
      out.likelihood_points.col(i) = samples[out.elite.indices[i]].draw;
  }
  out.head_grad = Vec::Zero(fast_mix.raw.size());
  for (int i = 0; i < out.elite.h; ++i)
    out.head_grad += log_density_grad(fast_mix, out.likelihood_points.col(i));
  out.head_grad /= static_cast<double>(opt.n_samples);
  return out;
}

struct CcemDirection {
  nn::Grad grad;      // ascent direction for w, averaged over the batch
  Mat feature_grad;   // d objective / d features, already divided by B
  double mean_threshold = 0.0;
  bool finite = true;
};

/// Ascent direction of the batch-averaged CCEM objective. q_at(b) returns
/// the action-value function for column b of `features`.
template <class QAt>
CcemDirection ccem_direction(const ActorState& actor, const Mat& features, QAt&& q_at,
                             const CcemOptions& opt, Rng& rng) {
  const Eigen::Index batch = features.cols();
  require(batch >= 1, "ccem_direction: empty batch");
  const Mat slow_heads = nn::predict(actor.slow, features);
  const nn::Trace tr = nn::forward(actor.fast, features);
  Mat head_grads(tr.output().rows(), batch);
  CcemDirection dir;
  for (Eigen::Index b = 0; b < batch; ++b) {
    try {
      const auto slow_mix = to_mixture(slow_heads.col(b), actor.k, actor.d, actor.box);
      const auto fast_mix = to_mixture(tr.output().col(b), actor.k, actor.d, actor.box);
      auto step = ccem_state_step(slow_mix, fast_mix, q_at(b), opt, actor.box, rng);
      head_grads.col(b) = step.head_grad;
      dir.mean_threshold += step.elite.threshold / static_cast<double>(batch);
    } catch (const NumericError&) {
      head_grads.col(b).setZero();
      dir.finite = false;
    }
  }
  // backward() propagates d<g, out>; the objective is per-state mean.
  auto bw = nn::backward(actor.fast, tr, head_grads / static_cast<double>(batch));
  dir.grad = std::move(bw.grad);
  dir.feature_grad = std::move(bw.input_grad);
  if (!dir.grad.all_finite()) dir.finite = false;
  return dir;
}

inline void project(nn::Mlp& params, double w_max) {
  require(w_max > 0.0, "project: W_max must be positive");
  for (auto& l : params.layers) {
    l.weight = l.weight.cwiseMax(-w_max).cwiseMin(w_max);
    l.bias = l.bias.cwiseMax(-w_max).cwiseMin(w_max);
  }
}

inline nn::Mlp projected(const nn::Mlp& params, double w_max) {
  nn::Mlp out = params;
  project(out, w_max);
  return out;
}

struct CcemReport {
  bool applied = false;
  double mean_threshold = 0.0;
  Mat feature_grad;
};

// Applies an ascent direction to the fast weights and projects them.
inline bool apply_ascent(ActorState& actor, const nn::Grad& ascent, double lr) {
  if (!ascent.all_finite()) return false;
  if (lr == 0.0) return true;
  nn::Grad descent = ascent;
  descent *= -1.0;
  if (actor.adam)
    nn::adam_step(*actor.adam, actor.fast, descent, lr);
  else
    nn::sgd_step(actor.fast, descent, lr);
  project(actor.fast, actor.w_max);
  ++actor.t;
  return true;
}

/// One CCEM step on a batch of states. A non-finite direction leaves the
/// actor untouched and is reported through `applied`.
template <class QAt>
CcemReport ccem_update(ActorState& actor, const Mat& features, QAt&& q_at,
                       const CcemOptions& opt, double lr, Rng& rng) {
  require(lr >= 0.0, "ccem_update: negative learning rate");
  auto dir = ccem_direction(actor, features, q_at, opt, rng);
  CcemReport rep;
  rep.mean_threshold = dir.mean_threshold;
  if (!dir.finite) return rep;
  rep.applied = apply_ascent(actor, dir.grad, lr);
  rep.feature_grad = std::move(dir.feature_grad);
  return rep;
}

inline void slow_update(ActorState& actor, double rate) {
  require(rate > 0.0 && rate <= 1.0, "slow_update: rate must be in (0,1]");
  nn::blend_into(actor.slow, actor.fast, rate);
  project(actor.slow, actor.w_max);
}

}  // namespace aexp
