#pragma once

// Agents driven by the training harness. Every agent acts, acts greedily
// for offline evaluation, and learns from replay mini-batches.

#include <Eigen/Dense>

#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "aexp/actor.hpp"
#include "aexp/baselines.hpp"
#include "aexp/config.hpp"
#include "aexp/env.hpp"
#include "aexp/expert.hpp"
#include "aexp/nn.hpp"
#include "aexp/replay.hpp"
#include "aexp/rng.hpp"

namespace aexp {

class Agent {
 public:
  virtual ~Agent() = default;
  virtual std::string name() const = 0;
  virtual Vec act(const Vec& obs, Rng& rng) = 0;
  virtual Vec greedy(const Vec& obs, Rng& rng) const = 0;
  virtual void update(const Batch& batch, Rng& rng) = 0;
  virtual void begin_episode() {}
  virtual std::unique_ptr<Agent> clone() const = 0;
  virtual double max_abs_actor_weight() const { return 0.0; }
  virtual long skipped_updates() const { return skipped_; }

  // Networks in a fixed order; snapshots are these, written back to back.
  virtual std::vector<const nn::Mlp*> networks() const = 0;
  virtual std::vector<nn::Mlp*> networks() = 0;

  void save(std::ostream& os) const {
    for (const auto* n : networks()) nn::write_mlp(os, *n);
  }
  void load(std::istream& is) {
    for (auto* n : networks()) {
      nn::Mlp m = nn::read_mlp(is);
      if (!nn::congruent(m, *n)) throw IoError("snapshot: network shape does not match the configuration");
      *n = std::move(m);
    }
  }

 protected:
  long skipped_ = 0;
};

namespace detail {

inline Schedule schedule_from(const ExperimentConfig& c) {
  Schedule s;
  s.mode = c.schedule == "theory" ? ScheduleMode::theory : ScheduleMode::constant;
  s.actor_lr = c.actor_lr;
  s.expert_lr = c.expert_lr;
  s.slow_rate = c.slow_rate;
  s.n_samples = c.n_samples;
  s.n0 = c.n_samples;
  return s;
}

// Adds the actor's feature gradient (an ascent direction) into the
// shared trunk with its own Adam state.
inline void push_feature_grad(nn::Mlp& trunk, nn::Adam& opt, const Mat& states, const Mat& feature_ascent,
                              double lr) {
  if (feature_ascent.size() == 0 || lr <= 0.0) return;
  const auto tr = nn::forward(trunk, states);
  auto bw = nn::backward(trunk, tr, -feature_ascent);
  if (bw.grad.all_finite()) nn::adam_step(opt, trunk, bw.grad, lr);
}

inline Vec policy_sample(const ActorState& actor, const Vec& features, Rng& rng) {
  return sample(actor.mixture(features), rng, 1, actor.box)[0].action;
}

}  // namespace detail

// ---- Actor-Expert (CCEM actor + Q-learning expert) --------------------------

class ActorExpertAgent final : public Agent {
 public:
  ActorExpertAgent(const ExperimentConfig& c, const EnvSpec& spec, std::uint64_t seed)
      : name_(c.agent), sched_(detail::schedule_from(c)), max_ascent_(c.max_ascent),
        ou_(OuNoise::zeros(spec.action_dim, c.ou_mu, c.ou_theta, c.ou_sigma)), use_ou_(c.exploration == "ou") {
    expert_ = make_expert(spec.state_dim, c.hidden, spec.box, c.gamma, c.tau, mix64(seed ^ hash_name("expert")));
    actor_ = make_actor(c.hidden, {c.hidden}, c.components, spec.box, mix64(seed ^ hash_name("actor")),
                        c.actor_adam);
    actor_.w_max = c.w_max;
    trunk_actor_opt_ = nn::make_adam(expert_.trunk);
    ascent_lr_ = c.ascent_lr < 0.0 ? default_ascent_lr(spec.box) : c.ascent_lr;
    ccem_.n_samples = c.n_samples;
    ccem_.rho = c.rho;
    ccem_.refine = c.refine;
    ccem_.refine_steps = c.refine_steps;
    ccem_.ascent_lr = ascent_lr_;
  }

  std::string name() const override { return name_; }

  Vec act(const Vec& obs, Rng& rng) override {
    const Vec f = nn::predict(expert_.trunk, obs);
    if (use_ou_) return expert_.box.clip(max_action_from_features(actor_, expert_, f, max_ascent_, ascent_lr_) +
                                         ou_next(ou_, rng));
    return detail::policy_sample(actor_, f, rng);
  }

  Vec greedy(const Vec& obs, Rng&) const override {
    return max_action_estimate(actor_, expert_, obs, max_ascent_, ascent_lr_);
  }

  void begin_episode() override { ou_.reset(); }

  void update(const Batch& batch, Rng& rng) override {
    const StepSizes lr = schedule_at(sched_, t_++);
    const Vec targets = q_targets(batch, expert_, actor_, max_ascent_, ascent_lr_);
    auto g = expert_gradients(expert_, batch, targets);
    if (std::isfinite(g.loss) && g.q.all_finite() && g.trunk.all_finite()) {
      nn::adam_step(expert_.q_opt, expert_.q, g.q, lr.expert);
      nn::adam_step(expert_.trunk_opt, expert_.trunk, g.trunk, lr.expert);
    } else {
      ++skipped_;
    }

    const Mat features = nn::predict(expert_.trunk, batch.states);
    CcemOptions opt = ccem_;
    opt.n_samples = lr.n_samples;
    auto dir = ccem_direction(actor_, features, [&](Eigen::Index b) { return FusedQ(expert_.q, features.col(b)); },
                              opt, rng);
    if (dir.finite && apply_ascent(actor_, dir.grad, lr.actor)) {
      detail::push_feature_grad(expert_.trunk, trunk_actor_opt_, batch.states, dir.feature_grad, lr.actor);
      slow_update(actor_, lr.slow);
    } else {
      ++skipped_;
    }
    blend_targets(expert_);
  }

  std::unique_ptr<Agent> clone() const override { return std::make_unique<ActorExpertAgent>(*this); }
  double max_abs_actor_weight() const override {
    return std::max(nn::max_abs(actor_.fast), nn::max_abs(actor_.slow));
  }
  std::vector<const nn::Mlp*> networks() const override {
    return {&expert_.trunk, &expert_.q, &expert_.target_trunk, &expert_.target_q, &actor_.fast, &actor_.slow};
  }
  std::vector<nn::Mlp*> networks() override {
    return {&expert_.trunk, &expert_.q, &expert_.target_trunk, &expert_.target_q, &actor_.fast, &actor_.slow};
  }

  const ExpertState& expert() const { return expert_; }
  const ActorState& actor() const { return actor_; }

 private:
  std::string name_;
  ExpertState expert_;
  ActorState actor_;
  nn::Adam trunk_actor_opt_;
  Schedule sched_;
  CcemOptions ccem_;
  int max_ascent_ = 0;
  double ascent_lr_ = 0.04;
  OuNoise ou_;
  bool use_ou_ = false;
  long t_ = 0;
};

// ---- Off-policy actor-critic ------------------------------------------------

class ActorCriticAgent final : public Agent {
 public:
  ActorCriticAgent(const ExperimentConfig& c, const EnvSpec& spec, std::uint64_t seed)
      : actor_lr_(c.actor_lr), critic_lr_(c.expert_lr), n_baseline_(c.n_baseline),
        ou_(OuNoise::zeros(spec.action_dim, c.ou_mu, c.ou_theta, c.ou_sigma)), use_ou_(c.exploration == "ou") {
    critic_ = make_expert(spec.state_dim, c.hidden, spec.box, c.gamma, c.tau, mix64(seed ^ hash_name("expert")));
    actor_ = make_actor(c.hidden, {c.hidden}, c.components, spec.box, mix64(seed ^ hash_name("actor")),
                        c.actor_adam);
    actor_.w_max = c.w_max;
    trunk_actor_opt_ = nn::make_adam(critic_.trunk);
  }

  std::string name() const override { return "actor-critic"; }

  Vec act(const Vec& obs, Rng& rng) override {
    const Vec f = nn::predict(critic_.trunk, obs);
    if (use_ou_) return critic_.box.clip(predominant_mode(actor_.mixture(f)) + ou_next(ou_, rng));
    return detail::policy_sample(actor_, f, rng);
  }
  Vec greedy(const Vec& obs, Rng&) const override {
    return predominant_mode(actor_.mixture(nn::predict(critic_.trunk, obs)));
  }
  void begin_episode() override { ou_.reset(); }

  void update(const Batch& batch, Rng& rng) override {
    if (!q_update_no_blend(batch, rng)) ++skipped_;
    const Mat features = nn::predict(critic_.trunk, batch.states);
    auto dir = ac_actor_direction(actor_, features,
                                  [&](Eigen::Index b) { return FusedQ(critic_.q, features.col(b)); }, n_baseline_,
                                  rng);
    if (dir.finite && apply_ascent(actor_, dir.grad, actor_lr_))
      detail::push_feature_grad(critic_.trunk, trunk_actor_opt_, batch.states, dir.feature_grad, actor_lr_);
    else
      ++skipped_;
    blend_targets(critic_);
  }

  std::unique_ptr<Agent> clone() const override { return std::make_unique<ActorCriticAgent>(*this); }
  double max_abs_actor_weight() const override { return nn::max_abs(actor_.fast); }
  std::vector<const nn::Mlp*> networks() const override {
    return {&critic_.trunk, &critic_.q, &critic_.target_trunk, &critic_.target_q, &actor_.fast};
  }
  std::vector<nn::Mlp*> networks() override {
    return {&critic_.trunk, &critic_.q, &critic_.target_trunk, &critic_.target_q, &actor_.fast};
  }

 private:
  bool q_update_no_blend(const Batch& batch, Rng& rng) {
    const Vec y = sarsa_targets(batch, critic_, actor_, rng);
    auto g = expert_gradients(critic_, batch, y);
    if (!std::isfinite(g.loss) || !g.q.all_finite() || !g.trunk.all_finite()) return false;
    nn::adam_step(critic_.q_opt, critic_.q, g.q, critic_lr_);
    nn::adam_step(critic_.trunk_opt, critic_.trunk, g.trunk, critic_lr_);
    return true;
  }

  ExpertState critic_;
  ActorState actor_;
  nn::Adam trunk_actor_opt_;
  double actor_lr_, critic_lr_;
  int n_baseline_;
  OuNoise ou_;
  bool use_ou_;
};

// ---- QT-Opt style: Q-learning with per-step CEM ----------------------------

class QtOptAgent final : public Agent {
 public:
  QtOptAgent(const ExperimentConfig& c, const EnvSpec& spec, std::uint64_t seed)
      : lr_(c.expert_lr), iters_(c.qtopt_iters), samples_(c.qtopt_samples), elite_(c.qtopt_elite),
        ou_(OuNoise::zeros(spec.action_dim, c.ou_mu, c.ou_theta, c.ou_sigma)), use_ou_(c.exploration == "ou") {
    q_ = make_expert(spec.state_dim, c.hidden, spec.box, c.gamma, c.tau, mix64(seed ^ hash_name("expert")));
  }

  std::string name() const override { return "qtopt"; }

  Vec act(const Vec& obs, Rng& rng) override {
    const Vec f = nn::predict(q_.trunk, obs);
    auto res = qtopt_search(FusedQ(q_.q, f), q_.box, iters_, samples_, elite_, rng);
    if (use_ou_) return q_.box.clip(res.best + ou_next(ou_, rng));
    return sample(res.fitted, rng, 1, q_.box)[0].action;
  }
  Vec greedy(const Vec& obs, Rng& rng) const override {
    return qtopt_action(FusedQ(q_.q, nn::predict(q_.trunk, obs)), q_.box, iters_, samples_, elite_, rng);
  }
  void begin_episode() override { ou_.reset(); }

  void update(const Batch& batch, Rng& rng) override {
    Vec y = batch.rewards;
    if (std::any_of(batch.terminal.begin(), batch.terminal.end(), [](bool t) { return !t; })) {
      const Mat f = nn::predict(q_.target_trunk, batch.next_states);
      for (Eigen::Index i = 0; i < batch.size(); ++i) {
        if (batch.terminal[static_cast<std::size_t>(i)]) continue;
        auto res = qtopt_search(FusedQ(q_.target_q, f.col(i)), q_.box, iters_, samples_, elite_, rng);
        y(i) += q_.gamma * res.best_value;
      }
    }
    if (!q_update(q_, batch, y, lr_)) ++skipped_;
  }

  std::unique_ptr<Agent> clone() const override { return std::make_unique<QtOptAgent>(*this); }
  std::vector<const nn::Mlp*> networks() const override {
    return {&q_.trunk, &q_.q, &q_.target_trunk, &q_.target_q};
  }
  std::vector<nn::Mlp*> networks() override { return {&q_.trunk, &q_.q, &q_.target_trunk, &q_.target_q}; }

 private:
  ExpertState q_;
  double lr_;
  int iters_, samples_, elite_;
  OuNoise ou_;
  bool use_ou_;
};

// ---- NAF ---------------------------------------------------------------------

class NafAgent final : public Agent {
 public:
  NafAgent(const ExperimentConfig& c, const EnvSpec& spec, std::uint64_t seed)
      : lr_(c.expert_lr), ou_(OuNoise::zeros(spec.action_dim, c.ou_mu, c.ou_theta, c.ou_sigma)),
        use_ou_(c.exploration == "ou") {
    naf_ = make_naf(spec.state_dim, c.hidden, spec.box, c.gamma, c.tau, c.naf_scale,
                    mix64(seed ^ hash_name("naf")));
  }

  std::string name() const override { return "naf"; }

  Vec act(const Vec& obs, Rng& rng) override {
    const auto h = naf_eval(naf_.net, obs, naf_.box);
    if (use_ou_) return naf_.box.clip(h.mean + ou_next(ou_, rng));
    return naf_explore(h, naf_.scale, naf_.box, rng);
  }
  Vec greedy(const Vec& obs, Rng&) const override { return naf_eval(naf_.net, obs, naf_.box).mean; }
  void begin_episode() override { ou_.reset(); }
  void update(const Batch& batch, Rng&) override {
    if (!naf_update(naf_, batch, lr_)) ++skipped_;
  }

  std::unique_ptr<Agent> clone() const override { return std::make_unique<NafAgent>(*this); }
  std::vector<const nn::Mlp*> networks() const override { return {&naf_.net, &naf_.target}; }
  std::vector<nn::Mlp*> networks() override { return {&naf_.net, &naf_.target}; }

  const NafState& state() const { return naf_; }

 private:
  NafState naf_;
  double lr_;
  OuNoise ou_;
  bool use_ou_;
};

// ---- Optimal-Q: Q-learning with an exhaustive grid argmax -------------------

class OptimalQAgent final : public Agent {
 public:
  OptimalQAgent(const ExperimentConfig& c, const EnvSpec& spec, std::uint64_t seed)
      : lr_(c.expert_lr), grid_step_(c.grid_step),
        ou_(OuNoise::zeros(spec.action_dim, c.ou_mu, c.ou_theta, c.ou_sigma)) {
    if (spec.action_dim != 1) throw ConfigError("optimal-q: only one-dimensional actions are supported");
    if (c.exploration != "ou") throw ConfigError("optimal-q: exploration must be 'ou'");
    q_ = make_expert(spec.state_dim, c.hidden, spec.box, c.gamma, c.tau, mix64(seed ^ hash_name("expert")));
  }

  std::string name() const override { return "optimal-q"; }

  Vec act(const Vec& obs, Rng& rng) override { return q_.box.clip(argmax(q_.trunk, q_.q, obs) + ou_next(ou_, rng)); }
  Vec greedy(const Vec& obs, Rng&) const override { return argmax(q_.trunk, q_.q, obs); }
  void begin_episode() override { ou_.reset(); }

  void update(const Batch& batch, Rng&) override {
    Vec y = batch.rewards;
    if (std::any_of(batch.terminal.begin(), batch.terminal.end(), [](bool t) { return !t; })) {
      const Mat f = nn::predict(q_.target_trunk, batch.next_states);
      for (Eigen::Index i = 0; i < batch.size(); ++i) {
        if (batch.terminal[static_cast<std::size_t>(i)]) continue;
        FusedQ tq(q_.target_q, f.col(i));
        y(i) += q_.gamma * tq.values(optimal_q_action(tq, q_.box, grid_step_))(0);
      }
    }
    if (!q_update(q_, batch, y, lr_)) ++skipped_;
  }

  std::unique_ptr<Agent> clone() const override { return std::make_unique<OptimalQAgent>(*this); }
  std::vector<const nn::Mlp*> networks() const override {
    return {&q_.trunk, &q_.q, &q_.target_trunk, &q_.target_q};
  }
  std::vector<nn::Mlp*> networks() override { return {&q_.trunk, &q_.q, &q_.target_trunk, &q_.target_q}; }

 private:
  Vec argmax(const nn::Mlp& trunk, const nn::Mlp& q, const Vec& obs) const {
    return optimal_q_action(FusedQ(q, nn::predict(trunk, obs)), q_.box, grid_step_);
  }

  ExpertState q_;
  double lr_;
  double grid_step_;
  OuNoise ou_;
};

inline std::unique_ptr<Agent> make_agent(const ExperimentConfig& c, const EnvSpec& spec, std::uint64_t seed) {
  if (c.agent == "ae" || c.agent == "ae-plus") return std::make_unique<ActorExpertAgent>(c, spec, seed);
  if (c.agent == "actor-critic") return std::make_unique<ActorCriticAgent>(c, spec, seed);
  if (c.agent == "qtopt") return std::make_unique<QtOptAgent>(c, spec, seed);
  if (c.agent == "naf") return std::make_unique<NafAgent>(c, spec, seed);
  if (c.agent == "optimal-q") return std::make_unique<OptimalQAgent>(c, spec, seed);
  throw ConfigError("unknown agent: " + c.agent);
}

}  // namespace aexp
