#pragma once

// Bimodal single-state bandit and pendulum swing-up.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "aexp/errors.hpp"
#include "aexp/mixture.hpp"
#include "aexp/rng.hpp"

namespace aexp {

struct EnvSpec {
  std::string name;
  int state_dim = 1;
  int action_dim = 1;
  ActionBox box;
  int max_steps = 1;
  double gamma = 0.99;
};

struct StepResult {
  Vec obs;
  double reward = 0.0;
  bool done = false;      // episode over (terminal or step limit)
  bool terminal = false;  // natural termination: no bootstrap
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual Vec reset(Rng& rng) = 0;
  virtual StepResult step(const Vec& action) = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;

  Vec reset(std::uint64_t seed) {
    Rng rng = named_stream(seed, "env_reset");
    return reset(rng);
  }
};

// ---- Bimodal -------------------------------------------------------------

inline constexpr double bimodal_width = 0.2;

// Two radial basis bumps: height 1.0 at a = -1 and 1.5 at a = +1.
inline double bimodal_reward(double a) {
  a = std::clamp(a, -2.0, 2.0);
  const double s2 = 2.0 * bimodal_width * bimodal_width;
  return 1.0 * std::exp(-(a + 1.0) * (a + 1.0) / s2) + 1.5 * std::exp(-(a - 1.0) * (a - 1.0) / s2);
}

class Bimodal final : public Environment {
 public:
  Bimodal() {
    spec_.name = "bimodal";
    spec_.state_dim = 1;
    spec_.action_dim = 1;
    spec_.box = ActionBox::uniform(1, -2.0, 2.0);
    spec_.max_steps = 1;
    spec_.gamma = 0.99;
  }
  const EnvSpec& spec() const override { return spec_; }
  using Environment::reset;
  Vec reset(Rng&) override { return observation(); }
  StepResult step(const Vec& action) override {
    require(action.size() == 1, "bimodal: action must be scalar");
    return {observation(), bimodal_reward(action(0)), true, true};
  }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<Bimodal>(*this); }

  static Vec observation() { return Vec::Zero(1); }

 private:
  EnvSpec spec_;
};

// ---- Pendulum ------------------------------------------------------------

struct PendulumState {
  double angle = 0.0;     // 0 is upright
  double velocity = 0.0;
};

struct PendulumParams {
  double g = 10.0;
  double m = 1.0;
  double l = 1.0;
  double dt = 0.05;
  double max_speed = 8.0;
  double max_torque = 2.0;
};

inline double wrap_angle(double x) {
  constexpr double pi = std::numbers::pi;
  x = std::fmod(x + pi, 2.0 * pi);
  if (x < 0.0) x += 2.0 * pi;
  return x - pi;
}

inline double pendulum_reward(const PendulumState& s, double torque) {
  const double th = wrap_angle(s.angle);
  return -(th * th + 0.1 * s.velocity * s.velocity + 0.001 * torque * torque);
}

// Semi-implicit Euler: velocity first, then angle with the new velocity.
// The reward is charged on the pre-step state.
inline std::pair<PendulumState, double> pendulum_dynamics(const PendulumState& s, double torque,
                                                          const PendulumParams& p = {}) {
  const double u = std::clamp(torque, -p.max_torque, p.max_torque);
  const double reward = pendulum_reward(s, u);
  const double acc = 3.0 * p.g / (2.0 * p.l) * std::sin(s.angle) + 3.0 / (p.m * p.l * p.l) * u;
  PendulumState next;
  next.velocity = std::clamp(s.velocity + acc * p.dt, -p.max_speed, p.max_speed);
  next.angle = s.angle + next.velocity * p.dt;
  return {next, reward};
}

inline double pendulum_energy(const PendulumState& s, const PendulumParams& p = {}) {
  const double inertia = p.m * p.l * p.l / 3.0;
  return 0.5 * inertia * s.velocity * s.velocity + p.m * p.g * 0.5 * p.l * std::cos(s.angle);
}

class Pendulum final : public Environment {
 public:
  Pendulum() {
    spec_.name = "pendulum";
    spec_.state_dim = 3;
    spec_.action_dim = 1;
    spec_.box = ActionBox::uniform(1, -2.0, 2.0);
    spec_.max_steps = 200;
    spec_.gamma = 0.99;
  }
  const EnvSpec& spec() const override { return spec_; }
  using Environment::reset;

  Vec reset(Rng& rng) override {
    state_.angle = uniform(rng, -std::numbers::pi, std::numbers::pi);
    state_.velocity = uniform(rng, -1.0, 1.0);
    steps_ = 0;
    return observation();
  }

  StepResult step(const Vec& action) override {
    require(action.size() == 1, "pendulum: action must be scalar");
    auto [next, reward] = pendulum_dynamics(state_, action(0), params_);
    state_ = next;
    ++steps_;
    const bool done = steps_ >= spec_.max_steps;
    return {observation(), reward, done, false};
  }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<Pendulum>(*this); }

  Vec observation() const {
    Vec o(3);
    o << std::cos(state_.angle), std::sin(state_.angle), state_.velocity;
    return o;
  }
  const PendulumState& state() const { return state_; }
  void set_state(const PendulumState& s) { state_ = s; steps_ = 0; }
  int steps() const { return steps_; }

 private:
  EnvSpec spec_;
  PendulumParams params_;
  PendulumState state_;
  int steps_ = 0;
};

inline std::unique_ptr<Environment> make_environment(const std::string& name) {
  if (name == "bimodal") return std::make_unique<Bimodal>();
  if (name == "pendulum") return std::make_unique<Pendulum>();
  throw ConfigError("unknown environment: " + name);
}

}  // namespace aexp
