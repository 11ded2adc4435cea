#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "aexp/env.hpp"

using namespace aexp;

namespace {
constexpr double pi = std::numbers::pi;
}

TEST(BimodalReward, Peaks) {
  EXPECT_NEAR(bimodal_reward(1.0), 1.5, 1e-20);
  EXPECT_NEAR(bimodal_reward(-1.0), 1.0, 1e-20);
  EXPECT_LT(bimodal_reward(0.0), 0.01);
  EXPECT_EQ(bimodal_reward(3.0), bimodal_reward(2.0));
  EXPECT_EQ(bimodal_reward(-7.0), bimodal_reward(-2.0));
}

TEST(BimodalReward, PeakShapesCongruent) {
  for (double x = -0.5; x <= 0.5; x += 0.01)
    EXPECT_NEAR(bimodal_reward(-1.0 + x) * 1.5, bimodal_reward(1.0 + x) * 1.0, 1e-6);
}

TEST(BimodalReward, OptimumOnDenseGrid) {
  double best = -1.0, arg = 0.0;
  for (int i = 0; i <= 400000; ++i) {
    const double a = -2.0 + i * 1e-5;
    if (bimodal_reward(a) > best) {
      best = bimodal_reward(a);
      arg = a;
    }
  }
  EXPECT_NEAR(best, 1.5, 1e-9);
  EXPECT_NEAR(arg, 1.0, 1e-4);
}

TEST(BimodalReward, UniformPolicyValue) {
  // Each bump integrated over [-2, 2] via erf, divided by the box width.
  const double sd = bimodal_width;
  auto bump = [&](double height, double c) {
    const double z = sd * std::sqrt(2.0);
    return height * sd * std::sqrt(2.0 * pi) * 0.5 * (std::erf((2.0 - c) / z) - std::erf((-2.0 - c) / z));
  };
  const double closed = (bump(1.0, -1.0) + bump(1.5, 1.0)) / 4.0;
  EXPECT_NEAR(closed, 2.5 * sd * std::sqrt(2.0 * pi) / 4.0, 1e-6);
  const int n = 40001;
  const double h = 4.0 / (n - 1);
  double trap = 0.0;
  for (int i = 0; i < n; ++i) trap += (i == 0 || i == n - 1 ? 0.5 : 1.0) * h * bimodal_reward(-2.0 + i * h);
  EXPECT_NEAR(trap / 4.0, closed, 1e-9);
  EXPECT_NEAR(closed, 0.31, 0.01);

  Bimodal env;
  Rng rng(3);
  const int episodes = 200000;
  double mean = 0.0;
  for (int i = 0; i < episodes; ++i) {
    env.reset(rng);
    mean += env.step(Vec::Constant(1, uniform(rng, -2.0, 2.0))).reward / episodes;
  }
  EXPECT_NEAR(mean, closed, 0.005);
}

TEST(Bimodal, OneStepEpisodes) {
  Bimodal env;
  Rng rng(1);
  EXPECT_TRUE(env.reset(rng) == Vec::Zero(1));
  for (double a : {-2.0, -1.0, 0.3, 1.0}) {
    const auto r = env.step(Vec::Constant(1, a));
    EXPECT_TRUE(r.done);
    EXPECT_TRUE(r.terminal);
    EXPECT_TRUE(r.obs == Vec::Zero(1));
    EXPECT_EQ(r.reward, bimodal_reward(a));
  }
  EXPECT_THROW(env.step(Vec::Zero(2)), ContractError);
}

TEST(Pendulum, RewardLandmarks) {
  EXPECT_EQ(pendulum_reward({0.0, 0.0}, 0.0), 0.0);
  EXPECT_NEAR(pendulum_reward({pi, 0.0}, 0.0), -pi * pi, 1e-12);
  EXPECT_NEAR(pendulum_reward({pi, 0.0}, 0.0), -9.87, 0.01);
  EXPECT_NEAR(pendulum_reward({2.0 * pi + 0.5, 0.0}, 0.0), -0.25, 1e-12);
}

TEST(Pendulum, RewardBounds) {
  const double lower = -(pi * pi + 0.1 * 64 + 0.001 * 4);
  EXPECT_NEAR(lower, -16.27, 0.005);
  Pendulum env;
  Rng rng(5);
  for (int ep = 0; ep < 20; ++ep) {
    env.reset(rng);
    for (int t = 0; t < 200; ++t) {
      const auto r = env.step(Vec::Constant(1, uniform(rng, -5.0, 5.0)));
      EXPECT_LE(r.reward, 0.0);
      EXPECT_GE(r.reward, lower - 1e-12);
      EXPECT_LE(std::abs(r.obs(2)), 8.0);
    }
  }
}

TEST(Pendulum, DynamicsFormula) {
  const PendulumState s{0.7, -1.3};
  for (double u : {-3.0, -0.5, 0.0, 1.7}) {
    const double cu = std::clamp(u, -2.0, 2.0);
    const double vel = s.velocity + (3.0 * 10.0 / 2.0 * std::sin(s.angle) + 3.0 * cu) * 0.05;
    const auto [next, r] = pendulum_dynamics(s, u);
    EXPECT_NEAR(next.velocity, vel, 1e-15);
    EXPECT_NEAR(next.angle, s.angle + vel * 0.05, 1e-15);
    EXPECT_EQ(r, pendulum_reward(s, cu));
  }
}

TEST(Pendulum, EpisodeStructureAndObservation) {
  Pendulum env;
  Vec obs = env.reset(std::uint64_t{4});
  EXPECT_NEAR(obs(0) * obs(0) + obs(1) * obs(1), 1.0, 1e-12);
  int steps = 0;
  StepResult r;
  do {
    r = env.step(Vec::Zero(1));
    ++steps;
    EXPECT_FALSE(r.terminal);
  } while (!r.done);
  EXPECT_EQ(steps, 200);
  EXPECT_EQ(env.spec().max_steps, 200);
  EXPECT_EQ(env.spec().state_dim, 3);
}

TEST(Pendulum, ResetDeterministicAndInRange) {
  Pendulum a, b;
  EXPECT_TRUE(a.reset(std::uint64_t{11}) == b.reset(std::uint64_t{11}));
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    a.reset(rng);
    EXPECT_LE(std::abs(a.state().velocity), 1.0);
    EXPECT_LE(std::abs(a.state().angle), pi);
  }
  Bimodal m;
  EXPECT_TRUE(m.reset(std::uint64_t{1}) == Vec::Zero(1));
}

TEST(Pendulum, ReplayablePureSteps) {
  Pendulum env;
  env.reset(std::uint64_t{9});
  auto copy = env.clone();
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const Vec u = Vec::Constant(1, uniform(rng, -2, 2));
    const auto x = env.step(u), y = copy->step(u);
    EXPECT_TRUE(x.obs == y.obs);
    EXPECT_EQ(x.reward, y.reward);
  }
}

// Zero torque, speeds below the clip: mean energy change per step over a
// 200-step trajectory, relative to the potential amplitude m g l / 2.
TEST(Pendulum, EnergyDriftPerStep) {
  const PendulumParams p;
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    PendulumState s{uniform(rng, -pi, pi), uniform(rng, -1, 1)};
    const double e0 = pendulum_energy(s, p);
    bool clipped = false;
    for (int t = 0; t < 200; ++t) {
      s = pendulum_dynamics(s, 0.0, p).first;
      clipped = clipped || std::abs(s.velocity) >= p.max_speed;
    }
    if (clipped) continue;
    EXPECT_LT(std::abs(pendulum_energy(s, p) - e0) / 200.0 / (0.5 * p.m * p.g * p.l), 0.01);
  }
}

TEST(Environment, LookupByName) {
  EXPECT_EQ(make_environment("bimodal")->spec().name, "bimodal");
  EXPECT_EQ(make_environment("pendulum")->spec().name, "pendulum");
  EXPECT_THROW(make_environment("hopper"), ConfigError);
}

TEST(WrapAngle, IntoPrincipalRange) {
  EXPECT_NEAR(wrap_angle(3.0 * pi / 2.0), -pi / 2.0, 1e-12);
  EXPECT_NEAR(wrap_angle(-3.0 * pi / 2.0), pi / 2.0, 1e-12);
  EXPECT_NEAR(wrap_angle(0.25), 0.25, 1e-15);
}
