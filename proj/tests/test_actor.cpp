#include <gtest/gtest.h>

#include <cmath>

#include "aexp/actor.hpp"

using namespace aexp;

namespace {

const ActionBox box1 = ActionBox::uniform(1, -2.0, 2.0);

struct QuadraticQ {
  Vec peak;
  Vec values(const Mat& a) const { return -((a.colwise() - peak).colwise().squaredNorm()).transpose(); }
  Mat action_grads(const Mat& a) const { return -2.0 * (a.colwise() - peak); }
};

ActorState small_actor(std::uint64_t seed, bool adam = false) {
  return make_actor(3, {6}, 2, box1, seed, adam);
}

Vec random_features(Rng& rng, int n = 3) {
  Vec f(n);
  for (auto& x : f) x = uniform(rng, 0.0, 1.0);
  return f;
}

double mean_log_likelihood(const ActorState& a, const Vec& f, const Mat& points) {
  const auto m = a.mixture(f);
  double s = 0.0;
  for (Eigen::Index i = 0; i < points.cols(); ++i) s += log_density(m, points.col(i));
  return s / static_cast<double>(points.cols());
}

}  // namespace

TEST(CcemStep, DefaultEliteCount) {
  Rng rng(1);
  auto a = small_actor(1);
  const Vec f = random_features(rng);
  const auto step = ccem_state_step(a.slow_mixture(f), a.mixture(f), QuadraticQ{Vec::Ones(1)}, CcemOptions{}, box1, rng);
  EXPECT_EQ(step.elite.h, 6);
  EXPECT_EQ(step.likelihood_points.cols(), 6);
}

TEST(CcemUpdate, SingleSampleFullQuantileRaisesItsLikelihood) {
  Rng rng(2);
  auto a = small_actor(2);
  const Vec f = random_features(rng);
  CcemOptions opt;
  opt.n_samples = 1;
  opt.rho = 1.0;
  Rng peek = rng;
  const auto step = ccem_state_step(a.slow_mixture(f), a.mixture(f), QuadraticQ{Vec::Ones(1)}, opt, box1, peek);
  ASSERT_EQ(step.elite.h, 1);
  const double before = mean_log_likelihood(a, f, step.likelihood_points);
  auto rep = ccem_update(a, Mat(f), [](Eigen::Index) { return QuadraticQ{Vec::Ones(1)}; }, opt, 1e-3, rng);
  ASSERT_TRUE(rep.applied);
  EXPECT_GT(mean_log_likelihood(a, f, step.likelihood_points), before);
}

TEST(CcemUpdate, ZeroLearningRateLeavesActor) {
  Rng rng(3);
  auto a = small_actor(3, true);
  const Vec before = nn::flatten(a.fast);
  ccem_update(a, Mat(random_features(rng)), [](Eigen::Index) { return QuadraticQ{Vec::Zero(1)}; }, CcemOptions{},
              0.0, rng);
  EXPECT_TRUE(nn::flatten(a.fast) == before);
}

TEST(CcemUpdate, EliteLikelihoodNonDecreasingForSmallSteps) {
  int failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(100 + trial);
    auto a = small_actor(500 + trial);
    // slow weights differ from fast ones
    Vec w = nn::flatten(a.slow);
    for (auto& x : w) x += 0.3 * standard_normal(rng);
    nn::unflatten(a.slow, w);
    const Vec f = random_features(rng);
    const QuadraticQ q{Vec::Constant(1, uniform(rng, -2, 2))};
    CcemOptions opt;
    opt.refine = trial % 2 == 1;
    Rng peek = rng;
    const auto step = ccem_state_step(a.slow_mixture(f), a.mixture(f), q, opt, box1, peek);
    const double before = mean_log_likelihood(a, f, step.likelihood_points);
    ccem_update(a, Mat(f), [&](Eigen::Index) { return q; }, opt, 1e-5, rng);
    failures += mean_log_likelihood(a, f, step.likelihood_points) < before;
  }
  EXPECT_EQ(failures, 0);
}

TEST(CcemUpdate, SamplesComeFromSlowWeights) {
  Rng frng(4);
  const Vec f = random_features(frng);
  auto a = small_actor(4);
  auto b = a;
  Vec w = nn::flatten(b.fast);
  for (auto& x : w) x += 1.0;
  nn::unflatten(b.fast, w);
  Rng ra(77), rb(77);
  const QuadraticQ q{Vec::Constant(1, 0.5)};
  const auto sa = ccem_state_step(a.slow_mixture(f), a.mixture(f), q, CcemOptions{}, box1, ra);
  const auto sb = ccem_state_step(b.slow_mixture(f), b.mixture(f), q, CcemOptions{}, box1, rb);
  EXPECT_TRUE(sa.elite.actions == sb.elite.actions);
  EXPECT_FALSE(sa.head_grad == sb.head_grad);
}

TEST(CcemUpdate, BatchDirectionIsMeanOfPerStateDirections) {
  Rng rng(5);
  auto a = small_actor(5);
  Mat fs(3, 4);
  for (int c = 0; c < 4; ++c) fs.col(c) = random_features(rng);
  const QuadraticQ q{Vec::Constant(1, -0.4)};
  Rng r1(9);
  const auto batch = ccem_direction(a, fs, [&](Eigen::Index) { return q; }, CcemOptions{}, r1);
  Rng r2(9);
  Vec sum = Vec::Zero(static_cast<Eigen::Index>(a.fast.param_count()));
  for (int c = 0; c < 4; ++c)
    sum += nn::flatten(ccem_direction(a, Mat(fs.col(c)), [&](Eigen::Index) { return q; }, CcemOptions{}, r2).grad);
  EXPECT_TRUE(nn::flatten(batch.grad).isApprox(sum / 4.0, 1e-12));
}

TEST(CcemUpdate, NonFiniteInputSkipsAndReports) {
  auto a = small_actor(6, true);
  Rng rng(6);
  const Vec before = nn::flatten(a.fast);
  Mat fs = Mat::Constant(3, 1, std::nan(""));
  auto rep = ccem_update(a, fs, [](Eigen::Index) { return QuadraticQ{Vec::Zero(1)}; }, CcemOptions{}, 1e-3, rng);
  EXPECT_FALSE(rep.applied);
  EXPECT_TRUE(nn::flatten(a.fast) == before);
  EXPECT_EQ(a.t, 0);
}

TEST(SlowUpdate, Blends) {
  auto a = small_actor(7);
  Vec w = nn::flatten(a.fast);
  for (auto& x : w) x += 0.5;
  nn::unflatten(a.fast, w);

  auto full = a;
  slow_update(full, 1.0);
  EXPECT_TRUE(nn::flatten(full.slow) == nn::flatten(full.fast));

  auto fixed = full;
  slow_update(fixed, 0.3);
  EXPECT_TRUE(nn::flatten(fixed.slow).isApprox(nn::flatten(full.slow), 1e-15));

  ActorState s;
  s.fast.layers.push_back({Mat::Ones(1, 1), Vec::Zero(1), nn::Activation::linear});
  s.slow.layers.push_back({Mat::Zero(1, 1), Vec::Zero(1), nn::Activation::linear});
  slow_update(s, 0.1);
  EXPECT_DOUBLE_EQ(s.slow.layers[0].weight(0, 0), 0.1);
}

TEST(SlowUpdate, ContractsExactly) {
  auto a = small_actor(8);
  Vec w = nn::flatten(a.fast);
  Rng rng(8);
  for (auto& x : w) x += standard_normal(rng);
  nn::unflatten(a.fast, w);
  const double before = (nn::flatten(a.slow) - nn::flatten(a.fast)).norm();
  slow_update(a, 0.25);
  EXPECT_NEAR((nn::flatten(a.slow) - nn::flatten(a.fast)).norm(), 0.75 * before, 1e-12);
  EXPECT_THROW(slow_update(a, 0.0), ContractError);
  EXPECT_THROW(slow_update(a, 1.5), ContractError);
}

TEST(Schedule, TheoryRatiosAndSampleGrowth) {
  Schedule s;
  s.mode = ScheduleMode::theory;
  for (long t : {0L, 9L, 99L, 9999L}) {
    const auto z = schedule_at(s, t);
    EXPECT_NEAR(z.slow / z.actor, std::pow(1.0 + t, -0.2), 1e-12);
    EXPECT_NEAR(z.expert / z.actor, std::pow(1.0 + t, -0.3), 1e-12);
  }
  // p-series exponents: sum diverges, sum of squares converges
  EXPECT_LE(s.actor_exp, 1.0);
  EXPECT_GT(2.0 * s.actor_exp, 1.0);
  EXPECT_GT(2.0 * s.slow_exp, 1.0);
  EXPECT_GT(2.0 * s.expert_exp, 1.0);
  int prev = 0;
  for (long epoch = 0; epoch < 6; ++epoch) {
    const int n = schedule_at(s, epoch * s.epoch).n_samples;
    EXPECT_GT(n, prev);
    if (prev > 0) EXPECT_GE(static_cast<double>(n) / prev, 1.5);
    prev = n;
    EXPECT_EQ(schedule_at(s, epoch * s.epoch + s.epoch - 1).n_samples, n);
  }
  EXPECT_THROW(schedule_at(s, -1), ContractError);
}

TEST(Schedule, PracticeConstants) {
  const Schedule s;
  for (long t : {0L, 1000L, 100000L}) {
    const auto z = schedule_at(s, t);
    EXPECT_EQ(z.actor, 1e-3);
    EXPECT_EQ(z.expert, 1e-2);
    EXPECT_EQ(z.n_samples, 30);
  }
}

TEST(Project, Clamp) {
  nn::Mlp p;
  p.layers.push_back({(Mat(1, 3) << 0.5, 2.0, -3.0).finished(), Vec::Zero(1), nn::Activation::linear});
  const auto inside = projected(p, 10.0);
  EXPECT_TRUE(nn::flatten(inside) == nn::flatten(p));
  const auto clamped = projected(p, 1.0);
  EXPECT_EQ(clamped.layers[0].weight(0, 1), 1.0);
  EXPECT_EQ(clamped.layers[0].weight(0, 2), -1.0);
  EXPECT_EQ(clamped.layers[0].weight(0, 0), 0.5);
  EXPECT_THROW(projected(p, 0.0), ContractError);
}

TEST(Project, UpdatesStayInsideSmallRadius) {
  auto a = small_actor(9, false);
  a.w_max = 0.05;
  project(a.fast, a.w_max);
  project(a.slow, a.w_max);
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    ccem_update(a, Mat(random_features(rng)), [](Eigen::Index) { return QuadraticQ{Vec::Ones(1)}; }, CcemOptions{},
                1.0, rng);
    slow_update(a, 0.5);
    EXPECT_LE(nn::max_abs(a.fast), 0.05);
    EXPECT_LE(nn::max_abs(a.slow), 0.05);
  }
}
