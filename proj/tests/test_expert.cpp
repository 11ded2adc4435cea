#include <gtest/gtest.h>

#include <cmath>

#include "aexp/expert.hpp"

using namespace aexp;

namespace {

const ActionBox box1 = ActionBox::uniform(1, -2.0, 2.0);

struct QuadraticQ {
  Vec peak;
  Vec values(const Mat& a) const { return -((a.colwise() - peak).colwise().squaredNorm()).transpose(); }
  Mat action_grads(const Mat& a) const { return -2.0 * (a.colwise() - peak); }
};

Batch random_batch(Rng& rng, int n, int state_dim, bool terminal) {
  std::vector<Transition> ts;
  for (int i = 0; i < n; ++i) {
    Transition t;
    t.state = Vec::Random(state_dim);
    t.next_state = Vec::Random(state_dim);
    t.action = Vec::Constant(1, uniform(rng, -2, 2));
    t.reward = uniform(rng, -1, 1);
    t.terminal = terminal;
    ts.push_back(t);
  }
  return to_batch(ts);
}

// Target Q network that outputs the constant c.
void make_target_constant(ExpertState& e, double c) {
  auto& last = e.target_q.layers.back();
  last.weight.setZero();
  last.bias.setConstant(c);
}

}  // namespace

TEST(QValue, FreshNetworkSmallAndFinite) {
  auto e = make_expert(3, 200, box1, 0.99, 0.01, 1);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const double q = q_value(e, Vec::Random(3), Vec::Constant(1, uniform(rng, -2, 2)));
    EXPECT_TRUE(std::isfinite(q));
    EXPECT_LT(std::abs(q), 10.0);
  }
  EXPECT_THROW(q_value(e, Vec::Zero(2), Vec::Zero(1)), ContractError);
}

TEST(QValue, BatchMatchesSingleCalls) {
  auto e = make_expert(3, 32, box1, 0.99, 0.01, 2);
  Mat s = Mat::Random(3, 8), a = Mat::Random(1, 8);
  const Vec batch = q_values(e.trunk, e.q, s, a);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(batch(i), q_value(e, s.col(i), a.col(i)), 1e-13);
}

TEST(FusedQ, MatchesFullNetworkAndFiniteDifferences) {
  auto e = make_expert(3, 16, ActionBox::uniform(2, -2, 2), 0.99, 0.01, 3);
  const Vec s = Vec::Random(3);
  const Vec f = trunk_features(e, Mat(s)).col(0);
  FusedQ q(e.q, f);
  Mat a = Mat::Random(2, 5) * 2.0;
  const Vec v = q.values(a);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(v(i), q_value(e, s, a.col(i)), 1e-13);
  const Mat g = q.action_grads(a);
  const double h = 1e-6;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 2; ++j) {
      Mat ap = a.col(i), am = a.col(i);
      ap(j) += h;
      am(j) -= h;
      EXPECT_NEAR(g(j, i), (q.values(ap)(0) - q.values(am)(0)) / (2 * h), 1e-6);
    }
}

TEST(MaxAction, ZeroAscentIsPredominantMode) {
  auto e = make_expert(3, 16, box1, 0.99, 0.01, 4);
  auto a = make_actor(16, {16}, 2, box1, 5);
  const Vec s = Vec::Random(3);
  const Vec mode = predominant_mode(a.mixture(nn::predict(e.trunk, s)));
  EXPECT_TRUE(max_action_estimate(a, e, s, 0) == mode);
  EXPECT_THROW(max_action_estimate(a, e, s, -1), ContractError);
}

TEST(MaxAction, AscentOnQuadraticMovesCloser) {
  const QuadraticQ q{Vec::Constant(1, 0.6)};
  for (double start : {-1.5, 0.0, 0.3, 1.9}) {
    const Vec s = Vec::Constant(1, start);
    const Vec r = ascend_from(s, q, 10, 0.04, box1);
    EXPECT_LT(std::abs(r(0) - 0.6), std::abs(start - 0.6));
  }
}

TEST(QTargets, TerminalAndMyopic) {
  Rng rng(6);
  auto e = make_expert(3, 16, box1, 0.99, 0.01, 6);
  auto a = make_actor(16, {16}, 2, box1, 7);
  std::vector<Transition> ts{{Vec::Random(3), Vec::Zero(1), 1.0, Vec::Random(3), true}};
  EXPECT_EQ(q_targets(to_batch(ts), e, a)(0), 1.0);
  e.gamma = 0.0;
  const Batch b = random_batch(rng, 10, 3, false);
  EXPECT_TRUE(q_targets(b, e, a) == b.rewards);
}

TEST(QTargets, BootstrapFromTargetNetwork) {
  auto e = make_expert(3, 16, box1, 0.99, 0.01, 8);
  auto a = make_actor(16, {16}, 2, box1, 9);
  make_target_constant(e, 1.5);
  std::vector<Transition> ts{{Vec::Random(3), Vec::Zero(1), 0.0, Vec::Random(3), false}};
  EXPECT_NEAR(q_targets(to_batch(ts), e, a)(0), 1.485, 1e-12);
}

TEST(QUpdate, ZeroTdErrorLeavesOnlineWeights) {
  Rng rng(10);
  auto e = make_expert(3, 16, box1, 0.99, 0.01, 10);
  const Batch b = random_batch(rng, 8, 3, false);
  const Vec pred = q_values(e.trunk, e.q, b.states, b.actions);
  const Vec q_before = nn::flatten(e.q), t_before = nn::flatten(e.trunk);
  ASSERT_TRUE(q_update(e, b, pred, 1e-2));
  EXPECT_TRUE(nn::flatten(e.q) == q_before);
  EXPECT_TRUE(nn::flatten(e.trunk) == t_before);
}

TEST(QUpdate, SingleTransitionErrorShrinks) {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(20 + trial);
    auto e = make_expert(3, 32, box1, 0.99, 0.01, 20 + trial);
    const Batch b = random_batch(rng, 1, 3, true);
    const Vec y = b.rewards.array() + 1.0;
    const double before = std::abs(q_values(e.trunk, e.q, b.states, b.actions)(0) - y(0));
    ASSERT_TRUE(q_update(e, b, y, 1e-4));
    EXPECT_LT(std::abs(q_values(e.trunk, e.q, b.states, b.actions)(0) - y(0)), before);
  }
}

TEST(QUpdate, FrozenTargetsWithZeroTau) {
  Rng rng(11);
  auto e = make_expert(3, 16, box1, 0.99, 0.0, 11);
  auto a = make_actor(16, {16}, 2, box1, 12);
  const Batch b = random_batch(rng, 16, 3, false);
  // Target networks do not move.
  const Mat probe_s = Mat::Random(3, 5), probe_a = Mat::Random(1, 5);
  const Vec before = q_values(e.target_trunk, e.target_q, probe_s, probe_a);
  for (int i = 0; i < 5; ++i) ASSERT_TRUE(q_update(e, b, q_targets(b, e, a), 1e-2));
  EXPECT_TRUE(q_values(e.target_trunk, e.target_q, probe_s, probe_a) == before);

  // With a zero observation the trunk output stays zero, so the actor's
  // bootstrap action is fixed and the targets themselves must not move.
  ExpertState frozen = make_expert(1, 16, box1, 0.99, 0.0, 13);
  auto actor = make_actor(16, {16}, 2, box1, 14);
  std::vector<Transition> ts;
  for (int i = 0; i < 4; ++i) ts.push_back({Vec::Zero(1), Vec::Constant(1, 0.1 * i), 0.5, Vec::Zero(1), false});
  const Batch zb = to_batch(ts);
  const Vec y0 = q_targets(zb, frozen, actor);
  ASSERT_TRUE(q_update(frozen, zb, y0, 1e-2));
  EXPECT_TRUE(q_targets(zb, frozen, actor) == y0);
}

TEST(QUpdate, NonFiniteTargetsSkipped) {
  Rng rng(12);
  auto e = make_expert(3, 16, box1, 0.99, 0.01, 12);
  const Batch b = random_batch(rng, 4, 3, true);
  const Vec q_before = nn::flatten(e.q), target_before = nn::flatten(e.target_q);
  Vec y = b.rewards;
  y(2) = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(q_update(e, b, y, 1e-2));
  EXPECT_TRUE(nn::flatten(e.q) == q_before);
  EXPECT_TRUE(nn::flatten(e.target_q) == target_before);
}
