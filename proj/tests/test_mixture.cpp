#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "aexp/mixture.hpp"

using namespace aexp;

namespace {

const ActionBox box2 = ActionBox::uniform(1, -2.0, 2.0);

// Direct density: sum_i c_i prod_j N(a_j; mu_ij, sigma_ij^2), no log-sum-exp.
double direct_density(const MixtureParams& m, const Vec& a) {
  double p = 0.0;
  for (int i = 0; i < m.k; ++i) {
    double q = m.coef(i);
    for (int j = 0; j < m.d; ++j) {
      const double s = m.stdev(j, i), z = (a(j) - m.mean(j, i)) / s;
      q *= std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * std::numbers::pi));
    }
    p += q;
  }
  return p;
}

MixtureParams random_mixture(Rng& rng, int k, int d, double spread = 2.0) {
  Vec raw(mixture_head_size(k, d));
  for (auto& r : raw) r = uniform(rng, -spread, spread);
  return to_mixture(raw, k, d, ActionBox::uniform(d, -2.0, 2.0));
}

}  // namespace

TEST(ToMixture, EqualLogitsGiveUniformCoefficients) {
  Vec raw = Vec::Zero(mixture_head_size(2, 1));
  raw(0) = raw(1) = 3.7;
  const auto m = to_mixture(raw, 2, 1, box2);
  EXPECT_DOUBLE_EQ(m.coef(0), 0.5);
  EXPECT_DOUBLE_EQ(m.coef(1), 0.5);
}

TEST(ToMixture, StdevSaturatesAtE) {
  Vec raw = Vec::Zero(mixture_head_size(1, 1));
  raw(2) = 1e6;
  EXPECT_NEAR(to_mixture(raw, 1, 1, box2).stdev(0, 0), 2.71828, 1e-5);
  raw(2) = -1e6;
  EXPECT_NEAR(to_mixture(raw, 1, 1, box2).stdev(0, 0), std::exp(-1.0), 1e-15);
}

TEST(ToMixture, ZeroMeanPreActivationIsBoxCenter) {
  const auto m = to_mixture(Vec::Zero(mixture_head_size(2, 1)), 2, 1, box2);
  EXPECT_EQ(m.mean(0, 0), 0.0);
  EXPECT_EQ(m.mean(0, 1), 0.0);
}

TEST(ToMixture, RejectsNonFiniteAndWrongSize) {
  Vec raw = Vec::Zero(mixture_head_size(2, 1));
  raw(3) = std::nan("");
  EXPECT_THROW(to_mixture(raw, 2, 1, box2), NumericError);
  EXPECT_THROW(to_mixture(Vec::Zero(4), 2, 1, box2), ContractError);
}

TEST(ToMixture, InvariantsHoldForArbitraryHeads) {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 1 + trial % 4, d = 1 + trial % 3;
    const auto m = random_mixture(rng, k, d, 50.0);
    const ActionBox box = ActionBox::uniform(d, -2.0, 2.0);
    EXPECT_NEAR(m.coef.sum(), 1.0, 1e-12);
    EXPECT_TRUE((m.coef.array() > 0.0).all());
    for (int i = 0; i < k; ++i) EXPECT_TRUE(box.contains(m.mean.col(i)));
    EXPECT_GE(m.stdev.minCoeff(), std::exp(-1.0));
    EXPECT_LE(m.stdev.maxCoeff(), std::exp(1.0));
  }
}

TEST(Sample, NarrowGaussianMeanWithinClt) {
  Vec raw = Vec::Zero(mixture_head_size(1, 1));
  raw(2) = -1e6;  // sigma = 1/e
  const auto m = to_mixture(raw, 1, 1, box2);
  Rng rng(17);
  const int n = 100000;
  const auto s = sample(m, rng, n, box2);
  double mean = 0.0;
  for (const auto& x : s) mean += x.action(0) / n;
  EXPECT_LT(std::abs(mean), 3.0 * std::exp(-1.0) / std::sqrt(static_cast<double>(n)));
}

TEST(Sample, DegenerateCoefficientsUseOneComponent) {
  Mat mean(1, 2), sd(1, 2);
  mean << -1.0, 1.0;
  sd << 0.5, 0.5;
  Vec c(2);
  c << 1.0, 0.0;
  const auto m = make_mixture(c, mean, sd);
  Rng rng(3);
  for (const auto& s : sample(m, rng, 2000, box2)) EXPECT_EQ(s.component, 0);
}

TEST(Sample, DeterministicAndClipped) {
  Rng r(1);
  const auto m = random_mixture(r, 2, 2);
  const ActionBox box = ActionBox::uniform(2, -2.0, 2.0);
  Rng a(99), b(99);
  const auto sa = sample(m, a, 50, box), sb = sample(m, b, 50, box);
  for (int i = 0; i < 50; ++i) {
    EXPECT_TRUE(sa[i].action == sb[i].action);
    EXPECT_TRUE(box.contains(sa[i].action));
    EXPECT_TRUE(sa[i].action == box.clip(sa[i].draw));
    EXPECT_DOUBLE_EQ(sa[i].log_density, log_density(m, sa[i].draw));
  }
  EXPECT_THROW(sample(m, a, 0, box), ContractError);
}

TEST(LogDensity, StandardNormalPeak) {
  Mat mean = Mat::Zero(1, 1), sd = Mat::Ones(1, 1);
  const auto m = make_mixture(Vec::Ones(1), mean, sd);
  EXPECT_NEAR(log_density(m, Vec::Zero(1)), -0.5 * std::log(2.0 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(log_density(m, Vec::Zero(1)), -0.9189, 1e-4);
}

TEST(LogDensity, IdenticalComponentsCollapse) {
  Mat mean(1, 2), sd(1, 2);
  mean << 0.3, 0.3;
  sd << 0.8, 0.8;
  const auto two = make_mixture(Vec::Constant(2, 0.5), mean, sd);
  const auto one = make_mixture(Vec::Ones(1), mean.leftCols(1), sd.leftCols(1));
  Vec a(1);
  a << -0.4;
  EXPECT_NEAR(log_density(two, a), log_density(one, a), 1e-14);
}

TEST(LogDensity, MatchesDirectFormula) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + trial % 3, d = 1 + trial % 2;
    const auto m = random_mixture(rng, k, d);
    Vec a(d);
    for (auto& x : a) x = uniform(rng, -3.0, 3.0);
    EXPECT_NEAR(log_density(m, a), std::log(direct_density(m, a)), 1e-10);
  }
}

TEST(LogDensity, IntegratesToOne) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_mixture(rng, 1 + trial % 3, 1);
    const int n = 20001;
    const double h = 20.0 / (n - 1);
    double integral = 0.0;
    for (int i = 0; i < n; ++i) {
      Vec a(1);
      a << -10.0 + i * h;
      integral += (i == 0 || i == n - 1 ? 0.5 : 1.0) * h * std::exp(log_density(m, a));
    }
    EXPECT_NEAR(integral, 1.0, 1e-3);
  }
}

TEST(LogDensityGrad, ZeroMeanGradientAtMean) {
  Rng rng(2);
  const auto m = random_mixture(rng, 1, 2);
  const Vec g = log_density_grad(m, m.mean.col(0));
  EXPECT_EQ(g(1), 0.0);
  EXPECT_EQ(g(2), 0.0);
}

TEST(LogDensityGrad, MatchesFiniteDifferences) {
  Rng rng(77);
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + trial % 3, d = 1 + (trial / 3) % 3;
    const ActionBox box = ActionBox::uniform(d, -2.0, 2.0);
    Vec raw(mixture_head_size(k, d));
    for (auto& r : raw) r = uniform(rng, -1.5, 1.5);
    const auto m = to_mixture(raw, k, d, box);
    Vec a(d);
    for (auto& x : a) x = uniform(rng, -2.5, 2.5);
    const Vec g = log_density_grad(m, a);
    for (Eigen::Index i = 0; i < raw.size(); ++i) {
      Vec rp = raw, rm = raw;
      rp(i) += h;
      rm(i) -= h;
      const double fd =
          (log_density(to_mixture(rp, k, d, box), a) - log_density(to_mixture(rm, k, d, box), a)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g(i)) / std::max({1.0, std::abs(fd), std::abs(g(i))}));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(LogDensityGrad, FarComponentHasVanishingGradient) {
  // Component 0 near -1.9, component 1 near +1.9, both narrow.
  Vec raw(mixture_head_size(2, 1));
  raw << 0.0, 0.0, std::atanh(-0.95), std::atanh(0.95), -5.0, -5.0;
  const auto m = to_mixture(raw, 2, 1, box2);
  const Vec g = log_density_grad(m, m.mean.col(0));
  EXPECT_LT(std::abs(g(3)), 1e-9);  // mean of component 1
  EXPECT_LT(std::abs(g(5)), 1e-9);  // stdev of component 1
}

TEST(PredominantMode, ArgmaxAndTieBreak) {
  Mat mean(1, 2), sd = Mat::Ones(1, 2);
  mean << -1.0, 1.0;
  Vec c(2);
  c << 0.7, 0.3;
  EXPECT_EQ(predominant_mode(make_mixture(c, mean, sd))(0), -1.0);
  c << 0.5, 0.5;
  EXPECT_EQ(predominant_mode(make_mixture(c, mean, sd))(0), -1.0);
  EXPECT_EQ(predominant_mode(make_mixture(Vec::Ones(1), mean.leftCols(1), sd.leftCols(1)))(0), -1.0);
}

TEST(PredominantMode, PermutationInvariant) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = random_mixture(rng, 4, 1);
    std::vector<int> perm{3, 1, 0, 2};
    Vec c(4);
    Mat mean(1, 4), sd(1, 4);
    for (int i = 0; i < 4; ++i) {
      c(i) = m.coef(perm[i]);
      mean.col(i) = m.mean.col(perm[i]);
      sd.col(i) = m.stdev.col(perm[i]);
    }
    EXPECT_EQ(predominant_mode(m)(0), predominant_mode(make_mixture(c, mean, sd))(0));
  }
}
