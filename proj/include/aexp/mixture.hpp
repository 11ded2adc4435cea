#pragma once

// Conditional Gaussian-mixture policy heads.
//
// A network emits k*(1+2d) raw values per state, laid out as
//   [ logits (k) | mean pre-activations (k*d) | stdev pre-activations (k*d) ]
// with component i, dimension j of the mean block at k + i*d + j.
// to_mixture squashes them into valid parameters:
//   c = softmax(logits), mu = center + half_width * tanh(.), sigma = exp(tanh(.))
// so every sigma lies in [1/e, e].

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "aexp/errors.hpp"
#include "aexp/rng.hpp"

namespace aexp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct ActionBox {
  Vec low;
  Vec high;

  static ActionBox uniform(int dim, double lo, double hi) {
    return ActionBox{Vec::Constant(dim, lo), Vec::Constant(dim, hi)};
  }
  int dim() const { return static_cast<int>(low.size()); }
  Vec center() const { return 0.5 * (low + high); }
  Vec half_width() const { return 0.5 * (high - low); }
  Vec clip(const Vec& a) const { return a.cwiseMax(low).cwiseMin(high); }
  bool contains(const Vec& a) const {
    return (a.array() >= low.array()).all() && (a.array() <= high.array()).all();
  }
};

constexpr int mixture_head_size(int k, int d) { return k * (1 + 2 * d); }

struct MixtureParams {
  int k = 0;
  int d = 0;
  Vec coef;   // k
  Mat mean;   // d x k
  Mat stdev;  // d x k
  // Pre-activations and box scale, kept for the chain rule.
  Vec raw;
  Vec half_width;
};

inline MixtureParams to_mixture(const Vec& raw, int k, int d, const ActionBox& box) {
  require(k >= 1 && d >= 1, "to_mixture: k and d must be positive");
  require(raw.size() == mixture_head_size(k, d), "to_mixture: raw head size mismatch");
  require(box.dim() == d, "to_mixture: box dimension mismatch");
  if (!raw.allFinite()) throw NumericError("to_mixture: non-finite raw heads");

  MixtureParams m;
  m.k = k;
  m.d = d;
  m.raw = raw;
  m.half_width = box.half_width();
  const Vec logits = raw.head(k);
  const double top = logits.maxCoeff();
  m.coef = (logits.array() - top).exp().matrix();
  m.coef /= m.coef.sum();
  const Vec center = box.center();
  m.mean.resize(d, k);
  m.stdev.resize(d, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < d; ++j) {
      m.mean(j, i) = center(j) + m.half_width(j) * std::tanh(raw(k + i * d + j));
      m.stdev(j, i) = std::exp(std::tanh(raw(k + k * d + i * d + j)));
    }
  return m;
}

// Builds a mixture directly from parameters (tests, theory probes, baselines).
inline MixtureParams make_mixture(const Vec& coef, const Mat& mean, const Mat& stdev) {
  MixtureParams m;
  m.k = static_cast<int>(coef.size());
  m.d = static_cast<int>(mean.rows());
  m.coef = coef / coef.sum();
  m.mean = mean;
  m.stdev = stdev;
  return m;
}

struct ActionSample {
  Vec action;  // clipped to the box, what the environment executes
  Vec draw;    // unclipped Gaussian draw, where the likelihood is evaluated
  int component = 0;
  double log_density = 0.0;
};

namespace detail {

// Per-component log N(a; mu_i, diag sigma_i^2) plus log c_i.
inline Vec component_log_terms(const MixtureParams& m, const Vec& a) {
  constexpr double half_log_2pi = 0.9189385332046727418;
  Vec out(m.k);
  for (int i = 0; i < m.k; ++i) {
    double s = std::log(m.coef(i));
    for (int j = 0; j < m.d; ++j) {
      const double z = (a(j) - m.mean(j, i)) / m.stdev(j, i);
      s += -0.5 * z * z - std::log(m.stdev(j, i)) - half_log_2pi;
    }
    out(i) = s;
  }
  return out;
}

inline double log_sum_exp(const Vec& v) {
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().sum());
}

}  // namespace detail

inline double log_density(const MixtureParams& m, const Vec& a) {
  require(a.size() == m.d, "log_density: action dimension mismatch");
  return detail::log_sum_exp(detail::component_log_terms(m, a));
}

inline std::vector<ActionSample> sample(const MixtureParams& m, Rng& rng, int n,
                                        const ActionBox& box) {
  require(n >= 1, "sample: n must be >= 1");
  std::vector<ActionSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    const double u = uniform(rng, 0.0, 1.0);
    int comp = m.k - 1;
    double acc = 0.0;
    for (int i = 0; i < m.k; ++i) {
      acc += m.coef(i);
      if (u < acc) {
        comp = i;
        break;
      }
    }
    ActionSample as;
    as.component = comp;
    as.draw.resize(m.d);
    for (int j = 0; j < m.d; ++j)
      as.draw(j) = m.mean(j, comp) + m.stdev(j, comp) * standard_normal(rng);
    as.action = box.clip(as.draw);
    as.log_density = log_density(m, as.draw);
    out.push_back(std::move(as));
  }
  return out;
}

/// Gradient of log pi(a) with respect to the raw head outputs, chained
/// through softmax, the tanh-scaled means and the exp(tanh) stdevs.
inline Vec log_density_grad(const MixtureParams& m, const Vec& a) {
  require(a.size() == m.d, "log_density_grad: action dimension mismatch");
  require(m.raw.size() == mixture_head_size(m.k, m.d),
          "log_density_grad: mixture lacks recorded pre-activations");
  const Vec terms = detail::component_log_terms(m, a);
  const double total = detail::log_sum_exp(terms);
  const Vec resp = (terms.array() - total).exp().matrix();  // responsibilities

  const int k = m.k, d = m.d;
  Vec g(mixture_head_size(k, d));
  for (int i = 0; i < k; ++i) g(i) = resp(i) - m.coef(i);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < d; ++j) {
      const double sigma = m.stdev(j, i);
      const double diff = a(j) - m.mean(j, i);
      const double t_mu = std::tanh(m.raw(k + i * d + j));
      const double t_sd = std::tanh(m.raw(k + k * d + i * d + j));
      g(k + i * d + j) = resp(i) * diff / (sigma * sigma) * m.half_width(j) * (1.0 - t_mu * t_mu);
      g(k + k * d + i * d + j) =
          resp(i) * (diff * diff / (sigma * sigma) - 1.0) * (1.0 - t_sd * t_sd);
    }
  if (!g.allFinite()) throw NumericError("log_density_grad: non-finite gradient");
  return g;
}

// Mean of the highest-coefficient component; ties go to the lowest index.
inline Vec predominant_mode(const MixtureParams& m) {
  int best = 0;
  for (int i = 1; i < m.k; ++i)
    if (m.coef(i) > m.coef(best)) best = i;
  return m.mean.col(best);
}

}  // namespace aexp
