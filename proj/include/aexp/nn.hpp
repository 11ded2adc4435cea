#pragma once

// Dense feedforward networks with exact reverse-mode gradients.
//
// Batches are column-major: an input matrix of shape (in x B) holds B
// samples, one per column. Parameter gradients returned by backward() are
// summed over the batch; callers divide by B when they want a mean.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "aexp/errors.hpp"
#include "aexp/numfmt.hpp"
#include "aexp/rng.hpp"

namespace aexp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace nn {

enum class Activation { relu, tanh, linear };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::linear: return "linear";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "linear") return Activation::linear;
  throw ConfigError("unknown activation: " + s);
}

struct Layer {
  Mat weight;  // out x in
  Vec bias;    // out
  Activation act = Activation::linear;

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

// NetworkParams.
struct Mlp {
  std::vector<Layer> layers;

  int in_dim() const { return layers.front().in_dim(); }
  int out_dim() const { return layers.back().out_dim(); }

  std::vector<int> topology() const {
    std::vector<int> t;
    t.push_back(in_dim());
    for (const auto& l : layers) t.push_back(l.out_dim());
    return t;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }
};

// ParamGrad: shape-congruent with an Mlp's weights and biases.
struct Grad {
  std::vector<Mat> weight;
  std::vector<Vec> bias;

  Grad& operator+=(const Grad& o) {
    for (std::size_t k = 0; k < weight.size(); ++k) {
      weight[k] += o.weight[k];
      bias[k] += o.bias[k];
    }
    return *this;
  }
  Grad& operator*=(double s) {
    for (std::size_t k = 0; k < weight.size(); ++k) {
      weight[k] *= s;
      bias[k] *= s;
    }
    return *this;
  }
  bool all_finite() const {
    for (std::size_t k = 0; k < weight.size(); ++k)
      if (!weight[k].allFinite() || !bias[k].allFinite()) return false;
    return true;
  }
};

inline Grad zeros_like(const Mlp& net) {
  Grad g;
  for (const auto& l : net.layers) {
    g.weight.push_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vec::Zero(l.bias.size()));
  }
  return g;
}

inline bool congruent(const Mlp& a, const Mlp& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    if (a.layers[k].weight.rows() != b.layers[k].weight.rows() ||
        a.layers[k].weight.cols() != b.layers[k].weight.cols())
      return false;
  }
  return true;
}

inline bool congruent(const Mlp& a, const Grad& g) {
  if (a.layers.size() != g.weight.size() || g.bias.size() != g.weight.size()) return false;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    if (a.layers[k].weight.rows() != g.weight[k].rows() ||
        a.layers[k].weight.cols() != g.weight[k].cols() ||
        a.layers[k].bias.size() != g.bias[k].size())
      return false;
  }
  return true;
}

inline bool all_finite(const Mlp& net) {
  for (const auto& l : net.layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

/// Builds a network with the given widths. Weights are uniform in
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
inline Mlp mlp_init(std::span<const int> topology, std::span<const Activation> activations,
                    std::uint64_t seed) {
  if (topology.size() < 2) throw ConfigError("topology needs at least two widths");
  if (activations.size() != topology.size() - 1)
    throw ConfigError("need one activation per layer");
  for (int w : topology)
    if (w <= 0) throw ConfigError("layer widths must be positive");

  Rng rng = named_stream(seed, "mlp_init");
  Mlp net;
  for (std::size_t k = 0; k + 1 < topology.size(); ++k) {
    const int in = topology[k];
    const int out = topology[k + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer layer;
    layer.weight.resize(out, in);
    // Fill row by row so the draw order does not depend on Eigen's storage.
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
    layer.bias = Vec::Zero(out);
    layer.act = activations[k];
    net.layers.push_back(std::move(layer));
  }
  return net;
}

inline Mlp mlp_init(std::initializer_list<int> topology, std::initializer_list<Activation> acts,
                    std::uint64_t seed) {
  std::vector<int> t(topology);
  std::vector<Activation> a(acts);
  return mlp_init(std::span<const int>(t), std::span<const Activation>(a), seed);
}

// Per-layer activations kept by forward(); inputs[k] feeds layer k and
// inputs.back() is the network output.
struct Trace {
  std::vector<Mat> inputs;
  std::vector<Mat> pre;

  const Mat& output() const { return inputs.back(); }
};

namespace detail {

inline void apply_activation(Activation act, Mat& z) {
  switch (act) {
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::tanh: z = z.array().tanh().matrix(); break;
    case Activation::linear: break;
  }
}

}  // namespace detail

inline Trace forward(const Mlp& net, const Mat& input) {
  if (net.layers.empty()) throw ContractError("forward: empty network");
  if (input.rows() != net.in_dim()) throw ContractError("forward: input dimension mismatch");
  Trace tr;
  tr.inputs.reserve(net.layers.size() + 1);
  tr.pre.reserve(net.layers.size());
  tr.inputs.push_back(input);
  for (const auto& l : net.layers) {
    Mat z = l.weight * tr.inputs.back();
    z.colwise() += l.bias;
    tr.pre.push_back(z);
    detail::apply_activation(l.act, z);
    tr.inputs.push_back(std::move(z));
  }
  return tr;
}

// Forward pass without keeping the trace.
inline Mat predict(const Mlp& net, const Mat& input) {
  if (input.rows() != net.in_dim()) throw ContractError("predict: input dimension mismatch");
  Mat x = input;
  for (const auto& l : net.layers) {
    Mat z = l.weight * x;
    z.colwise() += l.bias;
    detail::apply_activation(l.act, z);
    x = std::move(z);
  }
  return x;
}

inline Vec predict(const Mlp& net, const Vec& input) {
  return predict(net, Mat(input)).col(0);
}

struct Backward {
  Grad grad;
  Mat input_grad;
};

/// Reverse-mode gradients of sum_b <output_grad[:,b], output[:,b]> with
/// respect to the parameters (summed over the batch) and to every input column.
inline Backward backward(const Mlp& net, const Trace& tr, const Mat& output_grad) {
  const std::size_t n = net.layers.size();
  if (tr.pre.size() != n || tr.inputs.size() != n + 1)
    throw ContractError("backward: stale trace (layer count)");
  for (std::size_t k = 0; k < n; ++k) {
    if (tr.pre[k].rows() != net.layers[k].out_dim() ||
        tr.inputs[k].rows() != net.layers[k].in_dim())
      throw ContractError("backward: stale trace (shape)");
  }
  if (output_grad.rows() != net.out_dim() || output_grad.cols() != tr.output().cols())
    throw ContractError("backward: output gradient shape mismatch");

  Backward out;
  out.grad.weight.resize(n);
  out.grad.bias.resize(n);
  Mat delta = output_grad;
  for (std::size_t k = n; k-- > 0;) {
    const Layer& l = net.layers[k];
    switch (l.act) {
      case Activation::relu:
        delta = (tr.pre[k].array() > 0.0).select(delta.array(), 0.0).matrix();
        break;
      case Activation::tanh:
        delta = (delta.array() * (1.0 - tr.inputs[k + 1].array().square())).matrix();
        break;
      case Activation::linear: break;
    }
    out.grad.weight[k].noalias() = delta * tr.inputs[k].transpose();
    out.grad.bias[k] = delta.rowwise().sum();
    Mat prev;
    prev.noalias() = l.weight.transpose() * delta;
    delta = std::move(prev);
  }
  out.input_grad = std::move(delta);
  return out;
}

// OptimizerState for the adaptive-moment update.
struct Adam {
  Grad m;
  Grad v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline Adam make_adam(const Mlp& net) {
  return Adam{zeros_like(net), zeros_like(net)};
}

/// One descent step along `grad` with bias-corrected moments. Rejects
/// non-finite gradients without touching params or state.
inline void adam_step(Adam& opt, Mlp& params, const Grad& grad, double lr) {
  if (!congruent(params, grad) || !congruent(params, opt.m))
    throw ContractError("adam_step: shape mismatch");
  if (!(lr > 0.0)) throw ContractError("adam_step: learning rate must be positive");
  if (!grad.all_finite()) throw NumericError("adam_step: non-finite gradient");
  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  const double b1 = opt.beta1, b2 = opt.beta2, eps = opt.eps;
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    update(params.layers[k].weight, opt.m.weight[k], opt.v.weight[k], grad.weight[k]);
    update(params.layers[k].bias, opt.m.bias[k], opt.v.bias[k], grad.bias[k]);
  }
}

inline void sgd_step(Mlp& params, const Grad& grad, double lr) {
  if (!congruent(params, grad)) throw ContractError("sgd_step: shape mismatch");
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    params.layers[k].weight -= lr * grad.weight[k];
    params.layers[k].bias -= lr * grad.bias[k];
  }
}

// target <- (1 - tau) target + tau online
inline void blend_into(Mlp& target, const Mlp& online, double tau) {
  if (!congruent(target, online)) throw ContractError("soft_update: shape mismatch");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ContractError("soft_update: tau outside [0,1]");
  for (std::size_t k = 0; k < target.layers.size(); ++k) {
    auto& t = target.layers[k];
    const auto& o = online.layers[k];
    t.weight = (1.0 - tau) * t.weight + tau * o.weight;
    t.bias = (1.0 - tau) * t.bias + tau * o.bias;
  }
}

inline Mlp soft_update(const Mlp& target, const Mlp& online, double tau) {
  Mlp out = target;
  blend_into(out, online, tau);
  return out;
}

// Flat views, layer by layer, weights (column-major) then bias.
inline Vec flatten(const Mlp& net) {
  Vec out(static_cast<Eigen::Index>(net.param_count()));
  Eigen::Index i = 0;
  for (const auto& l : net.layers) {
    out.segment(i, l.weight.size()) = l.weight.reshaped();
    i += l.weight.size();
    out.segment(i, l.bias.size()) = l.bias;
    i += l.bias.size();
  }
  return out;
}

inline Vec flatten(const Grad& g) {
  Eigen::Index n = 0;
  for (std::size_t k = 0; k < g.weight.size(); ++k) n += g.weight[k].size() + g.bias[k].size();
  Vec out(n);
  Eigen::Index i = 0;
  for (std::size_t k = 0; k < g.weight.size(); ++k) {
    out.segment(i, g.weight[k].size()) = g.weight[k].reshaped();
    i += g.weight[k].size();
    out.segment(i, g.bias[k].size()) = g.bias[k];
    i += g.bias[k].size();
  }
  return out;
}

inline void unflatten(Mlp& net, const Vec& flat) {
  if (flat.size() != static_cast<Eigen::Index>(net.param_count()))
    throw ContractError("unflatten: size mismatch");
  Eigen::Index i = 0;
  for (auto& l : net.layers) {
    l.weight.reshaped() = flat.segment(i, l.weight.size());
    i += l.weight.size();
    l.bias = flat.segment(i, l.bias.size());
    i += l.bias.size();
  }
}

inline double max_abs(const Mlp& net) {
  double m = 0.0;
  for (const auto& l : net.layers) {
    m = std::max(m, l.weight.cwiseAbs().maxCoeff());
    if (l.bias.size() > 0) m = std::max(m, l.bias.cwiseAbs().maxCoeff());
  }
  return m;
}

// Snapshot record:
//   mlp 1 <layer count>
//   layer <in> <out> <activation>
//   <out*in weights, row-major> <out biases>
// Values use the shortest round-trip decimal form, so a read after a
// write reproduces every weight bit for bit.
inline void write_mlp(std::ostream& os, const Mlp& net) {
  os << "mlp 1 " << net.layers.size() << '\n';
  for (const auto& l : net.layers) {
    os << "layer " << l.in_dim() << ' ' << l.out_dim() << ' ' << to_string(l.act) << '\n';
    for (int r = 0; r < l.out_dim(); ++r) {
      for (int c = 0; c < l.in_dim(); ++c) os << (c ? " " : "") << format_double(l.weight(r, c));
      os << '\n';
    }
    for (int r = 0; r < l.out_dim(); ++r) os << (r ? " " : "") << format_double(l.bias(r));
    os << '\n';
  }
  if (!os) throw IoError("write_mlp: stream failure");
}

inline Mlp read_mlp(std::istream& is) {
  std::string tag;
  int version = 0;
  std::size_t count = 0;
  if (!(is >> tag >> version >> count) || tag != "mlp")
    throw IoError("read_mlp: missing header");
  if (version != 1) throw IoError("read_mlp: unsupported version " + std::to_string(version));
  Mlp net;
  for (std::size_t k = 0; k < count; ++k) {
    int in = 0, out = 0;
    std::string act;
    if (!(is >> tag >> in >> out >> act) || tag != "layer" || in <= 0 || out <= 0)
      throw IoError("read_mlp: bad layer header");
    Layer l;
    l.act = activation_from_string(act);
    l.weight.resize(out, in);
    l.bias.resize(out);
    std::string tok;
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) {
        if (!(is >> tok)) throw IoError("read_mlp: truncated weights");
        l.weight(r, c) = parse_double(tok);
      }
    for (int r = 0; r < out; ++r) {
      if (!(is >> tok)) throw IoError("read_mlp: truncated biases");
      l.bias(r) = parse_double(tok);
    }
    if (!net.layers.empty() && net.layers.back().out_dim() != in)
      throw IoError("read_mlp: adjacent layer widths disagree");
    net.layers.push_back(std::move(l));
  }
  return net;
}

}  // namespace nn
}  // namespace aexp
