#pragma once

// Small fully connected network with rectifier hidden units and a linear
// output layer, trained with MAE loss and Adam.

#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sybilsim/common.hpp"

namespace sybilsim {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weights;  // outputs x inputs, row-major
  std::vector<double> bias;     // outputs

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out)
      : inputs(in), outputs(out), weights(in * out, 0.0), bias(out, 0.0) {}

  double& w(std::size_t row, std::size_t col) { return weights[row * inputs + col]; }
  double w(std::size_t row, std::size_t col) const { return weights[row * inputs + col]; }

  bool operator==(const DenseLayer&) const = default;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  MlpParams() = default;
  explicit MlpParams(const std::vector<std::size_t>& sizes) {
    if (sizes.size() < 2) throw ShapeError("MlpParams: need at least input and output sizes");
    for (std::size_t s : sizes)
      if (s == 0) throw ShapeError("MlpParams: zero-width layer");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) layers.emplace_back(sizes[i], sizes[i + 1]);
  }

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().inputs; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().outputs; }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out;
    if (layers.empty()) return out;
    out.push_back(layers.front().inputs);
    for (const auto& l : layers) out.push_back(l.outputs);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  // Flat views in layer order: weights then bias for each layer.
  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    for (auto& l : layers) {
      for (auto& w : l.weights) fn(w);
      for (auto& b : l.bias) fn(b);
    }
  }

  MlpParams zeros_like() const {
    MlpParams z;
    for (const auto& l : layers) z.layers.emplace_back(l.inputs, l.outputs);
    return z;
  }

  bool same_shape(const MlpParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].inputs != other.layers[i].inputs || layers[i].outputs != other.layers[i].outputs)
        return false;
    return true;
  }

  bool operator==(const MlpParams&) const = default;
};

inline constexpr std::size_t kHiddenUnits = 24;

// Input, two hidden layers of 24 rectifier units, linear output.
inline MlpParams make_q_network(std::size_t input_dim, std::size_t output_dim, std::uint64_t seed) {
  MlpParams p({input_dim, kHiddenUnits, kHiddenUnits, output_dim});
  std::mt19937_64 rng(seed);
  for (auto& l : p.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.inputs));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : l.weights) w = dist(rng);
    for (auto& b : l.bias) b = dist(rng);
  }
  return p;
}

// Pre-activations and activations of every layer from one forward pass.
struct ForwardCache {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> act;  // act[0] is the input
};

inline void forward(const MlpParams& p, std::span<const double> x, ForwardCache& cache) {
  if (p.layers.empty()) throw ShapeError("forward: empty network");
  if (x.size() != p.input_dim())
    throw ShapeError("forward: input has " + std::to_string(x.size()) + " entries, network expects " +
                     std::to_string(p.input_dim()));
  const std::size_t depth = p.layers.size();
  cache.pre.resize(depth);
  cache.act.resize(depth + 1);
  cache.act[0].assign(x.begin(), x.end());
  for (std::size_t li = 0; li < depth; ++li) {
    const auto& l = p.layers[li];
    const auto& in = cache.act[li];
    auto& z = cache.pre[li];
    auto& a = cache.act[li + 1];
    z.resize(l.outputs);
    a.resize(l.outputs);
    const bool hidden = li + 1 < depth;
    for (std::size_t r = 0; r < l.outputs; ++r) {
      double sum = l.bias[r];
      const double* row = &l.weights[r * l.inputs];
      for (std::size_t c = 0; c < l.inputs; ++c) sum += row[c] * in[c];
      z[r] = sum;
      a[r] = hidden ? (sum > 0.0 ? sum : 0.0) : sum;
    }
  }
}

inline std::vector<double> forward(const MlpParams& p, std::span<const double> x) {
  ForwardCache cache;
  forward(p, x, cache);
  return cache.act.back();
}

struct MaeResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d pred
};

inline MaeResult mae_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ShapeError("mae_loss: length mismatch");
  if (pred.empty()) throw ShapeError("mae_loss: empty input");
  MaeResult out;
  out.grad.resize(pred.size());
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double diff = pred[i] - target[i];
    out.loss += std::abs(diff);
    out.grad[i] = diff > 0.0 ? 1.0 / n : (diff < 0.0 ? -1.0 / n : 0.0);
  }
  out.loss /= n;
  return out;
}

// Accumulates d(output . upstream)/d(params) into `grads` using a cache filled
// by forward() on the same params.
inline void backward_accumulate(const MlpParams& p, const ForwardCache& cache,
                                std::span<const double> upstream, MlpParams& grads) {
  if (upstream.size() != p.output_dim()) throw ShapeError("backward: upstream gradient length mismatch");
  if (!grads.same_shape(p)) throw ShapeError("backward: gradient buffer shape mismatch");
  if (cache.act.size() != p.layers.size() + 1) throw ShapeError("backward: stale forward cache");
  std::vector<double> delta(upstream.begin(), upstream.end());
  std::vector<double> prev;
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& l = p.layers[li];
    auto& g = grads.layers[li];
    const auto& in = cache.act[li];
    for (std::size_t r = 0; r < l.outputs; ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      g.bias[r] += d;
      double* row = &g.weights[r * l.inputs];
      for (std::size_t c = 0; c < l.inputs; ++c) row[c] += d * in[c];
    }
    if (li == 0) break;
    prev.assign(l.inputs, 0.0);
    for (std::size_t r = 0; r < l.outputs; ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      const double* row = &l.weights[r * l.inputs];
      for (std::size_t c = 0; c < l.inputs; ++c) prev[c] += d * row[c];
    }
    const auto& z = cache.pre[li - 1];
    for (std::size_t c = 0; c < l.inputs; ++c)
      if (!(z[c] > 0.0)) prev[c] = 0.0;
    delta.swap(prev);
  }
}

inline MlpParams backward(const MlpParams& p, std::span<const double> x, std::span<const double> upstream) {
  ForwardCache cache;
  forward(p, x, cache);
  MlpParams grads = p.zeros_like();
  backward_accumulate(p, cache, upstream, grads);
  return grads;
}

struct AdamState {
  MlpParams m;
  MlpParams v;
  std::int64_t step = 0;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(const MlpParams& shape, double lr = 0.01)
      : m(shape.zeros_like()), v(shape.zeros_like()), learning_rate(lr) {}

  bool operator==(const AdamState&) const = default;
};

// Bias-corrected Adam update.
inline void adam_step(MlpParams& params, const MlpParams& grads, AdamState& s) {
  if (!params.same_shape(grads) || !params.same_shape(s.m) || !params.same_shape(s.v))
    throw ShapeError("adam_step: shape mismatch");
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    auto update = [&](std::vector<double>& w, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        w[i] -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
      }
    };
    auto& L = params.layers[li];
    const auto& G = grads.layers[li];
    update(L.weights, G.weights, s.m.layers[li].weights, s.v.layers[li].weights);
    update(L.bias, G.bias, s.m.layers[li].bias, s.v.layers[li].bias);
  }
}

// Text snapshot:
//   sybilsim-mlp 1
//   <layer count + 1> <size0> <size1> ...
//   per layer: one line of row-major weights, one line of biases
// Values use shortest round-trip formatting.
inline constexpr const char* kSnapshotMagic = "sybilsim-mlp";
inline constexpr int kSnapshotVersion = 1;

inline void save_snapshot(const MlpParams& p, std::ostream& out) {
  const auto sizes = p.sizes();
  out << kSnapshotMagic << ' ' << kSnapshotVersion << '\n' << sizes.size();
  for (auto s : sizes) out << ' ' << s;
  out << '\n';
  auto line = [&out](const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) out << (i ? " " : "") << format_double(values[i]);
    out << '\n';
  };
  for (const auto& l : p.layers) {
    line(l.weights);
    line(l.bias);
  }
}

inline MlpParams load_snapshot(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kSnapshotMagic)
    throw std::runtime_error("load_snapshot: not a weight snapshot");
  if (version != kSnapshotVersion)
    throw std::runtime_error("load_snapshot: unsupported version " + std::to_string(version));
  std::size_t count = 0;
  if (!(in >> count) || count < 2) throw std::runtime_error("load_snapshot: bad layer count");
  std::vector<std::size_t> sizes(count);
  for (auto& s : sizes)
    if (!(in >> s)) throw std::runtime_error("load_snapshot: truncated layer sizes");
  MlpParams p(sizes);
  std::string token;
  auto read = [&](std::vector<double>& values) {
    for (auto& v : values) {
      if (!(in >> token)) throw std::runtime_error("load_snapshot: truncated values");
      v = parse_double(token);
    }
  };
  for (auto& l : p.layers) {
    read(l.weights);
    read(l.bias);
  }
  return p;
}

}  // namespace sybilsim
