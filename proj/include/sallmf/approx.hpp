#pragma once

// Minimal differentiable function approximation: fixed-topology MLPs with
// reverse-mode gradients and an Adam optimizer. 64-bit floats throughout.

#include "sallmf/core.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sallmf::approx {

enum class Activation : std::uint8_t { LeakyReLU = 0, ReLU = 1, Tanh = 2 };
enum class OutputSquash : std::uint8_t { None = 0, Tanh = 1 };

inline constexpr double kLeakySlope = 0.01;

struct MLPSpec {
  int input_dims = 0;
  int output_dims = 0;
  int hidden_layers = 3;
  int hidden_units = 256;
  Activation activation = Activation::LeakyReLU;
  OutputSquash output_squash = OutputSquash::None;

  int layer_count() const { return hidden_layers + 1; }

  int layer_in(int l) const { return l == 0 ? input_dims : hidden_units; }
  int layer_out(int l) const { return l == hidden_layers ? output_dims : hidden_units; }

  void validate() const {
    if (input_dims < 1 || output_dims < 1 || hidden_layers < 1 || hidden_units < 1) {
      throw std::invalid_argument("MLPSpec dimensions must be positive");
    }
  }

  bool operator==(const MLPSpec&) const = default;
};

// Weight matrices are (out x in); biases are (out). One entry per layer.
struct Parameters {
  std::vector<Mat> weights;
  std::vector<Vec> biases;

  bool shaped_like(const MLPSpec& spec) const {
    if (static_cast<int>(weights.size()) != spec.layer_count()) return false;
    if (weights.size() != biases.size()) return false;
    for (int l = 0; l < spec.layer_count(); ++l) {
      if (weights[static_cast<size_t>(l)].rows() != spec.layer_out(l) ||
          weights[static_cast<size_t>(l)].cols() != spec.layer_in(l) ||
          biases[static_cast<size_t>(l)].size() != spec.layer_out(l)) {
        return false;
      }
    }
    return true;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
    for (const auto& b : biases) n += static_cast<std::size_t>(b.size());
    return n;
  }
};

inline Parameters zeros_like(const MLPSpec& spec) {
  Parameters p;
  for (int l = 0; l < spec.layer_count(); ++l) {
    p.weights.emplace_back(Mat::Zero(spec.layer_out(l), spec.layer_in(l)));
    p.biases.emplace_back(Vec::Zero(spec.layer_out(l)));
  }
  return p;
}

// He-style uniform init, scaled per layer fan-in. Biases start at zero.
inline Parameters he_init(const MLPSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Parameters p;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const double limit = std::sqrt(6.0 / spec.layer_in(l));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Mat w(spec.layer_out(l), spec.layer_in(l));
    for (int i = 0; i < w.rows(); ++i) {
      for (int j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
    }
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(Vec::Zero(spec.layer_out(l)));
  }
  return p;
}

namespace detail {

inline void apply_activation(Mat& z, Activation act) {
  switch (act) {
    case Activation::LeakyReLU:
      z = z.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
      break;
    case Activation::ReLU:
      z = z.cwiseMax(0.0);
      break;
    case Activation::Tanh:
      z = z.array().tanh().matrix();
      break;
  }
}

// Derivative expressed through pre-activation z and activated value a.
inline double activation_grad(double z, double a, Activation act) {
  switch (act) {
    case Activation::LeakyReLU: return z > 0.0 ? 1.0 : kLeakySlope;
    case Activation::ReLU: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: return 1.0 - a * a;
  }
  return 0.0;
}

}  // namespace detail

// Intermediate activations kept for the backward pass. layer_inputs[l] feeds
// layer l; pre_acts[l] is its affine output before the nonlinearity.
struct ForwardTrace {
  std::vector<Mat> layer_inputs;
  std::vector<Mat> pre_acts;
  Mat output;
};

inline ForwardTrace forward_trace(const Parameters& params, const MLPSpec& spec,
                                  const Mat& input) {
  if (input.cols() != spec.input_dims) {
    throw std::invalid_argument("forward: input width does not match spec.input_dims");
  }
  if (!params.shaped_like(spec)) {
    throw std::invalid_argument("forward: parameters do not match spec");
  }
  ForwardTrace trace;
  Mat a = input;
  for (int l = 0; l < spec.layer_count(); ++l) {
    trace.layer_inputs.push_back(a);
    Mat z = a * params.weights[static_cast<size_t>(l)].transpose();
    z.rowwise() += params.biases[static_cast<size_t>(l)].transpose();
    trace.pre_acts.push_back(z);
    if (l < spec.hidden_layers) {
      detail::apply_activation(z, spec.activation);
    } else if (spec.output_squash == OutputSquash::Tanh) {
      z = z.array().tanh().matrix();
    }
    a = std::move(z);
  }
  trace.output = std::move(a);
  return trace;
}

// Rows of `input` are batch samples.
inline Mat forward(const Parameters& params, const MLPSpec& spec, const Mat& input) {
  return forward_trace(params, spec, input).output;
}

struct BackwardResult {
  Parameters grads;
  Mat input_grads;  // d(sum of upstream-weighted outputs)/d(input), batch rows
};

// Gradient of sum(upstream .* output) with respect to parameters and inputs,
// reusing a trace from forward_trace.
inline BackwardResult backward_from_trace(const Parameters& params, const MLPSpec& spec,
                                          const ForwardTrace& trace, const Mat& upstream) {
  if (upstream.rows() != trace.output.rows() || upstream.cols() != trace.output.cols()) {
    throw std::invalid_argument("backward: upstream gradient shape mismatch");
  }
  BackwardResult result;
  result.grads = zeros_like(spec);

  Mat delta;  // gradient wrt the pre-activation of the current layer
  if (spec.output_squash == OutputSquash::Tanh) {
    delta = upstream.cwiseProduct(
        (1.0 - trace.output.array().square()).matrix());
  } else {
    delta = upstream;
  }

  for (int l = spec.layer_count() - 1; l >= 0; --l) {
    const auto lu = static_cast<size_t>(l);
    result.grads.weights[lu].noalias() = delta.transpose() * trace.layer_inputs[lu];
    result.grads.biases[lu] = delta.colwise().sum().transpose();
    Mat da(delta.rows(), spec.layer_in(l));
    da.noalias() = delta * params.weights[lu];
    if (l > 0) {
      const Mat& z = trace.pre_acts[lu - 1];
      Mat act = z;
      detail::apply_activation(act, spec.activation);
      for (int i = 0; i < da.rows(); ++i) {
        for (int j = 0; j < da.cols(); ++j) {
          da(i, j) *= detail::activation_grad(z(i, j), act(i, j), spec.activation);
        }
      }
    }
    delta = std::move(da);
  }
  result.input_grads = std::move(delta);
  return result;
}

inline BackwardResult backward(const Parameters& params, const MLPSpec& spec,
                               const Mat& input, const Mat& upstream) {
  return backward_from_trace(params, spec, forward_trace(params, spec, input), upstream);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  Parameters m;
  Parameters v;
  std::int64_t step = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState create(const MLPSpec& spec, double lr = 3e-4) {
    AdamState s;
    s.m = zeros_like(spec);
    s.v = zeros_like(spec);
    s.lr = lr;
    return s;
  }
};

struct NonFiniteGradient : std::runtime_error {
  int layer;
  explicit NonFiniteGradient(int layer_index)
      : std::runtime_error("non-finite gradient in layer " + std::to_string(layer_index)),
        layer(layer_index) {}
};

inline void adam_step(Parameters& params, const Parameters& grads, AdamState& state) {
  for (size_t l = 0; l < grads.weights.size(); ++l) {
    if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite()) {
      throw NonFiniteGradient(static_cast<int>(l));
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = (state.beta2 * v.array() + (1.0 - state.beta2) * g.array().square()).matrix();
    auto m_hat = m.array() / bc1;
    auto v_hat = v.array() / bc2;
    p = (p.array() - state.lr * m_hat / (v_hat.sqrt() + state.epsilon)).matrix();
  };
  for (size_t l = 0; l < params.weights.size(); ++l) {
    update(params.weights[l], state.m.weights[l], state.v.weights[l], grads.weights[l]);
    update(params.biases[l], state.m.biases[l], state.v.biases[l], grads.biases[l]);
  }
}

// Single learned scalar (e.g. a temperature) with its own Adam accumulators.
struct ScalarAdam {
  double m = 0.0;
  double v = 0.0;
  std::int64_t step = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void update(double& param, double grad) {
    if (!std::isfinite(grad)) throw NonFiniteGradient(0);
    step += 1;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad * grad;
    const double m_hat = m / (1.0 - std::pow(beta1, static_cast<double>(step)));
    const double v_hat = v / (1.0 - std::pow(beta2, static_cast<double>(step)));
    param -= lr * m_hat / (std::sqrt(v_hat) + epsilon);
  }
};

// ---------------------------------------------------------------------------
// Checkpoints: spec + flat parameter array (+ optional Adam state), binary,
// little-endian doubles, bit-exact round trip.

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline constexpr std::uint32_t kCkptMagic = 0x534c4d46;  // "SLMF"
inline constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("checkpoint: unexpected end of file");
  return v;
}

inline void write_params(std::ostream& os, const Parameters& p) {
  for (size_t l = 0; l < p.weights.size(); ++l) {
    os.write(reinterpret_cast<const char*>(p.weights[l].data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(p.weights[l].size())));
    os.write(reinterpret_cast<const char*>(p.biases[l].data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(p.biases[l].size())));
  }
}

inline void read_params(std::istream& is, Parameters& p) {
  for (size_t l = 0; l < p.weights.size(); ++l) {
    is.read(reinterpret_cast<char*>(p.weights[l].data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(p.weights[l].size())));
    is.read(reinterpret_cast<char*>(p.biases[l].data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(p.biases[l].size())));
  }
  if (!is) throw CheckpointError("checkpoint: truncated parameter array");
}

}  // namespace detail

struct Checkpoint {
  MLPSpec spec;
  Parameters params;
  std::optional<AdamState> adam;
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
  detail::write_pod(os, detail::kCkptMagic);
  detail::write_pod(os, detail::kCkptVersion);
  detail::write_pod<std::int32_t>(os, ckpt.spec.input_dims);
  detail::write_pod<std::int32_t>(os, ckpt.spec.output_dims);
  detail::write_pod<std::int32_t>(os, ckpt.spec.hidden_layers);
  detail::write_pod<std::int32_t>(os, ckpt.spec.hidden_units);
  detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(ckpt.spec.activation));
  detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(ckpt.spec.output_squash));
  detail::write_params(os, ckpt.params);
  detail::write_pod<std::uint8_t>(os, ckpt.adam ? 1 : 0);
  if (ckpt.adam) {
    detail::write_pod(os, ckpt.adam->step);
    detail::write_pod(os, ckpt.adam->lr);
    detail::write_pod(os, ckpt.adam->beta1);
    detail::write_pod(os, ckpt.adam->beta2);
    detail::write_pod(os, ckpt.adam->epsilon);
    detail::write_params(os, ckpt.adam->m);
    detail::write_params(os, ckpt.adam->v);
  }
  if (!os) throw CheckpointError("checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
  if (detail::read_pod<std::uint32_t>(is) != detail::kCkptMagic) {
    throw CheckpointError("checkpoint: bad magic in " + path.string());
  }
  if (detail::read_pod<std::uint32_t>(is) != detail::kCkptVersion) {
    throw CheckpointError("checkpoint: unsupported version in " + path.string());
  }
  Checkpoint ckpt;
  ckpt.spec.input_dims = detail::read_pod<std::int32_t>(is);
  ckpt.spec.output_dims = detail::read_pod<std::int32_t>(is);
  ckpt.spec.hidden_layers = detail::read_pod<std::int32_t>(is);
  ckpt.spec.hidden_units = detail::read_pod<std::int32_t>(is);
  ckpt.spec.activation = static_cast<Activation>(detail::read_pod<std::uint8_t>(is));
  ckpt.spec.output_squash = static_cast<OutputSquash>(detail::read_pod<std::uint8_t>(is));
  ckpt.spec.validate();
  ckpt.params = zeros_like(ckpt.spec);
  detail::read_params(is, ckpt.params);
  if (detail::read_pod<std::uint8_t>(is) != 0) {
    AdamState adam = AdamState::create(ckpt.spec);
    adam.step = detail::read_pod<std::int64_t>(is);
    adam.lr = detail::read_pod<double>(is);
    adam.beta1 = detail::read_pod<double>(is);
    adam.beta2 = detail::read_pod<double>(is);
    adam.epsilon = detail::read_pod<double>(is);
    detail::read_params(is, adam.m);
    detail::read_params(is, adam.v);
    ckpt.adam = std::move(adam);
  }
  return ckpt;
}

}  // namespace sallmf::approx
