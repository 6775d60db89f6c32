#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "impnet/autograd.hpp"
#include "impnet/layers.hpp"
#include "impnet/ops.hpp"

namespace impnet {

enum class EcaPlacement { after_partition, before_partition };

struct ModelConfig {
  int num_classes = 7;
  int feature_dim = 256;
  bool eca_enabled = true;
  EcaPlacement eca_placement = EcaPlacement::after_partition;
  bool global_head = true;
  /// false: only the global head exists and is supervised.
  bool ensemble = true;
  layers::HeadActivation head_activation = layers::HeadActivation::identity;
  std::optional<int> eca_kernel_override;
  /// Square input side. 128 reproduces the published geometry; smaller
  /// multiples of 16 give reduced-scale variants for tests.
  int input_size = 128;

  static constexpr int kBaseChannels = 192;

  int base_output_size() const { return input_size / 8; }

  int eca_kernel_size() const {
    return eca_kernel_override ? *eca_kernel_override : layers::eca_kernel_size(kBaseChannels);
  }

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid model config: " + what); };
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (feature_dim < 1) fail("feature_dim must be >= 1");
    if (input_size < 16 || input_size % 16 != 0) fail("input_size must be a positive multiple of 16");
    if (!ensemble && !global_head) fail("disabling both the ensemble and the global head leaves no heads");
    const int k = eca_kernel_size();
    if (k < 1 || k % 2 == 0 || k > kBaseChannels) fail("ECA kernel size must be odd and in [1, 192]");
  }

  /// Head identifiers in output order: local quadrants "0".."3", then "global".
  std::vector<std::string> head_ids() const {
    std::vector<std::string> ids;
    if (ensemble) {
      for (int i = 0; i < 4; ++i) ids.push_back(std::to_string(i));
    }
    if (global_head || !ensemble) ids.emplace_back("global");
    return ids;
  }
};

/// Named learnable variables. Names are stable and fully determined by the config.
template <class T>
class ModelParams {
 public:
  using Map = std::map<std::string, Variable<T>>;

  void insert(const std::string& name, Tensor<T> value) {
    if (!entries_.emplace(name, Variable<T>::parameter(std::move(value))).second) {
      throw std::logic_error("duplicate parameter " + name);
    }
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Variable<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }
  Variable<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  void zero_grad() {
    for (auto& [_, v] : entries_) v.zero_grad();
  }

  /// Deep copy with fresh gradient state, optionally at another precision.
  template <class U = T>
  ModelParams<U> clone() const {
    ModelParams<U> out;
    for (const auto& [name, v] : entries_) out.insert(name, v.value().template cast<U>());
    return out;
  }

 private:
  Map entries_;
};

struct ParamCount {
  std::int64_t total = 0;
  std::int64_t base = 0;
  std::int64_t eca = 0;
  std::int64_t heads = 0;
};

template <class T>
ParamCount count_params(const ModelParams<T>& params) {
  ParamCount c;
  for (const auto& [name, v] : params) {
    const auto n = static_cast<std::int64_t>(v.value().size());
    c.total += n;
    if (name.starts_with("base.")) c.base += n;
    else if (name.starts_with("eca.")) c.eca += n;
    else c.heads += n;
  }
  return c;
}

/// Parameter names and shapes implied by a config, in sorted order.
inline std::map<std::string, Shape> param_shapes(const ModelConfig& config) {
  config.validate();
  std::map<std::string, Shape> s;
  auto conv = [&](const std::string& name, int cout, int cin, int k) {
    s[name + ".weight"] = {cout, cin, k, k};
    s[name + ".bias"] = {cout};
  };
  conv("base.conv1", 96, 1, 5);
  for (const char* half : {"conv1", "conv2"}) conv(std::string("base.res2.0.") + half, 96, 48, 3);
  conv("base.conv2a", 96, 48, 1);
  conv("base.conv2", 192, 48, 3);
  for (int b = 0; b < 2; ++b) {
    for (const char* half : {"conv1", "conv2"}) conv("base.res3." + std::to_string(b) + "." + half, 192, 96, 3);
  }
  conv("base.conv3a", 192, 96, 1);
  conv("base.conv3", 384, 96, 3);

  const int c = ModelConfig::kBaseChannels;
  const int dense_out =
      config.head_activation == layers::HeadActivation::mfm ? 2 * config.feature_dim : config.feature_dim;
  for (const auto& id : config.head_ids()) {
    if (config.eca_enabled) s["eca." + id + ".kernel"] = {config.eca_kernel_size()};
    s["head." + id + ".dense.weight"] = {c, dense_out};
    s["head." + id + ".dense.bias"] = {dense_out};
    s["head." + id + ".classifier.weight"] = {config.feature_dim, config.num_classes};
    s["head." + id + ".classifier.bias"] = {config.num_classes};
  }
  return s;
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Fan-in scaled uniform init, bound sqrt(3 / fan_in) (unit-variance
/// preserving; MFM of two such units keeps the second moment). Biases and ECA
/// kernels start at zero.
inline Tensor<float> init_param(const std::string& name, const Shape& shape, std::uint64_t seed) {
  Tensor<float> t(shape);
  const bool is_weight = name.ends_with(".weight");
  if (!is_weight) return t;
  std::int64_t fan_in = 1;
  if (shape.size() == 4) fan_in = static_cast<std::int64_t>(shape[1]) * shape[2] * shape[3];
  else fan_in = shape[0];
  const float bound = static_cast<float>(std::sqrt(3.0 / static_cast<double>(fan_in)));
  const std::uint64_t h = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace detail

/// Deterministic initialization. Each parameter draws from its own stream keyed
/// by (seed, name), so variants sharing a name share its initial value.
inline ModelParams<float> build(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<float> params;
  for (const auto& [name, shape] : param_shapes(config)) params.insert(name, detail::init_param(name, shape, seed));
  return params;
}

/// Named intermediate shapes recorded by forward_base, in execution order.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

namespace detail {

template <class T>
layers::ConvParams<T> conv_params(const ModelParams<T>& p, const std::string& name) {
  return {p.at(name + ".weight"), p.at(name + ".bias")};
}

template <class T>
layers::ResidualBlockParams<T> block_params(const ModelParams<T>& p, const std::string& name) {
  return {conv_params(p, name + ".conv1"), conv_params(p, name + ".conv2")};
}

}  // namespace detail

/// LightCNN-style base: [N, 1, S, S] -> [N, 192, S/8, S/8].
template <class T>
Variable<T> forward_base(const ModelParams<T>& p, Tape<T>& tape, const Variable<T>& x, ShapeTrace* trace = nullptr) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != s[3] || s[2] < 16 || s[2] % 16 != 0) {
    throw std::invalid_argument("forward_base: expected [N, 1, S, S] grayscale input with S a multiple of 16, got " +
                                shape_str(s));
  }
  auto note = [&](const char* name, const Variable<T>& v) {
    if (trace) trace->emplace_back(name, v.shape());
  };
  using detail::block_params;
  using detail::conv_params;

  auto h = ops::conv2d(tape, x, p.at("base.conv1.weight"), p.at("base.conv1.bias"), 1, 2);
  note("conv1", h);
  h = layers::mfm(tape, h);
  note("mfm1", h);
  h = ops::maxpool2(tape, h);
  note("pool1", h);

  h = layers::residual_block(tape, h, block_params(p, "base.res2.0"));
  note("conv2_x", h);
  h = ops::conv2d(tape, h, p.at("base.conv2a.weight"), p.at("base.conv2a.bias"), 1, 0);
  note("conv2a", h);
  h = layers::mfm(tape, h);
  note("mfm2a", h);
  h = ops::conv2d(tape, h, p.at("base.conv2.weight"), p.at("base.conv2.bias"), 1, 1);
  note("conv2", h);
  h = layers::mfm(tape, h);
  note("mfm2", h);
  h = ops::maxpool2(tape, h);
  note("pool2", h);

  for (int b = 0; b < 2; ++b) h = layers::residual_block(tape, h, block_params(p, "base.res3." + std::to_string(b)));
  note("conv3_x", h);
  h = ops::conv2d(tape, h, p.at("base.conv3a.weight"), p.at("base.conv3a.bias"), 1, 0);
  note("conv3a", h);
  h = layers::mfm(tape, h);
  note("mfm3a", h);
  h = ops::conv2d(tape, h, p.at("base.conv3.weight"), p.at("base.conv3.bias"), 1, 1);
  note("conv3", h);
  h = layers::mfm(tape, h);
  note("mfm3", h);
  h = ops::maxpool2(tape, h);
  note("pool3", h);
  return h;
}

/// Non-overlapping quadrants in row-major order: top-left, top-right,
/// bottom-left, bottom-right.
template <class T>
std::array<Variable<T>, 4> partition(Tape<T>& tape, const Variable<T>& f, int expected_size = 16) {
  const auto& s = f.shape();
  if (s.size() != 4 || s[2] != expected_size || s[3] != expected_size || expected_size % 2 != 0) {
    throw std::invalid_argument("partition: expected spatial size " + std::to_string(expected_size) + "x" +
                                std::to_string(expected_size) + ", got " + shape_str(s));
  }
  const int half = expected_size / 2;
  return {ops::crop(tape, f, 0, 0, half, half), ops::crop(tape, f, 0, half, half, half),
          ops::crop(tape, f, half, 0, half, half), ops::crop(tape, f, half, half, half, half)};
}

/// Inverse of partition on plain tensors.
template <class T>
Tensor<T> assemble_quadrants(const std::array<Tensor<T>, 4>& q) {
  const auto& s = q[0].shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor<T> out({n, c, 2 * h, 2 * w});
  for (int k = 0; k < 4; ++k) {
    const int top = (k / 2) * h, left = (k % 2) * w;
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) out.at(i, ch, top + y, left + x) = q[k].at(i, ch, y, x);
  }
  return out;
}

template <class T>
struct ForwardOutput {
  std::vector<Variable<T>> per_head_logits;
  std::vector<Variable<T>> per_head_features;
};

struct ForwardOptions {
  /// Quadrant fed to local head i. Permuting this together with the heads'
  /// parameter blocks leaves the ensemble readout unchanged.
  std::array<int, 4> patch_for_head{0, 1, 2, 3};
  ShapeTrace* trace = nullptr;
};

template <class T>
layers::HeadParams<T> head_params(const ModelParams<T>& p, const ModelConfig& config, const std::string& id) {
  const std::string prefix = "head." + id;
  return {p.at(prefix + ".dense.weight"), p.at(prefix + ".dense.bias"), p.at(prefix + ".classifier.weight"),
          p.at(prefix + ".classifier.bias"), config.head_activation};
}

template <class T>
ForwardOutput<T> forward(const ModelParams<T>& p, const ModelConfig& config, Tape<T>& tape, const Variable<T>& x,
                         const ForwardOptions& options = {}) {
  const int side = x.shape().size() == 4 ? x.shape()[2] : -1;
  if (side != config.input_size) {
    throw std::invalid_argument("forward: input " + shape_str(x.shape()) + " does not match configured input size " +
                                std::to_string(config.input_size));
  }
  auto base = forward_base(p, tape, x, options.trace);
  const int size = config.base_output_size();
  const int half = size / 2;

  ForwardOutput<T> out;
  for (const auto& id : config.head_ids()) {
    Variable<T> patch;
    if (id == "global") {
      patch = config.eca_enabled ? layers::eca(tape, base, p.at("eca.global.kernel")) : base;
    } else {
      const int slot = options.patch_for_head.at(static_cast<std::size_t>(std::stoi(id)));
      const int top = (slot / 2) * half, left = (slot % 2) * half;
      if (!config.eca_enabled) {
        patch = ops::crop(tape, base, top, left, half, half);
      } else if (config.eca_placement == EcaPlacement::after_partition) {
        patch = layers::eca(tape, ops::crop(tape, base, top, left, half, half), p.at("eca." + id + ".kernel"));
      } else {
        // Attention pooled over the whole map, then the quadrant is cut out.
        patch = ops::crop(tape, layers::eca(tape, base, p.at("eca." + id + ".kernel")), top, left, half, half);
      }
    }
    auto h = layers::head(tape, patch, head_params(p, config, id));
    out.per_head_features.push_back(h.features);
    out.per_head_logits.push_back(h.logits);
  }
  return out;
}

/// Mean of per-head softmax probabilities for a batch, [N, K].
template <class T>
Tensor<T> ensemble_probabilities(const ForwardOutput<T>& out) {
  Tensor<T> acc = ops::softmax(out.per_head_logits.front().value());
  for (std::size_t h = 1; h < out.per_head_logits.size(); ++h) {
    const auto p = ops::softmax(out.per_head_logits[h].value());
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i];
  }
  const T inv = T{1} / static_cast<T>(out.per_head_logits.size());
  for (auto& v : acc.data()) v *= inv;
  return acc;
}

/// Class probabilities for one preprocessed image ([1, S, S] or [1, 1, S, S]).
/// With mirror, the prediction for the image and its horizontal flip are averaged.
template <class T>
std::vector<T> predict(const ModelParams<T>& p, const ModelConfig& config, const Tensor<T>& image, bool mirror,
                       const ForwardOptions& options = {}) {
  const int s = config.input_size;
  const Tensor<T> x = image.reshaped({1, 1, s, s});
  auto run = [&](const Tensor<T>& input) {
    Tape<T> tape = Tape<T>::inference();
    return ensemble_probabilities(forward(p, config, tape, Variable<T>::constant(input), options));
  };
  Tensor<T> probs = run(x);
  if (mirror) {
    const Tensor<T> flipped = run(ops::flip_last_axis(x));
    for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = (probs[i] + flipped[i]) / T{2};
  }
  return {probs.data().begin(), probs.data().end()};
}

}  // namespace impnet
