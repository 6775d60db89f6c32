#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "impnet/data.hpp"
#include "impnet/model.hpp"
#include "impnet/ops.hpp"

namespace impnet {

struct ParamGroup {
  std::string prefix;
  double lr = 0.0;
  double weight_decay = 0.0;
  bool decay_biases = false;
};

/// The group whose prefix matches `name`; exactly one must match.
inline const ParamGroup& group_for(const std::vector<ParamGroup>& groups, const std::string& name) {
  const ParamGroup* found = nullptr;
  for (const auto& g : groups) {
    if (!name.starts_with(g.prefix)) continue;
    if (found) throw std::invalid_argument("parameter " + name + " matches more than one group");
    found = &g;
  }
  if (!found) throw std::invalid_argument("parameter " + name + " matches no parameter group");
  return *found;
}

struct AdamaxHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamaxState {
  AdamaxHyper hyper;
  std::map<std::string, Tensor<T>> m;  // first moment
  std::map<std::string, Tensor<T>> u;  // exponentially weighted infinity norm
  std::int64_t t = 0;
};

/// One Adamax step over every parameter:
///   theta <- theta - lr * wd * theta           (decoupled decay, per group)
///   m <- b1 m + (1 - b1) g;  u <- max(b2 u, |g|)
///   theta <- theta - lr / (1 - b1^t) * m / (u + eps)
template <class T>
void adamax_step(ModelParams<T>& params, AdamaxState<T>& state, const std::vector<ParamGroup>& groups) {
  for (const auto& [name, v] : params) {
    if (!v.has_grad()) throw std::logic_error("adamax_step: parameter " + name + " has no gradient");
  }
  ++state.t;
  const auto& h = state.hyper;
  const double correction = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  for (auto& [name, v] : params) {
    const ParamGroup& g = group_for(groups, name);
    const bool decays = g.weight_decay != 0.0 && (g.decay_biases || !name.ends_with(".bias"));
    auto& m = state.m.try_emplace(name, v.shape()).first->second;
    auto& u = state.u.try_emplace(name, v.shape()).first->second;
    Tensor<T>& theta = v.mutable_value();
    const Tensor<T>& grad = v.grad();
    const double step = g.lr / correction;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double p = theta[i];
      if (decays) p -= g.lr * g.weight_decay * p;
      const double gi = grad[i];
      const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * gi;
      const double ui = std::max(h.beta2 * static_cast<double>(u[i]), std::abs(gi));
      m[i] = static_cast<T>(mi);
      u[i] = static_cast<T>(ui);
      theta[i] = static_cast<T>(p - step * mi / (ui + h.eps));
    }
  }
}

enum class MirrorTrain {
  none,
  augment,       ///< each sample flipped with probability 0.5
  double_batch,  ///< each sample presented with its flip
};

enum class HeadReduction { sum, mean };

struct TrainConfig {
  int epochs = 1;
  int batch_size = 64;
  /// Chunk size for gradient accumulation inside a batch.
  int micro_batch = 8;
  std::uint64_t seed = 0;
  double lr_base = 0.001;
  double lr_rest = 0.01;
  double weight_decay = 4e-5;
  bool oversample = false;
  MirrorTrain mirror_train = MirrorTrain::augment;
  HeadReduction head_reduction = HeadReduction::sum;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (micro_batch < 1) throw std::invalid_argument("micro_batch must be >= 1");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  }
};

/// base.* at lr_base; ECA kernels (never decayed) and heads at lr_rest.
inline std::vector<ParamGroup> make_param_groups(const TrainConfig& c) {
  return {{"base.", c.lr_base, c.weight_decay}, {"eca.", c.lr_rest, 0.0}, {"head.", c.lr_rest, c.weight_decay}};
}

/// Each head supervised separately: sum (or mean) of per-head cross-entropy.
template <class T>
Variable<T> ensemble_loss(Tape<T>& tape, const ForwardOutput<T>& output, std::span<const int> labels,
                          HeadReduction reduction = HeadReduction::sum) {
  if (output.per_head_logits.empty()) throw std::invalid_argument("ensemble_loss: no heads");
  Variable<T> total = ops::softmax_cross_entropy(tape, output.per_head_logits.front(), labels);
  for (std::size_t h = 1; h < output.per_head_logits.size(); ++h) {
    total = ops::add(tape, total, ops::softmax_cross_entropy(tape, output.per_head_logits[h], labels));
  }
  if (reduction == HeadReduction::mean) {
    total = ops::scale(tape, total, T{1} / static_cast<T>(output.per_head_logits.size()));
  }
  return total;
}

namespace detail {

inline std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace detail

/// One pass over the (optionally oversampled) data with one Adamax step per
/// batch. Returns the sample-weighted mean batch loss. Deterministic given
/// the config seed and epoch index.
inline double train_epoch(ModelParams<float>& params, const ModelConfig& config, AdamaxState<float>& state,
                          const Dataset& data, const TrainConfig& train, int epoch = 0) {
  train.validate();
  if (data.size() == 0) throw std::invalid_argument("train_epoch: empty dataset");
  std::mt19937_64 rng(detail::epoch_seed(train.seed, epoch));
  std::vector<std::size_t> order;
  if (train.oversample) {
    order = oversample_indices(data.records(), rng());
  } else {
    order.resize(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
  }
  const auto groups = make_param_groups(train);
  const int s = config.input_size;
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  std::bernoulli_distribution coin(0.5);

  double weighted = 0.0;
  std::size_t seen = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train.batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train.batch_size));
    struct Sample {
      std::size_t index;
      bool flip;
    };
    std::vector<Sample> batch;
    for (std::size_t i = start; i < end; ++i) {
      switch (train.mirror_train) {
        case MirrorTrain::none: batch.push_back({order[i], false}); break;
        case MirrorTrain::augment: batch.push_back({order[i], coin(rng)}); break;
        case MirrorTrain::double_batch:
          batch.push_back({order[i], false});
          batch.push_back({order[i], true});
          break;
      }
    }

    params.zero_grad();
    double batch_loss = 0.0;
    const auto total = static_cast<double>(batch.size());
    for (std::size_t m0 = 0; m0 < batch.size(); m0 += static_cast<std::size_t>(train.micro_batch)) {
      const std::size_t m1 = std::min(batch.size(), m0 + static_cast<std::size_t>(train.micro_batch));
      const int n = static_cast<int>(m1 - m0);
      Tensor<float> x({n, 1, s, s});
      std::vector<int> labels;
      for (std::size_t k = m0; k < m1; ++k) {
        const auto& img = data.images.at(batch[k].index);
        if (img.size() != plane) {
          throw std::invalid_argument("train_epoch: image " + shape_str(img.shape()) + " does not match input size " +
                                      std::to_string(s));
        }
        const Tensor<float> src = batch[k].flip ? hflip(img) : img;
        std::copy(src.data().begin(), src.data().end(), x.raw() + (k - m0) * plane);
        labels.push_back(data.labels.at(batch[k].index));
      }
      Tape<float> tape;
      const auto out = forward(params, config, tape, Variable<float>::constant(std::move(x)));
      const auto loss = ensemble_loss<float>(tape, out, labels, train.head_reduction);
      const float share = static_cast<float>(n / total);
      tape.backward(ops::scale(tape, loss, share));
      batch_loss += static_cast<double>(loss.value()[0]) * n / total;
    }
    adamax_step(params, state, groups);
    weighted += batch_loss * static_cast<double>(end - start);
    seen += end - start;
  }
  return weighted / static_cast<double>(seen);
}

struct EvalReport {
  double accuracy = 0.0;
  std::vector<std::vector<std::int64_t>> confusion;  // rows true, columns predicted
  std::vector<double> per_class;                     // 0 for classes without samples
};

inline EvalReport make_report(std::span<const int> truth, std::span<const int> predicted, int num_classes) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("make_report: length mismatch");
  if (truth.empty()) throw std::invalid_argument("make_report: no samples");
  EvalReport r;
  r.confusion.assign(static_cast<std::size_t>(num_classes), std::vector<std::int64_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) ++r.confusion.at(truth[i]).at(predicted[i]);
  std::int64_t correct = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto row = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::int64_t{0});
    correct += r.confusion[c][c];
    r.per_class.push_back(row ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(row) : 0.0);
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  return r;
}

/// Index of the largest probability; ties go to the lowest class index.
template <class T>
int argmax(std::span<const T> p) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(p.size()); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best;
}

inline std::vector<int> predict_labels(const ModelParams<float>& params, const ModelConfig& config,
                                       const Dataset& data, bool mirror) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& img : data.images) {
    const auto p = predict(params, config, img, mirror);
    out.push_back(argmax<float>(p));
  }
  return out;
}

inline EvalReport evaluate(const ModelParams<float>& params, const ModelConfig& config, const Dataset& data,
                           bool mirror) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const auto predicted = predict_labels(params, config, data, mirror);
  return make_report(data.labels, predicted, config.num_classes);
}

}  // namespace impnet
