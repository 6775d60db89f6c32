#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "impnet/autograd.hpp"
#include "impnet/ops.hpp"

namespace impnet::layers {

/// Max-feature-map: elementwise max of the two channel halves, [N, 2C, ...] -> [N, C, ...].
template <class T>
Variable<T> mfm(Tape<T>& tape, const Variable<T>& x) {
  return ops::channel_halves_max(tape, x);
}

template <class T>
struct ConvParams {
  Variable<T> weight;  // [Cout, Cin, kh, kw]
  Variable<T> bias;    // [Cout]
};

/// Convolution followed by MFM, the base network's unit of computation.
template <class T>
Variable<T> conv_mfm(Tape<T>& tape, const Variable<T>& x, const ConvParams<T>& p, int stride, int pad) {
  return mfm(tape, ops::conv2d(tape, x, p.weight, p.bias, stride, pad));
}

/// Two 3x3 convolutions, each emitting 2C channels that MFM halves back to C,
/// plus an identity shortcut.
template <class T>
struct ResidualBlockParams {
  ConvParams<T> first;
  ConvParams<T> second;
};

template <class T>
Variable<T> residual_block(Tape<T>& tape, const Variable<T>& x, const ResidualBlockParams<T>& p) {
  const int c = x.shape().size() == 4 ? x.shape()[1] : -1;
  const auto& w1 = p.first.weight.shape();
  const auto& w2 = p.second.weight.shape();
  if (w1[1] != c || w1[0] != 2 * c || w2[1] != c || w2[0] != 2 * c) {
    throw std::invalid_argument("residual_block: input " + shape_str(x.shape()) + " does not match block kernels " +
                                shape_str(w1) + ", " + shape_str(w2));
  }
  auto h = conv_mfm(tape, x, p.first, 1, 1);
  h = conv_mfm(tape, h, p.second, 1, 1);
  return ops::add(tape, x, h);
}

/// Adaptive ECA kernel size: t = int(|(log2 C + 1) / 2|), bumped to the next odd.
inline int eca_kernel_size(int channels) {
  const int t = static_cast<int>(std::abs((std::log2(static_cast<double>(channels)) + 1.0) / 2.0));
  return t % 2 == 1 ? t : t + 1;
}

/// Channel attention weights s = sigmoid(conv1d(GAP(context), kernel)), shape [N, C], in (0, 1).
template <class T>
Variable<T> eca_attention(Tape<T>& tape, const Variable<T>& context, const Variable<T>& kernel) {
  return ops::sigmoid(tape, ops::conv1d_channels(tape, ops::global_avg_pool(tape, context), kernel));
}

/// Efficient channel attention. `context` supplies the pooled statistics and
/// defaults to `x` itself; the weights rescale the channels of `x`.
template <class T>
Variable<T> eca(Tape<T>& tape, const Variable<T>& x, const Variable<T>& kernel, const Variable<T>* context = nullptr) {
  const Variable<T>& ctx = context ? *context : x;
  if (x.shape().size() != 4 || ctx.shape().size() != 4 || x.shape()[1] != ctx.shape()[1] ||
      x.shape()[0] != ctx.shape()[0]) {
    throw std::invalid_argument("eca: input " + shape_str(x.shape()) + " does not match context " +
                                shape_str(ctx.shape()));
  }
  return ops::scale_channels(tape, x, eca_attention(tape, ctx, kernel));
}

enum class HeadActivation {
  identity,
  mfm,  ///< dense emits 2F units, pairwise max reduces to F
};

template <class T>
struct HeadParams {
  Variable<T> dense_weight;       // [C, F] or [C, 2F]
  Variable<T> dense_bias;
  Variable<T> classifier_weight;  // [F, K]
  Variable<T> classifier_bias;
  HeadActivation activation = HeadActivation::identity;
};

template <class T>
struct HeadOutput {
  Variable<T> features;  // [N, F]
  Variable<T> logits;    // [N, K]
};

/// GAP -> dense -> (optional MFM) -> classifier. Spatial size is free, so the
/// same head accepts local and global patches.
template <class T>
HeadOutput<T> head(Tape<T>& tape, const Variable<T>& x, const HeadParams<T>& p) {
  if (x.shape().size() != 4 || x.shape()[1] != p.dense_weight.shape()[0]) {
    throw std::invalid_argument("head: input " + shape_str(x.shape()) + " does not match dense weight " +
                                shape_str(p.dense_weight.shape()));
  }
  auto features = ops::dense(tape, ops::global_avg_pool(tape, x), p.dense_weight, p.dense_bias);
  if (p.activation == HeadActivation::mfm) features = mfm(tape, features);
  auto logits = ops::dense(tape, features, p.classifier_weight, p.classifier_bias);
  return {features, logits};
}

}  // namespace impnet::layers
