#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "impnet/autograd.hpp"
#include "impnet/conv.hpp"
#include "impnet/gemm.hpp"
#include "impnet/tensor.hpp"

namespace impnet::ops {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

inline void require_rank(const Shape& s, int rank, const char* op) {
  require(static_cast<int>(s.size()) == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

/// Winograd variants apply to 3x3 kernels with stride 1 and pad 1; other
/// geometries always run im2col.
enum class ConvAlgo {
  automatic,  ///< single precision: F(4x4,3x3) on maps >= 48x48, else F(2x2,3x3)
  im2col,
  winograd_f23,
  winograd_f43,
};

/// 2-D cross-correlation with zero padding.
/// x [N, Cin, H, W], kernel [Cout, Cin, kh, kw], bias [Cout] -> [N, Cout, H', W'].
template <class T>
Variable<T> conv2d(Tape<T>& tape, const Variable<T>& x, const Variable<T>& kernel, const Variable<T>& bias,
                   int stride, int pad, ConvAlgo algo = ConvAlgo::automatic) {
  using detail::require;
  detail::require_rank(x.shape(), 4, "conv2d input");
  detail::require_rank(kernel.shape(), 4, "conv2d kernel");
  detail::require_rank(bias.shape(), 1, "conv2d bias");
  const int n = x.shape()[0];
  const int cout = kernel.shape()[0];
  conv::Geometry g{x.shape()[1], x.shape()[2], x.shape()[3], kernel.shape()[2], kernel.shape()[3], stride, pad};
  require(kernel.shape()[1] == g.channels, "conv2d: input has " + std::to_string(g.channels) +
                                               " channels but kernel expects " + std::to_string(kernel.shape()[1]));
  require(bias.shape()[0] == cout, "conv2d: bias length does not match output channels");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(pad >= 0, "conv2d: pad must be >= 0");
  require(g.kernel_h <= g.height + 2 * pad && g.kernel_w <= g.width + 2 * pad, "conv2d: kernel larger than input");
  require((g.height + 2 * pad - g.kernel_h) % stride == 0 && (g.width + 2 * pad - g.kernel_w) % stride == 0,
          "conv2d: non-integer output size for input " + shape_str(x.shape()));

  const int oh = g.out_h();
  const int ow = g.out_w();
  Tensor<T> out({n, cout, oh, ow}, uninitialized);
  const bool winograd_ok = g.kernel_h == 3 && g.kernel_w == 3 && stride == 1 && pad == 1;
  if (winograd_ok && algo == ConvAlgo::automatic && std::is_same_v<T, float>) {
    algo = g.height * g.width >= 48 * 48 ? ConvAlgo::winograd_f43 : ConvAlgo::winograd_f23;
  }
  if (winograd_ok && algo == ConvAlgo::winograd_f23) {
    conv::forward_winograd_f23(x.value().raw(), n, g.channels, g.height, g.width, kernel.value().raw(),
                               bias.value().raw(), cout, out.raw());
  } else if (winograd_ok && algo == ConvAlgo::winograd_f43) {
    conv::forward_winograd_f43(x.value().raw(), n, g.channels, g.height, g.width, kernel.value().raw(),
                               bias.value().raw(), cout, out.raw());
  } else {
    conv::forward_im2col(x.value().raw(), n, g, kernel.value().raw(), bias.value().raw(), cout, out.raw());
  }

  return tape.emit(std::move(out), {x, kernel, bias}, [x, kernel, bias, g, n, cout](const Tensor<T>& gy) {
    const int spatial = g.out_h() * g.out_w();
    const int patch = g.patch_size();
    const std::size_t in_stride = static_cast<std::size_t>(g.channels) * g.height * g.width;
    const std::size_t out_stride = static_cast<std::size_t>(cout) * spatial;
    const std::size_t col_size = static_cast<std::size_t>(patch) * spatial;
    T* col = g.is_pointwise() ? nullptr : conv::scratch<T>(conv::kBackwardCol, col_size);
    T* dcol = g.is_pointwise() ? nullptr : conv::scratch<T>(conv::kBackwardDcol, col_size);
    for (int i = 0; i < n; ++i) {
      const T* gyi = gy.raw() + i * out_stride;
      if (kernel.requires_grad()) {
        const T* cols = x.value().raw() + i * in_stride;
        if (col) {
          conv::im2col(cols, g, col);
          cols = col;
        }
        gemm::matmul_bt(gyi, cols, kernel.grad_buffer().raw(), cout, spatial, patch, true);
      }
      if (bias.requires_grad()) {
        T* gb = bias.grad_buffer().raw();
        for (int o = 0; o < cout; ++o) {
          const T* row = gyi + static_cast<std::size_t>(o) * spatial;
          T s{0};
          for (int k = 0; k < spatial; ++k) s += row[k];
          gb[o] += s;
        }
      }
      if (x.requires_grad()) {
        T* gx = x.grad_buffer().raw() + i * in_stride;
        if (g.is_pointwise()) {
          gemm::matmul_at(kernel.value().raw(), gyi, gx, patch, cout, spatial, true);
        } else {
          gemm::matmul_at(kernel.value().raw(), gyi, dcol, patch, cout, spatial, false);
          conv::col2im_add(dcol, g, gx);
        }
      }
    }
  });
}

/// 2x2 max pooling with stride 2; ties resolve to the first element in
/// row-major window order.
template <class T>
Variable<T> maxpool2(Tape<T>& tape, const Variable<T>& x) {
  detail::require_rank(x.shape(), 4, "maxpool2");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  detail::require(h % 2 == 0 && w % 2 == 0, "maxpool2: spatial dims must be even, got " + shape_str(x.shape()));
  const int oh = h / 2, ow = w / 2;
  // Visits every window; fn(output index, input offset of the winner).
  auto scan = [n, c, h, w, oh, ow](const T* src, auto&& fn) {
    std::size_t o = 0;
    for (int plane = 0; plane < n * c; ++plane) {
      const std::size_t base = static_cast<std::size_t>(plane) * h * w;
      for (int y = 0; y < oh; ++y) {
        const std::size_t r0 = base + static_cast<std::size_t>(2 * y) * w;
        const std::size_t r1 = r0 + w;
        for (int xx = 0; xx < ow; ++xx, ++o) {
          std::size_t best = r0 + 2 * xx;
          if (src[r0 + 2 * xx + 1] > src[best]) best = r0 + 2 * xx + 1;
          if (src[r1 + 2 * xx] > src[best]) best = r1 + 2 * xx;
          if (src[r1 + 2 * xx + 1] > src[best]) best = r1 + 2 * xx + 1;
          fn(o, best);
        }
      }
    }
  };
  Tensor<T> out({n, c, oh, ow}, uninitialized);
  const T* src = x.value().raw();
  scan(src, [&](std::size_t o, std::size_t best) { out[o] = src[best]; });
  return tape.emit(std::move(out), {x}, [x, scan](const Tensor<T>& gy) {
    T* gx = x.grad_buffer().raw();
    scan(x.value().raw(), [&](std::size_t o, std::size_t best) { gx[best] += gy[o]; });
  });
}

/// 1-D convolution across the channel axis, zero padded to preserve length.
/// v [N, C], kernel [k] with k odd and k <= C.
template <class T>
Variable<T> conv1d_channels(Tape<T>& tape, const Variable<T>& v, const Variable<T>& kernel) {
  detail::require_rank(v.shape(), 2, "conv1d_channels input");
  detail::require_rank(kernel.shape(), 1, "conv1d_channels kernel");
  const int n = v.shape()[0], c = v.shape()[1], k = kernel.shape()[0];
  detail::require(k % 2 == 1, "conv1d_channels: kernel size must be odd, got " + std::to_string(k));
  detail::require(k <= c, "conv1d_channels: kernel size exceeds channel count");
  const int r = (k - 1) / 2;
  Tensor<T> out({n, c});
  const T* in = v.value().raw();
  const T* kw = kernel.value().raw();
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      T s{0};
      for (int j = 0; j < k; ++j) {
        const int src = ch + j - r;
        if (src >= 0 && src < c) s += kw[j] * in[i * c + src];
      }
      out[static_cast<std::size_t>(i) * c + ch] = s;
    }
  }
  return tape.emit(std::move(out), {v, kernel}, [v, kernel, n, c, k, r](const Tensor<T>& gy) {
    const T* in = v.value().raw();
    const T* kw = kernel.value().raw();
    T* gv = v.requires_grad() ? v.grad_buffer().raw() : nullptr;
    T* gk = kernel.requires_grad() ? kernel.grad_buffer().raw() : nullptr;
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        const T g = gy[static_cast<std::size_t>(i) * c + ch];
        for (int j = 0; j < k; ++j) {
          const int src = ch + j - r;
          if (src < 0 || src >= c) continue;
          if (gv) gv[i * c + src] += kw[j] * g;
          if (gk) gk[j] += in[i * c + src] * g;
        }
      }
    }
  });
}

/// Affine map x [N, D] * weight [D, M] + bias [M].
template <class T>
Variable<T> dense(Tape<T>& tape, const Variable<T>& x, const Variable<T>& weight, const Variable<T>& bias) {
  detail::require_rank(x.shape(), 2, "dense input");
  detail::require_rank(weight.shape(), 2, "dense weight");
  detail::require_rank(bias.shape(), 1, "dense bias");
  const int n = x.shape()[0], d = x.shape()[1], m = weight.shape()[1];
  detail::require(weight.shape()[0] == d, "dense: input dim " + std::to_string(d) + " does not match weight " +
                                              shape_str(weight.shape()));
  detail::require(bias.shape()[0] == m, "dense: bias length does not match output dim");
  Tensor<T> out({n, m});
  gemm::matmul(x.value().raw(), weight.value().raw(), out.raw(), n, d, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) out[static_cast<std::size_t>(i) * m + j] += bias.value()[j];
  }
  return tape.emit(std::move(out), {x, weight, bias}, [x, weight, bias, n, d, m](const Tensor<T>& gy) {
    if (x.requires_grad()) gemm::matmul_bt(gy.raw(), weight.value().raw(), x.grad_buffer().raw(), n, m, d, true);
    if (weight.requires_grad()) gemm::matmul_at(x.value().raw(), gy.raw(), weight.grad_buffer().raw(), d, n, m, true);
    if (bias.requires_grad()) {
      T* gb = bias.grad_buffer().raw();
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) gb[j] += gy[static_cast<std::size_t>(i) * m + j];
      }
    }
  });
}

/// Elementwise maximum; ties route the gradient to `a`.
template <class T>
Variable<T> elemwise_max(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b) {
  detail::require_same(a.shape(), b.shape(), "elemwise_max");
  Tensor<T> out(a.shape(), uninitialized);
  const T* pa = a.value().raw();
  const T* pb = b.value().raw();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] >= pb[i] ? pa[i] : pb[i];
  return tape.emit(std::move(out), {a, b}, [a, b](const Tensor<T>& gy) {
    const T* pa = a.value().raw();
    const T* pb = b.value().raw();
    T* ga = a.requires_grad() ? a.grad_buffer().raw() : nullptr;
    T* gb = b.requires_grad() ? b.grad_buffer().raw() : nullptr;
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (pa[i] >= pb[i]) {
        if (ga) ga[i] += gy[i];
      } else if (gb) {
        gb[i] += gy[i];
      }
    }
  });
}

/// Max of the two halves of axis 1: x [N, 2C, ...] -> [N, C, ...]. Same
/// values and tie rule as elemwise_max over the two channel slices.
template <class T>
Variable<T> channel_halves_max(Tape<T>& tape, const Variable<T>& x) {
  detail::require(x.shape().size() >= 2, "channel_halves_max: expected rank >= 2, got " + shape_str(x.shape()));
  const int channels = x.shape()[1];
  detail::require(channels % 2 == 0, "channel_halves_max: channel count must be even, got " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[1] = channels / 2;
  const std::size_t inner = shape_size(x.shape()) / (static_cast<std::size_t>(x.shape()[0]) * channels);
  const std::size_t half = static_cast<std::size_t>(channels / 2) * inner;
  const int n = x.shape()[0];
  Tensor<T> out(out_shape, uninitialized);
  for (int i = 0; i < n; ++i) {
    const T* lo = x.value().raw() + static_cast<std::size_t>(i) * 2 * half;
    const T* hi = lo + half;
    T* dst = out.raw() + static_cast<std::size_t>(i) * half;
    for (std::size_t k = 0; k < half; ++k) dst[k] = lo[k] >= hi[k] ? lo[k] : hi[k];
  }
  return tape.emit(std::move(out), {x}, [x, n, half](const Tensor<T>& gy) {
    T* gx = x.grad_buffer().raw();
    for (int i = 0; i < n; ++i) {
      const T* lo = x.value().raw() + static_cast<std::size_t>(i) * 2 * half;
      T* glo = gx + static_cast<std::size_t>(i) * 2 * half;
      const T* g = gy.raw() + static_cast<std::size_t>(i) * half;
      for (std::size_t k = 0; k < half; ++k) {
        (lo[k] >= lo[half + k] ? glo[k] : glo[half + k]) += g[k];
      }
    }
  });
}

/// Copies channels [begin, end) of axis 1.
template <class T>
Variable<T> channel_slice(Tape<T>& tape, const Variable<T>& x, int begin, int end) {
  detail::require(x.shape().size() >= 2, "channel_slice: expected rank >= 2");
  const int channels = x.shape()[1];
  detail::require(0 <= begin && begin < end && end <= channels, "channel_slice: bad range");
  Shape out_shape = x.shape();
  out_shape[1] = end - begin;
  const std::size_t inner = shape_size(x.shape()) / (static_cast<std::size_t>(x.shape()[0]) * channels);
  const int n = x.shape()[0];
  Tensor<T> out(out_shape, uninitialized);
  const std::size_t len = static_cast<std::size_t>(end - begin) * inner;
  for (int i = 0; i < n; ++i) {
    const T* src = x.value().raw() + (static_cast<std::size_t>(i) * channels + begin) * inner;
    std::copy(src, src + len, out.raw() + i * len);
  }
  return tape.emit(std::move(out), {x}, [x, n, channels, begin, inner, len](const Tensor<T>& gy) {
    T* gx = x.grad_buffer().raw();
    for (int i = 0; i < n; ++i) {
      T* dst = gx + (static_cast<std::size_t>(i) * channels + begin) * inner;
      const T* src = gy.raw() + i * len;
      for (std::size_t k = 0; k < len; ++k) dst[k] += src[k];
    }
  });
}

template <class T>
Variable<T> sigmoid(Tape<T>& tape, const Variable<T>& x) {
  Tensor<T> out(x.shape(), uninitialized);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T{1} / (T{1} + std::exp(-x.value()[i]));
  Tensor<T> saved = out;
  return tape.emit(std::move(out), {x}, [x, saved = std::move(saved)](const Tensor<T>& gy) {
    T* gx = x.grad_buffer().raw();
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * saved[i] * (T{1} - saved[i]);
  });
}

/// Mean over H*W: [N, C, H, W] -> [N, C].
template <class T>
Variable<T> global_avg_pool(Tape<T>& tape, const Variable<T>& x) {
  detail::require_rank(x.shape(), 4, "global_avg_pool");
  const int n = x.shape()[0], c = x.shape()[1];
  const std::size_t hw = static_cast<std::size_t>(x.shape()[2]) * x.shape()[3];
  Tensor<T> out({n, c});
  for (std::size_t p = 0; p < out.size(); ++p) {
    const T* src = x.value().raw() + p * hw;
    T s{0};
    for (std::size_t k = 0; k < hw; ++k) s += src[k];
    out[p] = s / static_cast<T>(hw);
  }
  return tape.emit(std::move(out), {x}, [x, hw](const Tensor<T>& gy) {
    T* gx = x.grad_buffer().raw();
    const T inv = T{1} / static_cast<T>(hw);
    for (std::size_t p = 0; p < gy.size(); ++p) {
      const T g = gy[p] * inv;
      for (std::size_t k = 0; k < hw; ++k) gx[p * hw + k] += g;
    }
  });
}

template <class T>
Variable<T> add(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape(), uninitialized);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return tape.emit(std::move(out), {a, b}, [a, b](const Tensor<T>& gy) {
    a.accumulate_grad(gy);
    b.accumulate_grad(gy);
  });
}

/// Elementwise product.
template <class T>
Variable<T> mul(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape(), uninitialized);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return tape.emit(std::move(out), {a, b}, [a, b](const Tensor<T>& gy) {
    if (a.requires_grad()) {
      T* ga = a.grad_buffer().raw();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      T* gb = b.grad_buffer().raw();
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a.value()[i];
    }
  });
}

template <class T>
Variable<T> scale(Tape<T>& tape, const Variable<T>& x, T factor) {
  Tensor<T> out(x.shape(), uninitialized);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
  return tape.emit(std::move(out), {x}, [x, factor](const Tensor<T>& gy) {
    T* gx = x.grad_buffer().raw();
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * factor;
  });
}

/// Sum of all elements to a [1] scalar.
template <class T>
Variable<T> sum(Tape<T>& tape, const Variable<T>& x) {
  T s{0};
  for (T v : x.value().data()) s += v;
  return tape.emit(Tensor<T>({1}, s), {x}, [x](const Tensor<T>& gy) {
    T* gx = x.grad_buffer().raw();
    for (std::size_t i = 0; i < x.value().size(); ++i) gx[i] += gy[0];
  });
}

/// Multiplies every spatial position of channel c by s[n, c].
template <class T>
Variable<T> scale_channels(Tape<T>& tape, const Variable<T>& x, const Variable<T>& s) {
  detail::require_rank(x.shape(), 4, "scale_channels input");
  detail::require_rank(s.shape(), 2, "scale_channels scale");
  detail::require(s.shape()[0] == x.shape()[0] && s.shape()[1] == x.shape()[1],
                  "scale_channels: scale " + shape_str(s.shape()) + " does not match input " + shape_str(x.shape()));
  const std::size_t hw = static_cast<std::size_t>(x.shape()[2]) * x.shape()[3];
  Tensor<T> out(x.shape(), uninitialized);
  for (std::size_t p = 0; p < s.value().size(); ++p) {
    const T f = s.value()[p];
    const T* src = x.value().raw() + p * hw;
    T* dst = out.raw() + p * hw;
    for (std::size_t k = 0; k < hw; ++k) dst[k] = src[k] * f;
  }
  return tape.emit(std::move(out), {x, s}, [x, s, hw](const Tensor<T>& gy) {
    T* gx = x.requires_grad() ? x.grad_buffer().raw() : nullptr;
    T* gs = s.requires_grad() ? s.grad_buffer().raw() : nullptr;
    for (std::size_t p = 0; p < s.value().size(); ++p) {
      const T f = s.value()[p];
      const T* src = x.value().raw() + p * hw;
      const T* g = gy.raw() + p * hw;
      T acc{0};
      for (std::size_t k = 0; k < hw; ++k) {
        if (gx) gx[p * hw + k] += g[k] * f;
        acc += g[k] * src[k];
      }
      if (gs) gs[p] += acc;
    }
  });
}

/// Spatial window [top, top+h) x [left, left+w) of x [N, C, H, W].
template <class T>
Variable<T> crop(Tape<T>& tape, const Variable<T>& x, int top, int left, int h, int w) {
  detail::require_rank(x.shape(), 4, "crop");
  const int n = x.shape()[0], c = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  detail::require(top >= 0 && left >= 0 && h >= 1 && w >= 1 && top + h <= H && left + w <= W,
                  "crop: window out of bounds for " + shape_str(x.shape()));
  Tensor<T> out({n, c, h, w}, uninitialized);
  for (int p = 0; p < n * c; ++p) {
    for (int y = 0; y < h; ++y) {
      const T* src = x.value().raw() + (static_cast<std::size_t>(p) * H + top + y) * W + left;
      std::copy(src, src + w, out.raw() + (static_cast<std::size_t>(p) * h + y) * w);
    }
  }
  return tape.emit(std::move(out), {x}, [x, n, c, H, W, top, left, h, w](const Tensor<T>& gy) {
    T* gx = x.grad_buffer().raw();
    for (int p = 0; p < n * c; ++p) {
      for (int y = 0; y < h; ++y) {
        T* dst = gx + (static_cast<std::size_t>(p) * H + top + y) * W + left;
        const T* src = gy.raw() + (static_cast<std::size_t>(p) * h + y) * w;
        for (int k = 0; k < w; ++k) dst[k] += src[k];
      }
    }
  });
}

/// Row-wise softmax of a [N, K] tensor, max-subtracted.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  detail::require_rank(logits.shape(), 2, "softmax");
  const int n = logits.shape()[0], k = logits.shape()[1];
  Tensor<T> out(logits.shape());
  for (int i = 0; i < n; ++i) {
    const T* row = logits.raw() + static_cast<std::size_t>(i) * k;
    T* dst = out.raw() + static_cast<std::size_t>(i) * k;
    T mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T z{0};
    for (int j = 0; j < k; ++j) z += dst[j] = std::exp(row[j] - mx);
    for (int j = 0; j < k; ++j) dst[j] /= z;
  }
  return out;
}

/// Mean over the batch of -log softmax(logits)[label].
template <class T>
Variable<T> softmax_cross_entropy(Tape<T>& tape, const Variable<T>& logits, std::span<const int> labels) {
  detail::require_rank(logits.shape(), 2, "softmax_cross_entropy");
  const int n = logits.shape()[0], k = logits.shape()[1];
  detail::require(static_cast<int>(labels.size()) == n, "softmax_cross_entropy: label count does not match batch");
  for (int label : labels) {
    detail::require(label >= 0 && label < k, "softmax_cross_entropy: label " + std::to_string(label) +
                                                 " out of range [0, " + std::to_string(k) + ")");
  }
  T loss{0};
  Tensor<T> probs(logits.shape());
  for (int i = 0; i < n; ++i) {
    const T* row = logits.value().raw() + static_cast<std::size_t>(i) * k;
    T* p = probs.raw() + static_cast<std::size_t>(i) * k;
    T mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T z{0};
    for (int j = 0; j < k; ++j) z += p[j] = std::exp(row[j] - mx);
    for (int j = 0; j < k; ++j) p[j] /= z;
    loss += std::log(z) - (row[labels[i]] - mx);
  }
  loss /= static_cast<T>(n);
  std::vector<int> saved(labels.begin(), labels.end());
  return tape.emit(Tensor<T>({1}, loss), {logits},
                   [logits, probs = std::move(probs), saved = std::move(saved), n, k](const Tensor<T>& gy) {
                     T* g = logits.grad_buffer().raw();
                     const T s = gy[0] / static_cast<T>(n);
                     for (int i = 0; i < n; ++i) {
                       for (int j = 0; j < k; ++j) {
                         const std::size_t at = static_cast<std::size_t>(i) * k + j;
                         g[at] += s * (probs[at] - (j == saved[i] ? T{1} : T{0}));
                       }
                     }
                   });
}

/// Reverses the last axis (horizontal flip for [.., H, W] images).
template <class T>
Tensor<T> flip_last_axis(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const int w = x.shape().back();
  const std::size_t rows = x.size() / static_cast<std::size_t>(w);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.raw() + r * w;
    T* dst = out.raw() + r * w;
    for (int k = 0; k < w; ++k) dst[k] = src[w - 1 - k];
  }
  return out;
}

}  // namespace impnet::ops
