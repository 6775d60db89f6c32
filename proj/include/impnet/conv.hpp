#pragma once

#include <algorithm>
#include <cstring>
#include <vector>

#include "impnet/gemm.hpp"

namespace impnet::conv {

enum ScratchSlot { kCol, kWinogradU, kWinogradV, kWinogradM, kWinogradRows, kBackwardCol, kBackwardDcol, kScratchSlots };

/// Grow-only per-thread buffer; contents are unspecified on return. Each
/// evaluation lane (thread) therefore owns its scratch.
template <class T>
T* scratch(ScratchSlot slot, std::size_t n) {
  thread_local std::vector<T> buffers[kScratchSlots];
  auto& b = buffers[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

struct Geometry {
  int channels = 0;
  int height = 0;
  int width = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int pad = 0;

  int out_h() const { return (height + 2 * pad - kernel_h) / stride + 1; }
  int out_w() const { return (width + 2 * pad - kernel_w) / stride + 1; }
  int patch_size() const { return channels * kernel_h * kernel_w; }
  bool is_pointwise() const { return kernel_h == 1 && kernel_w == 1 && stride == 1 && pad == 0; }
};

/// Unfolds one image [C, H, W] into columns [C*kh*kw, Ho*Wo] with zero padding.
template <class T>
void im2col(const T* image, const Geometry& g, T* col) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel_h; ++ki) {
      for (int kj = 0; kj < g.kernel_w; ++kj) {
        T* row = col + (static_cast<std::size_t>((c * g.kernel_h + ki) * g.kernel_w + kj)) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          T* dst = row + static_cast<std::size_t>(y) * ow;
          const int iy = y * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + ow, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.width;
          if (g.stride == 1) {
            // ix = x - pad + kj must lie in [0, width)
            const int lo = std::clamp(g.pad - kj, 0, ow);
            const int hi = std::clamp(g.width + g.pad - kj, lo, ow);
            std::fill(dst, dst + lo, T{0});
            std::copy(src + lo - g.pad + kj, src + hi - g.pad + kj, dst + lo);
            std::fill(dst + hi, dst + ow, T{0});
          } else {
            for (int x = 0; x < ow; ++x) {
              const int ix = x * g.stride - g.pad + kj;
              dst[x] = (ix >= 0 && ix < g.width) ? src[ix] : T{0};
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters columns back into an image, accumulating.
template <class T>
void col2im_add(const T* col, const Geometry& g, T* image) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  for (int c = 0; c < g.channels; ++c) {
    T* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel_h; ++ki) {
      for (int kj = 0; kj < g.kernel_w; ++kj) {
        const T* row = col + (static_cast<std::size_t>((c * g.kernel_h + ki) * g.kernel_w + kj)) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.height) continue;
          const T* src = row + static_cast<std::size_t>(y) * ow;
          T* dst = plane + static_cast<std::size_t>(iy) * g.width;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.width) dst[ix] += src[x];
          }
        }
      }
    }
  }
}

/// Direct im2col + GEMM forward for a batch. `out` is [N, Cout, Ho, Wo].
template <class T>
void forward_im2col(const T* input, int batch, const Geometry& g, const T* kernel, const T* bias, int out_channels,
                    T* out) {
  const int spatial = g.out_h() * g.out_w();
  const std::size_t in_stride = static_cast<std::size_t>(g.channels) * g.height * g.width;
  const std::size_t out_stride = static_cast<std::size_t>(out_channels) * spatial;
  T* col = g.is_pointwise() ? nullptr : scratch<T>(kCol, static_cast<std::size_t>(g.patch_size()) * spatial);
  for (int n = 0; n < batch; ++n) {
    const T* cols = input + n * in_stride;
    if (col) {
      im2col(cols, g, col);
      cols = col;
    }
    T* y = out + n * out_stride;
    gemm::matmul(kernel, cols, y, out_channels, g.patch_size(), spatial);
    for (int o = 0; o < out_channels; ++o) {
      T* row = y + static_cast<std::size_t>(o) * spatial;
      const T b = bias[o];
      for (int i = 0; i < spatial; ++i) row[i] += b;
    }
  }
}

/// Distance between consecutive transform matrices, padded by a cache line so
/// the 16 interleaved streams do not alias in L1 when the size is a multiple of 4 KiB.
inline std::size_t padded_stride(std::size_t elems) {
  return elems + 64;
}

/// Winograd F(2x2, 3x3) forward for 3x3 kernels with stride 1 and pad 1.
/// Tiles of all batch images are gathered into one set of 16 GEMMs.
template <class T>
void forward_winograd_f23(const T* input, int batch, int in_channels, int height, int width, const T* kernel,
                          const T* bias, int out_channels, T* out) {
  const int tiles_h = (height + 1) / 2;
  const int tiles_w = (width + 1) / 2;
  const int tiles = tiles_h * tiles_w;
  const int cols = batch * tiles;
  const std::size_t plane = static_cast<std::size_t>(height) * width;

  // U_k = (G g G^T)_k laid out as 16 matrices [Cout, Cin].
  const std::size_t u_stride = padded_stride(static_cast<std::size_t>(out_channels) * in_channels);
  T* u = scratch<T>(kWinogradU, 16 * u_stride);
  for (int o = 0; o < out_channels; ++o) {
    for (int c = 0; c < in_channels; ++c) {
      const T* g = kernel + (static_cast<std::size_t>(o) * in_channels + c) * 9;
      T tmp[4][3];
      for (int j = 0; j < 3; ++j) {
        const T g0 = g[j], g1 = g[3 + j], g2 = g[6 + j];
        tmp[0][j] = g0;
        tmp[1][j] = T(0.5) * (g0 + g1 + g2);
        tmp[2][j] = T(0.5) * (g0 - g1 + g2);
        tmp[3][j] = g2;
      }
      const std::size_t at = static_cast<std::size_t>(o) * in_channels + c;
      for (int i = 0; i < 4; ++i) {
        const T t0 = tmp[i][0], t1 = tmp[i][1], t2 = tmp[i][2];
        u[(i * 4 + 0) * u_stride + at] = t0;
        u[(i * 4 + 1) * u_stride + at] = T(0.5) * (t0 + t1 + t2);
        u[(i * 4 + 2) * u_stride + at] = T(0.5) * (t0 - t1 + t2);
        u[(i * 4 + 3) * u_stride + at] = t2;
      }
    }
  }

  // V_k = (B^T d B)_k laid out as 16 matrices [Cin, batch*tiles]. Rows are
  // processed a tile row at a time so the inner loops run across tiles.
  const std::size_t v_stride = padded_stride(static_cast<std::size_t>(in_channels) * cols);
  T* v = scratch<T>(kWinogradV, 16 * v_stride);
  const int padded_w = 2 * tiles_w + 2;
  std::vector<T> rows(static_cast<std::size_t>(8) * padded_w);
  T* r[4] = {rows.data(), rows.data() + padded_w, rows.data() + 2 * padded_w, rows.data() + 3 * padded_w};
  T* t[4] = {rows.data() + 4 * padded_w, rows.data() + 5 * padded_w, rows.data() + 6 * padded_w,
             rows.data() + 7 * padded_w};
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < in_channels; ++c) {
      const T* src = input + (static_cast<std::size_t>(n) * in_channels + c) * plane;
      T* vrow = v + static_cast<std::size_t>(c) * cols + static_cast<std::size_t>(n) * tiles;
      for (int ty = 0; ty < tiles_h; ++ty) {
        // Input rows 2ty-1 .. 2ty+2 with one zero column on the left and
        // zeros past the right edge.
        for (int i = 0; i < 4; ++i) {
          const int y = 2 * ty - 1 + i;
          std::fill(r[i], r[i] + padded_w, T{0});
          if (y >= 0 && y < height) std::copy(src + static_cast<std::size_t>(y) * width,
                                              src + static_cast<std::size_t>(y + 1) * width, r[i] + 1);
        }
        for (int x = 0; x < padded_w; ++x) {
          t[0][x] = r[0][x] - r[2][x];
          t[1][x] = r[1][x] + r[2][x];
          t[2][x] = r[2][x] - r[1][x];
          t[3][x] = r[1][x] - r[3][x];
        }
        T* dst = vrow + static_cast<std::size_t>(ty) * tiles_w;
        for (int i = 0; i < 4; ++i) {
          const T* s = t[i];
          T* d0 = dst + (i * 4 + 0) * v_stride;
          T* d1 = dst + (i * 4 + 1) * v_stride;
          T* d2 = dst + (i * 4 + 2) * v_stride;
          T* d3 = dst + (i * 4 + 3) * v_stride;
          for (int tx = 0; tx < tiles_w; ++tx) {
            const T s0 = s[2 * tx], s1 = s[2 * tx + 1], s2 = s[2 * tx + 2], s3 = s[2 * tx + 3];
            d0[tx] = s0 - s2;
            d1[tx] = s1 + s2;
            d2[tx] = s2 - s1;
            d3[tx] = s1 - s3;
          }
        }
      }
    }
  }

  const std::size_t m_stride = padded_stride(static_cast<std::size_t>(out_channels) * cols);
  T* m = scratch<T>(kWinogradM, 16 * m_stride);
  for (int k = 0; k < 16; ++k) {
    gemm::matmul(u + k * u_stride, v + k * v_stride, m + k * m_stride, out_channels,
                 in_channels, cols);
  }

  // Y = A^T M A, a tile row at a time; rows of width 2*tiles_w are written
  // through a buffer and cropped to the output width.
  std::vector<T> out_rows(static_cast<std::size_t>(2) * 2 * tiles_w);
  T* o0 = out_rows.data();
  T* o1 = o0 + 2 * tiles_w;
  for (int n = 0; n < batch; ++n) {
    for (int o = 0; o < out_channels; ++o) {
      T* dst = out + (static_cast<std::size_t>(n) * out_channels + o) * plane;
      const T* mrow = m + static_cast<std::size_t>(o) * cols + static_cast<std::size_t>(n) * tiles;
      const T b = bias[o];
      for (int ty = 0; ty < tiles_h; ++ty) {
        const T* mk[16];
        for (int k = 0; k < 16; ++k) mk[k] = mrow + k * m_stride + static_cast<std::size_t>(ty) * tiles_w;
        for (int tx = 0; tx < tiles_w; ++tx) {
          T a[4], c[4];
          for (int j = 0; j < 4; ++j) {
            a[j] = mk[j][tx] + mk[4 + j][tx] + mk[8 + j][tx];
            c[j] = mk[4 + j][tx] - mk[8 + j][tx] - mk[12 + j][tx];
          }
          o0[2 * tx] = a[0] + a[1] + a[2] + b;
          o0[2 * tx + 1] = a[1] - a[2] - a[3] + b;
          o1[2 * tx] = c[0] + c[1] + c[2] + b;
          o1[2 * tx + 1] = c[1] - c[2] - c[3] + b;
        }
        const int y = 2 * ty;
        std::copy(o0, o0 + width, dst + static_cast<std::size_t>(y) * width);
        if (y + 1 < height) std::copy(o1, o1 + width, dst + static_cast<std::size_t>(y + 1) * width);
      }
    }
  }
}

/// Winograd F(4x4, 3x3) forward for 3x3 kernels with stride 1 and pad 1:
/// 36 GEMMs over 6x6 input tiles, each producing a 4x4 output tile.
template <class T>
void forward_winograd_f43(const T* input, int batch, int in_channels, int height, int width, const T* kernel,
                          const T* bias, int out_channels, T* out) {
  const int tiles_h = (height + 3) / 4;
  const int tiles_w = (width + 3) / 4;
  const int tiles = tiles_h * tiles_w;
  const int cols = batch * tiles;
  const std::size_t plane = static_cast<std::size_t>(height) * width;

  // U = G g G^T, 36 matrices [Cout, Cin].
  const std::size_t u_stride = padded_stride(static_cast<std::size_t>(out_channels) * in_channels);
  T* u = scratch<T>(kWinogradU, 36 * u_stride);
  for (std::size_t at = 0; at < static_cast<std::size_t>(out_channels) * in_channels; ++at) {
    const T* g = kernel + at * 9;
    T tmp[6][3];
    for (int j = 0; j < 3; ++j) {
      const T g0 = g[j], g1 = g[3 + j], g2 = g[6 + j];
      tmp[0][j] = g0 / T(4);
      tmp[1][j] = -(g0 + g1 + g2) / T(6);
      tmp[2][j] = -(g0 - g1 + g2) / T(6);
      tmp[3][j] = g0 / T(24) + g1 / T(12) + g2 / T(6);
      tmp[4][j] = g0 / T(24) - g1 / T(12) + g2 / T(6);
      tmp[5][j] = g2;
    }
    for (int i = 0; i < 6; ++i) {
      const T t0 = tmp[i][0], t1 = tmp[i][1], t2 = tmp[i][2];
      T* dst = u + static_cast<std::size_t>(i * 6) * u_stride + at;
      dst[0 * u_stride] = t0 / T(4);
      dst[1 * u_stride] = -(t0 + t1 + t2) / T(6);
      dst[2 * u_stride] = -(t0 - t1 + t2) / T(6);
      dst[3 * u_stride] = t0 / T(24) + t1 / T(12) + t2 / T(6);
      dst[4 * u_stride] = t0 / T(24) - t1 / T(12) + t2 / T(6);
      dst[5 * u_stride] = t2;
    }
  }

  // V = B^T d B, 36 matrices [Cin, batch*tiles], one tile row at a time.
  const std::size_t v_stride = padded_stride(static_cast<std::size_t>(in_channels) * cols);
  T* v = scratch<T>(kWinogradV, 36 * v_stride);
  const int padded_w = 4 * tiles_w + 2;
  T* rows = scratch<T>(kWinogradRows, static_cast<std::size_t>(12) * padded_w);
  T* r[6];
  T* t[6];
  for (int i = 0; i < 6; ++i) {
    r[i] = rows + static_cast<std::size_t>(i) * padded_w;
    t[i] = rows + static_cast<std::size_t>(6 + i) * padded_w;
  }
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < in_channels; ++c) {
      const T* src = input + (static_cast<std::size_t>(n) * in_channels + c) * plane;
      T* vrow = v + static_cast<std::size_t>(c) * cols + static_cast<std::size_t>(n) * tiles;
      for (int ty = 0; ty < tiles_h; ++ty) {
        for (int i = 0; i < 6; ++i) {
          const int y = 4 * ty - 1 + i;
          std::fill(r[i], r[i] + padded_w, T{0});
          if (y >= 0 && y < height) {
            std::copy(src + static_cast<std::size_t>(y) * width, src + static_cast<std::size_t>(y + 1) * width,
                      r[i] + 1);
          }
        }
        for (int x = 0; x < padded_w; ++x) {
          const T d0 = r[0][x], d1 = r[1][x], d2 = r[2][x], d3 = r[3][x], d4 = r[4][x], d5 = r[5][x];
          t[0][x] = T(4) * d0 - T(5) * d2 + d4;
          t[1][x] = -T(4) * (d1 + d2) + d3 + d4;
          t[2][x] = T(4) * (d1 - d2) - d3 + d4;
          t[3][x] = T(2) * (d3 - d1) - d2 + d4;
          t[4][x] = T(2) * (d1 - d3) - d2 + d4;
          t[5][x] = T(4) * d1 - T(5) * d3 + d5;
        }
        T* dst = vrow + static_cast<std::size_t>(ty) * tiles_w;
        for (int i = 0; i < 6; ++i) {
          const T* s = t[i];
          T* d[6];
          for (int j = 0; j < 6; ++j) d[j] = dst + static_cast<std::size_t>(i * 6 + j) * v_stride;
          for (int tx = 0; tx < tiles_w; ++tx) {
            const T* e = s + 4 * tx;
            d[0][tx] = T(4) * e[0] - T(5) * e[2] + e[4];
            d[1][tx] = -T(4) * (e[1] + e[2]) + e[3] + e[4];
            d[2][tx] = T(4) * (e[1] - e[2]) - e[3] + e[4];
            d[3][tx] = T(2) * (e[3] - e[1]) - e[2] + e[4];
            d[4][tx] = T(2) * (e[1] - e[3]) - e[2] + e[4];
            d[5][tx] = T(4) * e[1] - T(5) * e[3] + e[5];
          }
        }
      }
    }
  }

  const std::size_t m_stride = padded_stride(static_cast<std::size_t>(out_channels) * cols);
  T* m = scratch<T>(kWinogradM, 36 * m_stride);
  for (int k = 0; k < 36; ++k) {
    gemm::matmul(u + k * u_stride, v + k * v_stride, m + k * m_stride, out_channels, in_channels, cols);
  }

  // Y = A^T M A. Four output rows per tile row, cropped to the output size.
  T* o = scratch<T>(kWinogradRows, static_cast<std::size_t>(4) * 4 * tiles_w);
  T* orow[4] = {o, o + 4 * tiles_w, o + 8 * tiles_w, o + 12 * tiles_w};
  for (int n = 0; n < batch; ++n) {
    for (int oc = 0; oc < out_channels; ++oc) {
      T* dst = out + (static_cast<std::size_t>(n) * out_channels + oc) * plane;
      const T* mrow = m + static_cast<std::size_t>(oc) * cols + static_cast<std::size_t>(n) * tiles;
      const T b = bias[oc];
      for (int ty = 0; ty < tiles_h; ++ty) {
        const T* mk[36];
        for (int k = 0; k < 36; ++k) mk[k] = mrow + k * m_stride + static_cast<std::size_t>(ty) * tiles_w;
        for (int tx = 0; tx < tiles_w; ++tx) {
          T a[4][6];
          for (int j = 0; j < 6; ++j) {
            const T m0 = mk[j][tx], m1 = mk[6 + j][tx], m2 = mk[12 + j][tx], m3 = mk[18 + j][tx],
                    m4 = mk[24 + j][tx], m5 = mk[30 + j][tx];
            a[0][j] = m0 + m1 + m2 + m3 + m4;
            a[1][j] = m1 - m2 + T(2) * (m3 - m4);
            a[2][j] = m1 + m2 + T(4) * (m3 + m4);
            a[3][j] = m1 - m2 + T(8) * (m3 - m4) + m5;
          }
          for (int i = 0; i < 4; ++i) {
            const T* q = a[i];
            T* w = orow[i] + 4 * tx;
            w[0] = q[0] + q[1] + q[2] + q[3] + q[4] + b;
            w[1] = q[1] - q[2] + T(2) * (q[3] - q[4]) + b;
            w[2] = q[1] + q[2] + T(4) * (q[3] + q[4]) + b;
            w[3] = q[1] - q[2] + T(8) * (q[3] - q[4]) + q[5] + b;
          }
        }
        for (int i = 0; i < 4 && 4 * ty + i < height; ++i) {
          std::copy(orow[i], orow[i] + width, dst + static_cast<std::size_t>(4 * ty + i) * width);
        }
      }
    }
  }
}

}  // namespace impnet::conv
