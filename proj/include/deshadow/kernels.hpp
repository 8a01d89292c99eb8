#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "deshadow/tensor.hpp"

namespace deshadow {

/// Reflect-101 index fold: -1 -> 1, n -> n-2 (no duplication of the border
/// pixel). Valid for any i once folded repeatedly; n == 1 collapses to 0.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

/// 1-d correlation along one spatial axis of a CHW tensor with reflect-101
/// borders. taps must have odd length. axis: 0 = rows (y), 1 = columns (x).
template <typename T>
Tensor<T> blur1d_reflect(const Tensor<T>& x, const std::vector<T>& taps, int axis) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int k = static_cast<int>(taps.size());
  const int r = k / 2;
  Tensor<T> y(x.shape());
  if (axis == 1) {
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < h; ++i) {
        const T* row = &x.at(ch, i, 0);
        T* out = &y.at(ch, i, 0);
        for (int j = 0; j < w; ++j) {
          T acc = 0;
          for (int d = 0; d < k; ++d) acc += taps[d] * row[reflect_index(j + d - r, w)];
          out[j] = acc;
        }
      }
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < h; ++i) {
        T* out = &y.at(ch, i, 0);
        for (int d = 0; d < k; ++d) {
          const T* row = &x.at(ch, reflect_index(i + d - r, h), 0);
          const T t = taps[d];
          if (d == 0) {
            for (int j = 0; j < w; ++j) out[j] = t * row[j];
          } else {
            for (int j = 0; j < w; ++j) out[j] += t * row[j];
          }
        }
      }
    }
  }
  return y;
}

/// Adjoint of blur1d_reflect: scatters each output tap contribution back to
/// its source index. Used by autograd.
template <typename T>
Tensor<T> blur1d_reflect_adjoint(const Tensor<T>& grad, const std::vector<T>& taps,
                                 int axis) {
  const int c = grad.dim(0), h = grad.dim(1), w = grad.dim(2);
  const int k = static_cast<int>(taps.size());
  const int r = k / 2;
  Tensor<T> gx(grad.shape());
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const T g = grad.at(ch, i, j);
        for (int d = 0; d < k; ++d) {
          if (axis == 1) {
            gx.at(ch, i, reflect_index(j + d - r, w)) += taps[d] * g;
          } else {
            gx.at(ch, reflect_index(i + d - r, h), j) += taps[d] * g;
          }
        }
      }
    }
  }
  return gx;
}

/// Keep every second sample starting at index 0 on both spatial axes.
template <typename T>
Tensor<T> decimate2(const Tensor<T>& x) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = (h + 1) / 2, wo = (w + 1) / 2;
  Tensor<T> y({c, ho, wo});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) y.at(ch, i, j) = x.at(ch, 2 * i, 2 * j);
  return y;
}

/// Place x at even coordinates of a target_h x target_w grid, zeros elsewhere.
/// Requires ceil(target/2) == child dim on both axes.
template <typename T>
Tensor<T> zero_interleave(const Tensor<T>& x, int target_h, int target_w) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if ((target_h + 1) / 2 != h || (target_w + 1) / 2 != w) {
    throw ShapeError("zero_interleave: target dims are not valid parents of child dims");
  }
  Tensor<T> y({c, target_h, target_w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) y.at(ch, 2 * i, 2 * j) = x.at(ch, i, j);
  return y;
}

/// Bilinear resize of a CHW tensor (half-pixel centers, clamped edges).
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> y({c, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int i = 0; i < out_h; ++i) {
    double fy = (i + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y1 = std::min(std::max(y0 + 1, 0), h - 1);
    y0 = std::min(std::max(y0, 0), h - 1);
    for (int j = 0; j < out_w; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x1 = std::min(std::max(x0 + 1, 0), w - 1);
      x0 = std::min(std::max(x0, 0), w - 1);
      for (int ch = 0; ch < c; ++ch) {
        double v00 = x.at(ch, y0, x0), v01 = x.at(ch, y0, x1);
        double v10 = x.at(ch, y1, x0), v11 = x.at(ch, y1, x1);
        double top = v00 + wx * (v01 - v00);
        double bot = v10 + wx * (v11 - v10);
        y.at(ch, i, j) = static_cast<T>(top + wy * (bot - top));
      }
    }
  }
  return y;
}

/// Bin boundaries of adaptive pooling: bin i covers [i*n/p, (i+1)*n/p).
inline std::pair<int, int> pool_bin(int i, int n, int p) {
  int lo = (i * n) / p;
  int hi = ((i + 1) * n) / p;
  return {lo, std::max(hi, lo + 1)};
}

/// Adaptive average pool of a CHW tensor to a p x p grid.
template <typename T>
Tensor<T> avg_pool_grid(const Tensor<T>& x, int p) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (p < 1 || p > h || p > w) throw ShapeError("avg_pool_grid: pool size out of range");
  Tensor<T> y({c, p, p});
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < p; ++i) {
      auto [y0, y1] = pool_bin(i, h, p);
      for (int j = 0; j < p; ++j) {
        auto [x0, x1] = pool_bin(j, w, p);
        T acc = 0;
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx) acc += x.at(ch, yy, xx);
        y.at(ch, i, j) = acc / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return y;
}

// --- Dense matrix products on row-major buffers ----------------------------

/// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void matmul_nn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C[m x n] += A[m x k] * B[n x k]^T
template <typename T>
void matmul_nt_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::size_t>(j) * k;
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

/// C[k x n] += A[m x k]^T * B[m x n]
template <typename T>
void matmul_tn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    const T* brow = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      T* crow = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// --- 2-d convolution (zero-padded "same", stride 1) -------------------------

/// y[co, i, j] = b[co] + sum_{ci,u,v} w[co,ci,u,v] * x[ci, i+u-r, j+v-r]
/// with zero padding outside the image. w shape [co, ci, k, k], k odd.
template <typename T>
Tensor<T> conv2d_same(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int co = w.dim(0), k = w.dim(2);
  const int r = k / 2;
  if (w.dim(1) != ci) throw ShapeError("conv2d_same: channel mismatch");
  if (w.dim(3) != k || (k % 2) == 0) throw ShapeError("conv2d_same: kernel must be odd square");
  Tensor<T> y({co, h, wd});
  for (int o = 0; o < co; ++o) {
    if (bias.numel() > 0) {
      T bv = bias[static_cast<std::size_t>(o)];
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < wd; ++j) y.at(o, i, j) = bv;
    }
    for (int c = 0; c < ci; ++c) {
      for (int u = 0; u < k; ++u) {
        for (int v = 0; v < k; ++v) {
          const T wv = w[((static_cast<std::size_t>(o) * ci + c) * k + u) * k + v];
          if (wv == T(0)) continue;
          const int dy = u - r, dx = v - r;
          const int i0 = std::max(0, -dy), i1 = std::min(h, h - dy);
          const int j0 = std::max(0, -dx), j1 = std::min(wd, wd - dx);
          for (int i = i0; i < i1; ++i) {
            const T* src = &x.at(c, i + dy, 0);
            T* dst = &y.at(o, i, 0);
            for (int j = j0; j < j1; ++j) dst[j] += wv * src[j + dx];
          }
        }
      }
    }
  }
  return y;
}

/// Gradients of conv2d_same. Returns (gx, gw, gb); gb empty when bias absent.
template <typename T>
void conv2d_same_backward(const Tensor<T>& x, const Tensor<T>& w, bool has_bias,
                          const Tensor<T>& gy, Tensor<T>& gx, Tensor<T>& gw,
                          Tensor<T>& gb) {
  const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int co = w.dim(0), k = w.dim(2);
  const int r = k / 2;
  gx = Tensor<T>(x.shape());
  gw = Tensor<T>(w.shape());
  if (has_bias) {
    gb = Tensor<T>({co});
    for (int o = 0; o < co; ++o) {
      T acc = 0;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < wd; ++j) acc += gy.at(o, i, j);
      gb[static_cast<std::size_t>(o)] = acc;
    }
  }
  for (int o = 0; o < co; ++o) {
    for (int c = 0; c < ci; ++c) {
      for (int u = 0; u < k; ++u) {
        for (int v = 0; v < k; ++v) {
          const int dy = u - r, dx = v - r;
          const int i0 = std::max(0, -dy), i1 = std::min(h, h - dy);
          const int j0 = std::max(0, -dx), j1 = std::min(wd, wd - dx);
          const std::size_t widx = ((static_cast<std::size_t>(o) * ci + c) * k + u) * k + v;
          const T wv = w[widx];
          T wacc = 0;
          for (int i = i0; i < i1; ++i) {
            const T* srcx = &x.at(c, i + dy, 0);
            T* gsrc = &gx.at(c, i + dy, 0);
            const T* g = &gy.at(o, i, 0);
            for (int j = j0; j < j1; ++j) {
              wacc += g[j] * srcx[j + dx];
              gsrc[j + dx] += g[j] * wv;
            }
          }
          gw[widx] += wacc;
        }
      }
    }
  }
}

/// Depthwise valid correlation with a fixed 1-d kernel along one axis.
/// Output is shorter by taps-1 along that axis.
template <typename T>
Tensor<T> conv1d_valid(const Tensor<T>& x, const std::vector<T>& taps, int axis) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int k = static_cast<int>(taps.size());
  const int ho = (axis == 0) ? h - k + 1 : h;
  const int wo = (axis == 1) ? w - k + 1 : w;
  if (ho < 1 || wo < 1) throw ShapeError("conv1d_valid: kernel longer than axis");
  Tensor<T> y({c, ho, wo});
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        T acc = 0;
        for (int d = 0; d < k; ++d) {
          acc += taps[d] * (axis == 0 ? x.at(ch, i + d, j) : x.at(ch, i, j + d));
        }
        y.at(ch, i, j) = acc;
      }
    }
  }
  return y;
}

/// Adjoint of conv1d_valid (scatter-add into the longer input grid).
template <typename T>
Tensor<T> conv1d_valid_adjoint(const Tensor<T>& gy, const std::vector<T>& taps, int axis,
                               int in_h, int in_w) {
  const int c = gy.dim(0), ho = gy.dim(1), wo = gy.dim(2);
  const int k = static_cast<int>(taps.size());
  Tensor<T> gx({c, in_h, in_w});
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        const T g = gy.at(ch, i, j);
        for (int d = 0; d < k; ++d) {
          if (axis == 0)
            gx.at(ch, i + d, j) += taps[d] * g;
          else
            gx.at(ch, i, j + d) += taps[d] * g;
        }
      }
    }
  }
  return gx;
}

/// Normalized Gaussian taps of given radius (length 2r+1).
template <typename T>
std::vector<T> gaussian_taps(int radius, double sigma) {
  std::vector<T> taps(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = static_cast<T>(v);
    sum += v;
  }
  for (auto& t : taps) t = static_cast<T>(t / sum);
  return taps;
}

}  // namespace deshadow
