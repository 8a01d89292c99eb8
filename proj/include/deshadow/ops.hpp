#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "deshadow/autograd.hpp"
#include "deshadow/kernels.hpp"

namespace deshadow::ag {

// --- Elementwise -------------------------------------------------------------

template <typename T>
Value<T> add(const Value<T>& a, const Value<T>& b) {
  require_same_shape(a.tensor(), b.tensor(), "add");
  Tensor<T> y = a.tensor();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b.tensor()[i];
  return make_node<T>(
      std::move(y), {a, b},
      [](Node<T>& self) {
        if (self.parents[0]->requires_grad) add_grad(*self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) add_grad(*self.parents[1], self.grad);
      },
      "add");
}

template <typename T>
Value<T> sub(const Value<T>& a, const Value<T>& b) {
  require_same_shape(a.tensor(), b.tensor(), "sub");
  Tensor<T> y = a.tensor();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b.tensor()[i];
  return make_node<T>(
      std::move(y), {a, b},
      [](Node<T>& self) {
        if (self.parents[0]->requires_grad) add_grad(*self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) {
          Tensor<T> g = self.grad;
          for (auto& v : g.vec()) v = -v;
          add_grad(*self.parents[1], std::move(g));
        }
      },
      "sub");
}

template <typename T>
Value<T> mul(const Value<T>& a, const Value<T>& b) {
  require_same_shape(a.tensor(), b.tensor(), "mul");
  Tensor<T> y = a.tensor();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b.tensor()[i];
  return make_node<T>(
      std::move(y), {a, b},
      [](Node<T>& self) {
        const Tensor<T>& av = self.parents[0]->value;
        const Tensor<T>& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
          Tensor<T> g(self.grad.shape());
          for (std::size_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * bv[i];
          add_grad(*self.parents[0], std::move(g));
        }
        if (self.parents[1]->requires_grad) {
          Tensor<T> g(self.grad.shape());
          for (std::size_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * av[i];
          add_grad(*self.parents[1], std::move(g));
        }
      },
      "mul");
}

template <typename T>
Value<T> div(const Value<T>& a, const Value<T>& b) {
  require_same_shape(a.tensor(), b.tensor(), "div");
  Tensor<T> y = a.tensor();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] /= b.tensor()[i];
  return make_node<T>(
      std::move(y), {a, b},
      [](Node<T>& self) {
        const Tensor<T>& av = self.parents[0]->value;
        const Tensor<T>& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
          Tensor<T> g(self.grad.shape());
          for (std::size_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] / bv[i];
          add_grad(*self.parents[0], std::move(g));
        }
        if (self.parents[1]->requires_grad) {
          Tensor<T> g(self.grad.shape());
          for (std::size_t i = 0; i < g.numel(); ++i)
            g[i] = -self.grad[i] * av[i] / (bv[i] * bv[i]);
          add_grad(*self.parents[1], std::move(g));
        }
      },
      "div");
}

template <typename T>
Value<T> scale(const Value<T>& a, T s) {
  Tensor<T> y = a.tensor();
  for (auto& v : y.vec()) v *= s;
  return make_node<T>(
      std::move(y), {a},
      [s](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (auto& v : g.vec()) v *= s;
        add_grad(*self.parents[0], std::move(g));
      },
      "scale");
}

template <typename T>
Value<T> add_scalar(const Value<T>& a, T s) {
  Tensor<T> y = a.tensor();
  for (auto& v : y.vec()) v += s;
  return make_node<T>(
      std::move(y), {a},
      [](Node<T>& self) { add_grad(*self.parents[0], self.grad); }, "add_scalar");
}

template <typename T>
Value<T> relu(const Value<T>& a) {
  Tensor<T> y = a.tensor();
  for (auto& v : y.vec()) v = v > T(0) ? v : T(0);
  return make_node<T>(
      std::move(y), {a},
      [](Node<T>& self) {
        const Tensor<T>& x = self.parents[0]->value;
        Tensor<T> g(self.grad.shape());
        for (std::size_t i = 0; i < g.numel(); ++i)
          g[i] = x[i] > T(0) ? self.grad[i] : T(0);
        add_grad(*self.parents[0], std::move(g));
      },
      "relu");
}

template <typename T>
Value<T> sigmoid(const Value<T>& a) {
  Tensor<T> y = a.tensor();
  for (auto& v : y.vec()) v = T(1) / (T(1) + std::exp(-v));
  return make_node<T>(
      std::move(y), {a},
      [](Node<T>& self) {
        Tensor<T> g(self.grad.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const T s = self.value[i];
          g[i] = self.grad[i] * s * (T(1) - s);
        }
        add_grad(*self.parents[0], std::move(g));
      },
      "sigmoid");
}

/// 1 / sqrt(x + eps), elementwise.
template <typename T>
Value<T> rsqrt_shift(const Value<T>& a, T eps) {
  Tensor<T> y = a.tensor();
  for (auto& v : y.vec()) v = T(1) / std::sqrt(v + eps);
  return make_node<T>(
      std::move(y), {a},
      [](Node<T>& self) {
        Tensor<T> g(self.grad.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const T r = self.value[i];  // (x+eps)^-1/2
          g[i] = self.grad[i] * T(-0.5) * r * r * r;
        }
        add_grad(*self.parents[0], std::move(g));
      },
      "rsqrt_shift");
}

// --- Reductions / broadcasts -------------------------------------------------

template <typename T>
Value<T> mean_all(const Value<T>& a) {
  T acc = 0;
  for (const auto& v : a.tensor().vec()) acc += v;
  const T inv_n = T(1) / static_cast<T>(a.tensor().numel());
  return make_node<T>(
      Tensor<T>::scalar(acc * inv_n), {a},
      [inv_n](Node<T>& self) {
        Tensor<T> g(self.parents[0]->value.shape());
        const T gv = self.grad[0] * inv_n;
        g.fill(gv);
        add_grad(*self.parents[0], std::move(g));
      },
      "mean_all");
}

template <typename T>
Value<T> sum_all(const Value<T>& a) {
  T acc = 0;
  for (const auto& v : a.tensor().vec()) acc += v;
  return make_node<T>(
      Tensor<T>::scalar(acc), {a},
      [](Node<T>& self) {
        Tensor<T> g(self.parents[0]->value.shape());
        g.fill(self.grad[0]);
        add_grad(*self.parents[0], std::move(g));
      },
      "sum_all");
}

/// Per-channel mean over spatial dims: [C,H,W] -> [C].
template <typename T>
Value<T> spatial_mean(const Value<T>& a) {
  const int c = a.tensor().dim(0), h = a.tensor().dim(1), w = a.tensor().dim(2);
  const T inv_n = T(1) / static_cast<T>(h * w);
  Tensor<T> y({c});
  for (int ch = 0; ch < c; ++ch) {
    T acc = 0;
    const T* p = &a.tensor().at(ch, 0, 0);
    for (int i = 0; i < h * w; ++i) acc += p[i];
    y[static_cast<std::size_t>(ch)] = acc * inv_n;
  }
  return make_node<T>(
      std::move(y), {a},
      [c, h, w, inv_n](Node<T>& self) {
        Tensor<T> g({c, h, w});
        for (int ch = 0; ch < c; ++ch) {
          const T gv = self.grad[static_cast<std::size_t>(ch)] * inv_n;
          T* p = &g.at(ch, 0, 0);
          for (int i = 0; i < h * w; ++i) p[i] = gv;
        }
        add_grad(*self.parents[0], std::move(g));
      },
      "spatial_mean");
}

/// [C] -> [C,H,W], each channel constant.
template <typename T>
Value<T> broadcast_spatial(const Value<T>& v, int h, int w) {
  const int c = v.tensor().dim(0);
  Tensor<T> y({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    const T val = v.tensor()[static_cast<std::size_t>(ch)];
    T* p = &y.at(ch, 0, 0);
    for (int i = 0; i < h * w; ++i) p[i] = val;
  }
  return make_node<T>(
      std::move(y), {v},
      [c, h, w](Node<T>& self) {
        Tensor<T> g({c});
        for (int ch = 0; ch < c; ++ch) {
          T acc = 0;
          const T* p = &self.grad.at(ch, 0, 0);
          for (int i = 0; i < h * w; ++i) acc += p[i];
          g[static_cast<std::size_t>(ch)] = acc;
        }
        add_grad(*self.parents[0], std::move(g));
      },
      "broadcast_spatial");
}

/// Multiply every channel of x [C,H,W] by the single-channel map m [1,H,W].
template <typename T>
Value<T> mul_chan_bcast(const Value<T>& x, const Value<T>& m) {
  const int c = x.tensor().dim(0), h = x.tensor().dim(1), w = x.tensor().dim(2);
  if (m.tensor().shape() != std::vector<int>{1, h, w}) {
    throw ShapeError("mul_chan_bcast: map must be [1,H,W]");
  }
  Tensor<T> y({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h * w; ++i)
      (&y.at(ch, 0, 0))[i] = (&x.tensor().at(ch, 0, 0))[i] * m.tensor()[static_cast<std::size_t>(i)];
  return make_node<T>(
      std::move(y), {x, m},
      [c, h, w](Node<T>& self) {
        const Tensor<T>& xv = self.parents[0]->value;
        const Tensor<T>& mv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
          Tensor<T> g({c, h, w});
          for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h * w; ++i)
              (&g.at(ch, 0, 0))[i] =
                  (&self.grad.at(ch, 0, 0))[i] * mv[static_cast<std::size_t>(i)];
          add_grad(*self.parents[0], std::move(g));
        }
        if (self.parents[1]->requires_grad) {
          Tensor<T> g({1, h, w});
          for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h * w; ++i)
              g[static_cast<std::size_t>(i)] +=
                  (&self.grad.at(ch, 0, 0))[i] * (&xv.at(ch, 0, 0))[i];
          add_grad(*self.parents[1], std::move(g));
        }
      },
      "mul_chan_bcast");
}

// --- Structure ---------------------------------------------------------------

template <typename T>
Value<T> reshape(const Value<T>& a, std::vector<int> shape) {
  Tensor<T> y = a.tensor().reshaped(shape);
  return make_node<T>(
      std::move(y), {a},
      [](Node<T>& self) {
        Tensor<T> g = self.grad.reshaped(self.parents[0]->value.shape());
        add_grad(*self.parents[0], std::move(g));
      },
      "reshape");
}

/// Concatenate two rank-3 tensors along channels (dim 0).
template <typename T>
Value<T> concat_c(const Value<T>& a, const Value<T>& b) {
  const auto& sa = a.tensor().shape();
  const auto& sb = b.tensor().shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[1] != sb[1] || sa[2] != sb[2]) {
    throw ShapeError("concat_c: incompatible shapes");
  }
  Tensor<T> y({sa[0] + sb[0], sa[1], sa[2]});
  std::copy(a.tensor().vec().begin(), a.tensor().vec().end(), y.vec().begin());
  std::copy(b.tensor().vec().begin(), b.tensor().vec().end(),
            y.vec().begin() + static_cast<std::ptrdiff_t>(a.tensor().numel()));
  const std::size_t na = a.tensor().numel();
  return make_node<T>(
      std::move(y), {a, b},
      [na](Node<T>& self) {
        if (self.parents[0]->requires_grad) {
          Tensor<T> g(self.parents[0]->value.shape());
          std::copy(self.grad.vec().begin(),
                    self.grad.vec().begin() + static_cast<std::ptrdiff_t>(na),
                    g.vec().begin());
          add_grad(*self.parents[0], std::move(g));
        }
        if (self.parents[1]->requires_grad) {
          Tensor<T> g(self.parents[1]->value.shape());
          std::copy(self.grad.vec().begin() + static_cast<std::ptrdiff_t>(na),
                    self.grad.vec().end(), g.vec().begin());
          add_grad(*self.parents[1], std::move(g));
        }
      },
      "concat_c");
}

/// Channel slice [c0, c1) of a rank-3 tensor.
template <typename T>
Value<T> slice_c(const Value<T>& a, int c0, int c1) {
  const int c = a.tensor().dim(0), h = a.tensor().dim(1), w = a.tensor().dim(2);
  if (c0 < 0 || c1 > c || c0 >= c1) throw ShapeError("slice_c: bad channel range");
  Tensor<T> y({c1 - c0, h, w});
  std::copy(&a.tensor().at(c0, 0, 0), &a.tensor().at(c0, 0, 0) + y.numel(),
            y.vec().begin());
  return make_node<T>(
      std::move(y), {a},
      [c0](Node<T>& self) {
        Tensor<T> g(self.parents[0]->value.shape());
        std::copy(self.grad.vec().begin(), self.grad.vec().end(), &g.at(c0, 0, 0));
        add_grad(*self.parents[0], std::move(g));
      },
      "slice_c");
}

// --- Convolution / resampling -------------------------------------------------

/// Zero-padded same convolution; w [Co,Ci,k,k], optional bias [Co].
template <typename T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, const Value<T>& b) {
  const bool has_bias = b.defined();
  Tensor<T> y = conv2d_same(x.tensor(), w.tensor(),
                            has_bias ? b.tensor() : Tensor<T>());
  std::vector<Value<T>> parents = has_bias ? std::vector<Value<T>>{x, w, b}
                                           : std::vector<Value<T>>{x, w};
  return make_node<T>(
      std::move(y), std::move(parents),
      [has_bias](Node<T>& self) {
        const Tensor<T>& xv = self.parents[0]->value;
        const Tensor<T>& wv = self.parents[1]->value;
        Tensor<T> gx, gw, gb;
        conv2d_same_backward(xv, wv, has_bias, self.grad, gx, gw, gb);
        if (self.parents[0]->requires_grad) add_grad(*self.parents[0], std::move(gx));
        if (self.parents[1]->requires_grad) add_grad(*self.parents[1], std::move(gw));
        if (has_bias && self.parents[2]->requires_grad)
          add_grad(*self.parents[2], std::move(gb));
      },
      "conv2d");
}

template <typename T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w) {
  return conv2d(x, w, Value<T>());
}

/// Fixed-kernel depthwise valid correlation along one axis (not learnable).
template <typename T>
Value<T> conv1d_valid_fixed(const Value<T>& x, std::vector<T> taps, int axis) {
  Tensor<T> y = conv1d_valid(x.tensor(), taps, axis);
  const int in_h = x.tensor().dim(1), in_w = x.tensor().dim(2);
  return make_node<T>(
      std::move(y), {x},
      [taps = std::move(taps), axis, in_h, in_w](Node<T>& self) {
        add_grad(*self.parents[0], conv1d_valid_adjoint(self.grad, taps, axis, in_h, in_w));
      },
      "conv1d_valid_fixed");
}

/// Fixed-kernel reflect-101 blur along one axis (the pyramid smoothing step).
template <typename T>
Value<T> blur1d_reflect_op(const Value<T>& x, std::vector<T> taps, int axis) {
  Tensor<T> y = blur1d_reflect(x.tensor(), taps, axis);
  return make_node<T>(
      std::move(y), {x},
      [taps = std::move(taps), axis](Node<T>& self) {
        add_grad(*self.parents[0], blur1d_reflect_adjoint(self.grad, taps, axis));
      },
      "blur1d_reflect");
}

template <typename T>
Value<T> zero_interleave_op(const Value<T>& x, int target_h, int target_w) {
  Tensor<T> y = zero_interleave(x.tensor(), target_h, target_w);
  return make_node<T>(
      std::move(y), {x},
      [](Node<T>& self) {
        add_grad(*self.parents[0], decimate2(self.grad));
      },
      "zero_interleave");
}

template <typename T>
Value<T> avg_pool_grid_op(const Value<T>& x, int p) {
  Tensor<T> y = avg_pool_grid(x.tensor(), p);
  const int c = x.tensor().dim(0), h = x.tensor().dim(1), w = x.tensor().dim(2);
  return make_node<T>(
      std::move(y), {x},
      [c, h, w, p](Node<T>& self) {
        Tensor<T> g({c, h, w});
        for (int ch = 0; ch < c; ++ch) {
          for (int i = 0; i < p; ++i) {
            auto [y0, y1] = pool_bin(i, h, p);
            for (int j = 0; j < p; ++j) {
              auto [x0, x1] = pool_bin(j, w, p);
              const T gv = self.grad.at(ch, i, j) / static_cast<T>((y1 - y0) * (x1 - x0));
              for (int yy = y0; yy < y1; ++yy)
                for (int xx = x0; xx < x1; ++xx) g.at(ch, yy, xx) += gv;
            }
          }
        }
        add_grad(*self.parents[0], std::move(g));
      },
      "avg_pool_grid");
}

template <typename T>
Value<T> bilinear_resize_op(const Value<T>& x, int out_h, int out_w) {
  Tensor<T> y = bilinear_resize(x.tensor(), out_h, out_w);
  const int c = x.tensor().dim(0), h = x.tensor().dim(1), w = x.tensor().dim(2);
  return make_node<T>(
      std::move(y), {x},
      [c, h, w, out_h, out_w](Node<T>& self) {
        Tensor<T> g({c, h, w});
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
              const T gv = self.grad.at(ch, i, j);
              g.at(ch, y0, x0) += static_cast<T>(gv * (1 - wx) * (1 - wy));
              g.at(ch, y0, x1) += static_cast<T>(gv * wx * (1 - wy));
              g.at(ch, y1, x0) += static_cast<T>(gv * (1 - wx) * wy);
              g.at(ch, y1, x1) += static_cast<T>(gv * wx * wy);
            }
          }
        }
        add_grad(*self.parents[0], std::move(g));
      },
      "bilinear_resize");
}

// --- Tokens / attention --------------------------------------------------------

/// [C,H,W] -> [H*W, C] (pixels as tokens).
template <typename T>
Value<T> chw_to_tokens(const Value<T>& x) {
  const int c = x.tensor().dim(0), h = x.tensor().dim(1), w = x.tensor().dim(2);
  const int n = h * w;
  Tensor<T> y({n, c});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < n; ++i) y.at(i, ch) = (&x.tensor().at(ch, 0, 0))[i];
  return make_node<T>(
      std::move(y), {x},
      [c, h, w, n](Node<T>& self) {
        Tensor<T> g({c, h, w});
        for (int ch = 0; ch < c; ++ch)
          for (int i = 0; i < n; ++i) (&g.at(ch, 0, 0))[i] = self.grad.at(i, ch);
        add_grad(*self.parents[0], std::move(g));
      },
      "chw_to_tokens");
}

/// [H*W, C] -> [C,H,W].
template <typename T>
Value<T> tokens_to_chw(const Value<T>& t, int h, int w) {
  const int n = t.tensor().dim(0), c = t.tensor().dim(1);
  if (n != h * w) throw ShapeError("tokens_to_chw: token count mismatch");
  Tensor<T> y({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < n; ++i) (&y.at(ch, 0, 0))[i] = t.tensor().at(i, ch);
  return make_node<T>(
      std::move(y), {t},
      [c, n](Node<T>& self) {
        Tensor<T> g({n, c});
        for (int ch = 0; ch < c; ++ch)
          for (int i = 0; i < n; ++i) g.at(i, ch) = (&self.grad.at(ch, 0, 0))[i];
        add_grad(*self.parents[0], std::move(g));
      },
      "tokens_to_chw");
}

/// [C,H,W] -> [nWin, win*win, C]; image is zero-padded up to a multiple of win.
template <typename T>
Value<T> window_partition(const Value<T>& x, int win) {
  const int c = x.tensor().dim(0), h = x.tensor().dim(1), w = x.tensor().dim(2);
  const int gh = (h + win - 1) / win, gw = (w + win - 1) / win;
  const int nw = gh * gw;
  Tensor<T> y({nw, win * win, c});
  for (int wi = 0; wi < nw; ++wi) {
    const int oy = (wi / gw) * win, ox = (wi % gw) * win;
    for (int t = 0; t < win * win; ++t) {
      const int yy = oy + t / win, xx = ox + t % win;
      if (yy >= h || xx >= w) continue;
      for (int ch = 0; ch < c; ++ch)
        y[(static_cast<std::size_t>(wi) * win * win + t) * c + ch] = x.tensor().at(ch, yy, xx);
    }
  }
  return make_node<T>(
      std::move(y), {x},
      [c, h, w, win, gw, nw](Node<T>& self) {
        Tensor<T> g({c, h, w});
        for (int wi = 0; wi < nw; ++wi) {
          const int oy = (wi / gw) * win, ox = (wi % gw) * win;
          for (int t = 0; t < win * win; ++t) {
            const int yy = oy + t / win, xx = ox + t % win;
            if (yy >= h || xx >= w) continue;
            for (int ch = 0; ch < c; ++ch)
              g.at(ch, yy, xx) +=
                  self.grad[(static_cast<std::size_t>(wi) * win * win + t) * c + ch];
          }
        }
        add_grad(*self.parents[0], std::move(g));
      },
      "window_partition");
}

/// Inverse of window_partition (padded positions are dropped).
template <typename T>
Value<T> window_merge(const Value<T>& t, int c, int h, int w, int win) {
  const int gh = (h + win - 1) / win, gw = (w + win - 1) / win;
  const int nw = gh * gw;
  if (t.tensor().shape() != std::vector<int>{nw, win * win, c}) {
    throw ShapeError("window_merge: token tensor has wrong shape");
  }
  Tensor<T> y({c, h, w});
  for (int wi = 0; wi < nw; ++wi) {
    const int oy = (wi / gw) * win, ox = (wi % gw) * win;
    for (int tt = 0; tt < win * win; ++tt) {
      const int yy = oy + tt / win, xx = ox + tt % win;
      if (yy >= h || xx >= w) continue;
      for (int ch = 0; ch < c; ++ch)
        y.at(ch, yy, xx) = t.tensor()[(static_cast<std::size_t>(wi) * win * win + tt) * c + ch];
    }
  }
  return make_node<T>(
      std::move(y), {t},
      [c, h, w, win, gw, nw](Node<T>& self) {
        Tensor<T> g({nw, win * win, c});
        for (int wi = 0; wi < nw; ++wi) {
          const int oy = (wi / gw) * win, ox = (wi % gw) * win;
          for (int tt = 0; tt < win * win; ++tt) {
            const int yy = oy + tt / win, xx = ox + tt % win;
            if (yy >= h || xx >= w) continue;
            for (int ch = 0; ch < c; ++ch)
              g[(static_cast<std::size_t>(wi) * win * win + tt) * c + ch] =
                  self.grad.at(ch, yy, xx);
          }
        }
        add_grad(*self.parents[0], std::move(g));
      },
      "window_merge");
}

/// Affine map on the last dim: x [.., D] * w [D, E] + b [E].
template <typename T>
Value<T> linear(const Value<T>& x, const Value<T>& w, const Value<T>& b) {
  const auto& xs = x.tensor().shape();
  const int d = xs.back();
  if (w.tensor().rank() != 2 || w.tensor().dim(0) != d) {
    throw ShapeError("linear: weight shape mismatch");
  }
  const int e = w.tensor().dim(1);
  const int rows = static_cast<int>(x.tensor().numel()) / d;
  const bool has_bias = b.defined();
  std::vector<int> out_shape = xs;
  out_shape.back() = e;
  Tensor<T> y(out_shape);
  if (has_bias) {
    require_shape(b.tensor(), {e}, "linear bias");
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < e; ++j) y[static_cast<std::size_t>(r) * e + j] = b.tensor()[static_cast<std::size_t>(j)];
  }
  matmul_nn_acc(x.tensor().data(), w.tensor().data(), y.data(), rows, d, e);
  std::vector<Value<T>> parents = has_bias ? std::vector<Value<T>>{x, w, b}
                                           : std::vector<Value<T>>{x, w};
  return make_node<T>(
      std::move(y), std::move(parents),
      [rows, d, e, has_bias](Node<T>& self) {
        const Tensor<T>& xv = self.parents[0]->value;
        const Tensor<T>& wv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
          Tensor<T> g(xv.shape());
          matmul_nt_acc(self.grad.data(), wv.data(), g.data(), rows, e, d);
          add_grad(*self.parents[0], std::move(g));
        }
        if (self.parents[1]->requires_grad) {
          Tensor<T> g(wv.shape());
          matmul_tn_acc(xv.data(), self.grad.data(), g.data(), rows, d, e);
          add_grad(*self.parents[1], std::move(g));
        }
        if (has_bias && self.parents[2]->requires_grad) {
          Tensor<T> g({e});
          for (int r = 0; r < rows; ++r)
            for (int j = 0; j < e; ++j)
              g[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(r) * e + j];
          add_grad(*self.parents[2], std::move(g));
        }
      },
      "linear");
}

/// [B, N, h*d] -> [B*h, N, d].
template <typename T>
Value<T> to_heads(const Value<T>& x, int heads) {
  const int bb = x.tensor().dim(0), n = x.tensor().dim(1), hd = x.tensor().dim(2);
  if (hd % heads != 0) throw ShapeError("to_heads: width not divisible by heads");
  const int d = hd / heads;
  Tensor<T> y({bb * heads, n, d});
  for (int b = 0; b < bb; ++b)
    for (int i = 0; i < n; ++i)
      for (int hh = 0; hh < heads; ++hh)
        for (int k = 0; k < d; ++k)
          y[((static_cast<std::size_t>(b) * heads + hh) * n + i) * d + k] =
              x.tensor()[(static_cast<std::size_t>(b) * n + i) * hd + hh * d + k];
  return make_node<T>(
      std::move(y), {x},
      [bb, n, hd, heads, d](Node<T>& self) {
        Tensor<T> g({bb, n, hd});
        for (int b = 0; b < bb; ++b)
          for (int i = 0; i < n; ++i)
            for (int hh = 0; hh < heads; ++hh)
              for (int k = 0; k < d; ++k)
                g[(static_cast<std::size_t>(b) * n + i) * hd + hh * d + k] =
                    self.grad[((static_cast<std::size_t>(b) * heads + hh) * n + i) * d + k];
        add_grad(*self.parents[0], std::move(g));
      },
      "to_heads");
}

/// [B*h, N, d] -> [B, N, h*d].
template <typename T>
Value<T> from_heads(const Value<T>& x, int heads) {
  const int bh = x.tensor().dim(0), n = x.tensor().dim(1), d = x.tensor().dim(2);
  if (bh % heads != 0) throw ShapeError("from_heads: batch not divisible by heads");
  const int bb = bh / heads, hd = heads * d;
  Tensor<T> y({bb, n, hd});
  for (int b = 0; b < bb; ++b)
    for (int i = 0; i < n; ++i)
      for (int hh = 0; hh < heads; ++hh)
        for (int k = 0; k < d; ++k)
          y[(static_cast<std::size_t>(b) * n + i) * hd + hh * d + k] =
              x.tensor()[((static_cast<std::size_t>(b) * heads + hh) * n + i) * d + k];
  return make_node<T>(
      std::move(y), {x},
      [bb, n, hd, heads, d](Node<T>& self) {
        Tensor<T> g({bb * heads, n, d});
        for (int b = 0; b < bb; ++b)
          for (int i = 0; i < n; ++i)
            for (int hh = 0; hh < heads; ++hh)
              for (int k = 0; k < d; ++k)
                g[((static_cast<std::size_t>(b) * heads + hh) * n + i) * d + k] =
                    self.grad[(static_cast<std::size_t>(b) * n + i) * hd + hh * d + k];
        add_grad(*self.parents[0], std::move(g));
      },
      "from_heads");
}

/// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N].
template <typename T>
Value<T> bmm_nn(const Value<T>& a, const Value<T>& b) {
  const int bb = a.tensor().dim(0), m = a.tensor().dim(1), k = a.tensor().dim(2);
  const int n = b.tensor().dim(2);
  if (b.tensor().dim(0) != bb || b.tensor().dim(1) != k) throw ShapeError("bmm_nn: shape mismatch");
  Tensor<T> y({bb, m, n});
  for (int i = 0; i < bb; ++i)
    matmul_nn_acc(a.tensor().data() + static_cast<std::size_t>(i) * m * k,
                  b.tensor().data() + static_cast<std::size_t>(i) * k * n,
                  y.data() + static_cast<std::size_t>(i) * m * n, m, k, n);
  return make_node<T>(
      std::move(y), {a, b},
      [bb, m, k, n](Node<T>& self) {
        const Tensor<T>& av = self.parents[0]->value;
        const Tensor<T>& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
          Tensor<T> g(av.shape());
          for (int i = 0; i < bb; ++i)
            matmul_nt_acc(self.grad.data() + static_cast<std::size_t>(i) * m * n,
                          bv.data() + static_cast<std::size_t>(i) * k * n,
                          g.data() + static_cast<std::size_t>(i) * m * k, m, n, k);
          add_grad(*self.parents[0], std::move(g));
        }
        if (self.parents[1]->requires_grad) {
          Tensor<T> g(bv.shape());
          for (int i = 0; i < bb; ++i)
            matmul_tn_acc(av.data() + static_cast<std::size_t>(i) * m * k,
                          self.grad.data() + static_cast<std::size_t>(i) * m * n,
                          g.data() + static_cast<std::size_t>(i) * k * n, m, k, n);
          add_grad(*self.parents[1], std::move(g));
        }
      },
      "bmm_nn");
}

/// Batched matmul with transposed rhs: [B,M,K] x [B,N,K] -> [B,M,N].
template <typename T>
Value<T> bmm_nt(const Value<T>& a, const Value<T>& b) {
  const int bb = a.tensor().dim(0), m = a.tensor().dim(1), k = a.tensor().dim(2);
  const int n = b.tensor().dim(1);
  if (b.tensor().dim(0) != bb || b.tensor().dim(2) != k) throw ShapeError("bmm_nt: shape mismatch");
  Tensor<T> y({bb, m, n});
  for (int i = 0; i < bb; ++i)
    matmul_nt_acc(a.tensor().data() + static_cast<std::size_t>(i) * m * k,
                  b.tensor().data() + static_cast<std::size_t>(i) * n * k,
                  y.data() + static_cast<std::size_t>(i) * m * n, m, k, n);
  return make_node<T>(
      std::move(y), {a, b},
      [bb, m, k, n](Node<T>& self) {
        const Tensor<T>& av = self.parents[0]->value;
        const Tensor<T>& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
          // dA = dC * B  ([B,M,N] x [B,N,K])
          Tensor<T> g(av.shape());
          for (int i = 0; i < bb; ++i)
            matmul_nn_acc(self.grad.data() + static_cast<std::size_t>(i) * m * n,
                          bv.data() + static_cast<std::size_t>(i) * n * k,
                          g.data() + static_cast<std::size_t>(i) * m * k, m, n, k);
          add_grad(*self.parents[0], std::move(g));
        }
        if (self.parents[1]->requires_grad) {
          // dB = dC^T * A  ([B,N,M] x [B,M,K])
          Tensor<T> g(bv.shape());
          for (int i = 0; i < bb; ++i)
            matmul_tn_acc(self.grad.data() + static_cast<std::size_t>(i) * m * n,
                          av.data() + static_cast<std::size_t>(i) * m * k,
                          g.data() + static_cast<std::size_t>(i) * n * k, m, n, k);
          add_grad(*self.parents[1], std::move(g));
        }
      },
      "bmm_nt");
}

/// Softmax over the last dim of any rank (rows = leading dims).
template <typename T>
Value<T> softmax_rows(const Value<T>& x) {
  const int n = x.tensor().shape().back();
  const int rows = static_cast<int>(x.tensor().numel()) / n;
  Tensor<T> y(x.tensor().shape());
  for (int r = 0; r < rows; ++r) {
    const T* in = x.tensor().data() + static_cast<std::size_t>(r) * n;
    T* out = y.data() + static_cast<std::size_t>(r) * n;
    T mx = in[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    T sum = 0;
    for (int j = 0; j < n; ++j) {
      out[j] = std::exp(in[j] - mx);
      sum += out[j];
    }
    for (int j = 0; j < n; ++j) out[j] /= sum;
  }
  return make_node<T>(
      std::move(y), {x},
      [rows, n](Node<T>& self) {
        Tensor<T> g(self.grad.shape());
        for (int r = 0; r < rows; ++r) {
          const T* yv = self.value.data() + static_cast<std::size_t>(r) * n;
          const T* gy = self.grad.data() + static_cast<std::size_t>(r) * n;
          T dot = 0;
          for (int j = 0; j < n; ++j) dot += gy[j] * yv[j];
          T* gx = g.data() + static_cast<std::size_t>(r) * n;
          for (int j = 0; j < n; ++j) gx[j] = (gy[j] - dot) * yv[j];
        }
        add_grad(*self.parents[0], std::move(g));
      },
      "softmax_rows");
}

}  // namespace deshadow::ag
