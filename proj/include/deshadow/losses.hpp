#pragma once

#include <vector>

#include "deshadow/metrics.hpp"
#include "deshadow/ops.hpp"

namespace deshadow {

/// Differentiable MSE between pred and a constant target, on the [0,1] scale.
template <typename T>
ag::Value<T> mse_loss_value(const ag::Value<T>& pred, const ag::Value<T>& target,
                            MseReduction reduction = MseReduction::kMean) {
  require_same_shape(pred.tensor(), target.tensor(), "mse_loss");
  ag::Value<T> d = ag::sub(pred, target);
  ag::Value<T> sq = ag::mul(d, d);
  return reduction == MseReduction::kMean ? ag::mean_all(sq) : ag::sum_all(sq);
}

/// Differentiable SSIM. Statistics on the 0-255 scale, matching the pure
/// reference in metrics.hpp.
template <typename T>
ag::Value<T> ssim_value(const ag::Value<T>& x, const ag::Value<T>& y,
                        const LossConfig& cfg = {}) {
  require_same_shape(x.tensor(), y.tensor(), "ssim");
  const T r = static_cast<T>(cfg.metric_range);
  const T c1 = static_cast<T>(cfg.c1), c2 = static_cast<T>(cfg.c2);
  ag::Value<T> xs = ag::scale(x, r);
  ag::Value<T> ys = ag::scale(y, r);

  if (cfg.ssim_mode == SsimMode::kGlobal) {
    ag::Value<T> mu_x = ag::mean_all(xs);
    ag::Value<T> mu_y = ag::mean_all(ys);
    ag::Value<T> var_x = ag::sub(ag::mean_all(ag::mul(xs, xs)), ag::mul(mu_x, mu_x));
    ag::Value<T> var_y = ag::sub(ag::mean_all(ag::mul(ys, ys)), ag::mul(mu_y, mu_y));
    ag::Value<T> cov = ag::sub(ag::mean_all(ag::mul(xs, ys)), ag::mul(mu_x, mu_y));
    ag::Value<T> num = ag::mul(ag::add_scalar(ag::scale(ag::mul(mu_x, mu_y), T(2)), c1),
                               ag::add_scalar(ag::scale(cov, T(2)), c2));
    ag::Value<T> den = ag::mul(
        ag::add_scalar(ag::add(ag::mul(mu_x, mu_x), ag::mul(mu_y, mu_y)), c1),
        ag::add_scalar(ag::add(var_x, var_y), c2));
    return ag::div(num, den);
  }

  const int h = x.tensor().dim(1), w = x.tensor().dim(2);
  if (h < cfg.ssim_window || w < cfg.ssim_window) {
    throw ShapeError("ssim: image smaller than the 11x11 window");
  }
  const auto taps = gaussian_taps<T>(cfg.ssim_window / 2, cfg.ssim_sigma);
  auto gblur = [&](const ag::Value<T>& t) {
    return ag::conv1d_valid_fixed(ag::conv1d_valid_fixed(t, taps, 1), taps, 0);
  };
  ag::Value<T> mu_x = gblur(xs);
  ag::Value<T> mu_y = gblur(ys);
  ag::Value<T> var_x = ag::sub(gblur(ag::mul(xs, xs)), ag::mul(mu_x, mu_x));
  ag::Value<T> var_y = ag::sub(gblur(ag::mul(ys, ys)), ag::mul(mu_y, mu_y));
  ag::Value<T> cov = ag::sub(gblur(ag::mul(xs, ys)), ag::mul(mu_x, mu_y));
  ag::Value<T> num = ag::mul(ag::add_scalar(ag::scale(ag::mul(mu_x, mu_y), T(2)), c1),
                             ag::add_scalar(ag::scale(cov, T(2)), c2));
  ag::Value<T> den =
      ag::mul(ag::add_scalar(ag::add(ag::mul(mu_x, mu_x), ag::mul(mu_y, mu_y)), c1),
              ag::add_scalar(ag::add(var_x, var_y), c2));
  return ag::mean_all(ag::div(num, den));
}

/// L_total = L_MSE + lambda * (1 - SSIM) by default; the literal-sign variant
/// (+lambda * SSIM) is selectable via LossConfig.
template <typename T>
ag::Value<T> total_loss_value(const ag::Value<T>& pred, const ag::Value<T>& target,
                              const LossConfig& cfg = {}) {
  ag::Value<T> mse = mse_loss_value(pred, target, cfg.mse_reduction);
  if (cfg.lambda_ssim == 0.0) return mse;
  ag::Value<T> s = ssim_value(pred, target, cfg);
  const T lam = static_cast<T>(cfg.lambda_ssim);
  if (cfg.literal_ssim_term) {
    return ag::add(mse, ag::scale(s, lam));
  }
  // lambda * (1 - ssim)
  ag::Value<T> dissim = ag::add_scalar(ag::scale(s, T(-1)), T(1));
  return ag::add(mse, ag::scale(dissim, lam));
}

/// Scalar convenience wrapper over the graph (no gradients recorded).
template <typename T>
T total_loss(const Image<T>& pred, const Image<T>& target, const LossConfig& cfg = {}) {
  ag::NoGradGuard ng;
  ag::Value<T> p = ag::constant(pred.chw);
  ag::Value<T> t = ag::constant(target.chw);
  return total_loss_value(p, t, cfg).tensor()[0];
}

}  // namespace deshadow
