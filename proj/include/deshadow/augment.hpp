#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "deshadow/dataset.hpp"
#include "deshadow/rng.hpp"

namespace deshadow {

struct AugmentConfig {
  int crop_size = 0;  // 0 = keep full size
  double flip_prob = 0.5;
  double mixup_alpha = 0.2;  // 0 disables mixup
  std::pair<double, double> brightness_jitter = {1.0, 1.0};  // multiplicative
  std::pair<double, double> saturation_jitter = {1.0, 1.0};
  std::pair<double, double> resize_scales = {1.0, 1.0};
  std::uint64_t rng_seed = 0;

  static AugmentConfig identity() { return {0, 0.0, 0.0, {1, 1}, {1, 1}, {1, 1}, 0}; }

  /// Paper-protocol defaults: crop, flip, mixup, brightness/saturation jitter.
  static AugmentConfig training_defaults(int crop) {
    AugmentConfig c;
    c.crop_size = crop;
    c.flip_prob = 0.5;
    c.mixup_alpha = 0.2;
    c.brightness_jitter = {0.9, 1.1};
    c.saturation_jitter = {0.9, 1.1};
    c.resize_scales = {1.0, 1.1};
    return c;
  }
};

inline void validate_augment_config(const AugmentConfig& cfg) {
  if (cfg.flip_prob < 0 || cfg.flip_prob > 1) throw ConfigError("flip_prob not in [0,1]");
  if (cfg.mixup_alpha < 0) throw ConfigError("mixup_alpha must be >= 0");
  if (cfg.crop_size < 0) throw ConfigError("crop_size must be >= 0");
  if (cfg.resize_scales.first > cfg.resize_scales.second ||
      cfg.resize_scales.first <= 0) {
    throw ConfigError("bad resize_scales range");
  }
}

template <typename T>
Image<T> flip_h(const Image<T>& img) {
  Image<T> out = img;
  const int c = img.channels(), h = img.height(), w = img.width();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.chw.at(ch, y, x) = img.chw.at(ch, y, w - 1 - x);
  return out;
}

template <typename T>
Image<T> flip_v(const Image<T>& img) {
  Image<T> out = img;
  const int c = img.channels(), h = img.height(), w = img.width();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.chw.at(ch, y, x) = img.chw.at(ch, h - 1 - y, x);
  return out;
}

template <typename T>
Image<T> crop(const Image<T>& img, int y0, int x0, int ch_, int cw) {
  const int c = img.channels();
  if (y0 < 0 || x0 < 0 || y0 + ch_ > img.height() || x0 + cw > img.width()) {
    throw ShapeError("crop window out of bounds");
  }
  Image<T> out = Image<T>::zeros(c, ch_, cw);
  out.color_space = img.color_space;
  for (int chn = 0; chn < c; ++chn)
    for (int y = 0; y < ch_; ++y)
      for (int x = 0; x < cw; ++x) out.chw.at(chn, y, x) = img.chw.at(chn, y0 + y, x0 + x);
  return out;
}

/// Geometric transforms apply identically to shadow and target; photometric
/// jitter touches the shadow image only (the target is clean supervision).
template <typename T>
PairedSample<T> augment(const PairedSample<T>& sample, const AugmentConfig& cfg,
                        Rng& rng) {
  validate_augment_config(cfg);
  PairedSample<T> out = sample;

  // Resize.
  const double s = rng.uniform(cfg.resize_scales.first, cfg.resize_scales.second);
  if (s != 1.0) {
    const int nh = std::max(1, static_cast<int>(std::lround(out.shadow.height() * s)));
    const int nw = std::max(1, static_cast<int>(std::lround(out.shadow.width() * s)));
    out.shadow.chw = bilinear_resize(out.shadow.chw, nh, nw);
    out.target.chw = bilinear_resize(out.target.chw, nh, nw);
  }

  // Crop.
  if (cfg.crop_size > 0) {
    const int h = out.shadow.height(), w = out.shadow.width();
    if (cfg.crop_size > h || cfg.crop_size > w) {
      throw ShapeError("crop size " + std::to_string(cfg.crop_size) +
                       " larger than image " + std::to_string(h) + "x" + std::to_string(w));
    }
    const int y0 = rng.uniform_int(0, h - cfg.crop_size);
    const int x0 = rng.uniform_int(0, w - cfg.crop_size);
    out.shadow = crop(out.shadow, y0, x0, cfg.crop_size, cfg.crop_size);
    out.target = crop(out.target, y0, x0, cfg.crop_size, cfg.crop_size);
  }

  // Flips.
  if (rng.bernoulli(cfg.flip_prob)) {
    out.shadow = flip_h(out.shadow);
    out.target = flip_h(out.target);
  }
  if (rng.bernoulli(cfg.flip_prob)) {
    out.shadow = flip_v(out.shadow);
    out.target = flip_v(out.target);
  }

  // Photometric jitter, shadow only.
  const double bright = rng.uniform(cfg.brightness_jitter.first, cfg.brightness_jitter.second);
  if (bright != 1.0) {
    for (auto& v : out.shadow.chw.vec()) v = static_cast<T>(v * bright);
  }
  const double sat = rng.uniform(cfg.saturation_jitter.first, cfg.saturation_jitter.second);
  if (sat != 1.0 && out.shadow.channels() == 3) {
    const int h = out.shadow.height(), w = out.shadow.width();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double r = out.shadow.chw.at(0, y, x);
        const double g = out.shadow.chw.at(1, y, x);
        const double b = out.shadow.chw.at(2, y, x);
        const double gray = 0.299 * r + 0.587 * g + 0.114 * b;
        out.shadow.chw.at(0, y, x) = static_cast<T>(gray + sat * (r - gray));
        out.shadow.chw.at(1, y, x) = static_cast<T>(gray + sat * (g - gray));
        out.shadow.chw.at(2, y, x) = static_cast<T>(gray + sat * (b - gray));
      }
    }
  }

  for (auto& v : out.shadow.chw.vec()) v = std::min(T(1), std::max(T(0), v));
  for (auto& v : out.target.chw.vec()) v = std::min(T(1), std::max(T(0), v));
  return out;
}

/// Convex blend of two samples with one shared coefficient, preserving the
/// shadow/clean correspondence.
template <typename T>
PairedSample<T> mixup_blend(const PairedSample<T>& a, const PairedSample<T>& b, T lam) {
  require_same_shape(a.shadow.chw, b.shadow.chw, "mixup");
  PairedSample<T> out = a;
  out.id = a.id + "+" + b.id;
  for (std::size_t i = 0; i < out.shadow.chw.numel(); ++i) {
    out.shadow.chw[i] = lam * a.shadow.chw[i] + (T(1) - lam) * b.shadow.chw[i];
    out.target.chw[i] = lam * a.target.chw[i] + (T(1) - lam) * b.target.chw[i];
  }
  return out;
}

}  // namespace deshadow
