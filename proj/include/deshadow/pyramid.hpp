#pragma once

#include <utility>
#include <vector>

#include "deshadow/image.hpp"
#include "deshadow/kernels.hpp"

namespace deshadow {

/// Burt-Adelson binomial kernel (1,4,6,4,1)/16 for the analysis path and its
/// x2 variant (1,4,6,4,1)/8 for the synthesis path.
template <typename T>
const std::vector<T>& pyramid_taps_down() {
  static const std::vector<T> taps = {T(1) / 16, T(4) / 16, T(6) / 16, T(4) / 16,
                                      T(1) / 16};
  return taps;
}

template <typename T>
const std::vector<T>& pyramid_taps_up() {
  static const std::vector<T> taps = {T(1) / 8, T(4) / 8, T(6) / 8, T(4) / 8, T(1) / 8};
  return taps;
}

/// Blur with the 5-tap binomial kernel (reflect-101 borders), then keep every
/// second sample. Output is ceil(H/2) x ceil(W/2).
template <typename T>
Image<T> pyr_down(const Image<T>& img) {
  validate_image(img, "pyr_down");
  if (img.height() < 2 || img.width() < 2) {
    throw ShapeError("pyr_down: image must be at least 2x2");
  }
  Tensor<T> t = blur1d_reflect(img.chw, pyramid_taps_down<T>(), 1);
  t = blur1d_reflect(t, pyramid_taps_down<T>(), 0);
  return Image<T>(decimate2(t), img.color_space);
}

/// Zero-interleave to (target_h, target_w), then blur with the x2-scaled
/// kernel per axis. Inverse shape relation: ceil(target/2) == child dim.
template <typename T>
Image<T> pyr_up(const Image<T>& img, int target_h, int target_w) {
  validate_image(img, "pyr_up");
  if ((target_h + 1) / 2 != img.height() || (target_w + 1) / 2 != img.width()) {
    throw ShapeError("pyr_up: target dims are not valid parents of child dims");
  }
  Tensor<T> t = zero_interleave(img.chw, target_h, target_w);
  t = blur1d_reflect(t, pyramid_taps_up<T>(), 1);
  t = blur1d_reflect(t, pyramid_taps_up<T>(), 0);
  return Image<T>(std::move(t), img.color_space);
}

/// L high-frequency bands (index 0 = full resolution) plus the low residual.
template <typename T>
struct Pyramid {
  std::vector<Image<T>> highs;
  Image<T> low;
  int levels() const { return static_cast<int>(highs.size()); }
};

template <typename T>
int max_levels_for(int height, int width) {
  int levels = 0;
  int m = std::min(height, width);
  while ((m >> (levels + 1)) >= 4) ++levels;
  return levels;
}

/// highs[k] = gauss[k] - pyr_up(gauss[k+1]); low = gauss[levels].
template <typename T>
Pyramid<T> decompose(const Image<T>& img, int levels) {
  validate_image(img, "decompose");
  if (levels < 0) throw ShapeError("decompose: levels must be non-negative");
  const int min_dim = std::min(img.height(), img.width());
  if (levels > 0 && (min_dim >> levels) < 4) {
    throw ShapeError("decompose: " + std::to_string(levels) +
                     " levels too deep for image of min dim " + std::to_string(min_dim));
  }
  Pyramid<T> pyr;
  Image<T> gauss = img;
  for (int k = 0; k < levels; ++k) {
    Image<T> next = pyr_down(gauss);
    Image<T> up = pyr_up(next, gauss.height(), gauss.width());
    Image<T> high = gauss;
    for (std::size_t i = 0; i < high.chw.numel(); ++i) high.chw[i] -= up.chw[i];
    pyr.highs.push_back(std::move(high));
    gauss = std::move(next);
  }
  pyr.low = std::move(gauss);
  return pyr;
}

template <typename T>
void validate_pyramid(const Pyramid<T>& pyr) {
  int h = -1, w = -1;
  for (int k = pyr.levels() - 1; k >= 0; --k) {
    const Image<T>& band = pyr.highs[static_cast<std::size_t>(k)];
    if (h > 0 && ((band.height() + 1) / 2 != h || (band.width() + 1) / 2 != w)) {
      throw ShapeError("pyramid: shape chain broken at level " + std::to_string(k));
    }
    h = band.height();
    w = band.width();
  }
  if (pyr.levels() > 0) {
    const Image<T>& finest_parent = pyr.highs.back();
    if ((finest_parent.height() + 1) / 2 != pyr.low.height() ||
        (finest_parent.width() + 1) / 2 != pyr.low.width()) {
      throw ShapeError("pyramid: low band does not chain to coarsest high band");
    }
  }
}

/// low <- pyr_up(low) + highs[k], from coarsest to finest.
template <typename T>
Image<T> reconstruct(const Pyramid<T>& pyr) {
  validate_pyramid(pyr);
  Image<T> acc = pyr.low;
  for (int k = pyr.levels() - 1; k >= 0; --k) {
    const Image<T>& band = pyr.highs[static_cast<std::size_t>(k)];
    Image<T> up = pyr_up(acc, band.height(), band.width());
    for (std::size_t i = 0; i < up.chw.numel(); ++i) up.chw[i] += band.chw[i];
    acc = std::move(up);
  }
  return acc;
}

}  // namespace deshadow
