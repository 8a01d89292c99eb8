#pragma once

#include <algorithm>
#include <string>
#include <utility>

#include "deshadow/tensor.hpp"

namespace deshadow {

enum class ColorSpace { kGray, kRgb };

/// H x W x C raster stored channel-planar (CHW), values canonically in [0,1].
template <typename T>
struct Image {
  Tensor<T> chw;  // [C, H, W]
  ColorSpace color_space = ColorSpace::kRgb;

  Image() = default;
  Image(Tensor<T> t, ColorSpace cs) : chw(std::move(t)), color_space(cs) {}

  static Image zeros(int channels, int height, int width) {
    return Image(Tensor<T>({channels, height, width}),
                 channels == 1 ? ColorSpace::kGray : ColorSpace::kRgb);
  }

  int channels() const { return chw.dim(0); }
  int height() const { return chw.dim(1); }
  int width() const { return chw.dim(2); }

  T& at(int y, int x, int c) { return chw.at(c, y, x); }
  const T& at(int y, int x, int c) const { return chw.at(c, y, x); }
};

template <typename T>
void validate_image(const Image<T>& img, const std::string& what) {
  if (img.chw.rank() != 3) throw ShapeError(what + ": image tensor must be rank 3");
  const int c = img.channels();
  if (c != 1 && c != 3) throw ShapeError(what + ": channel count must be 1 or 3");
  if (img.height() < 1 || img.width() < 1) throw ShapeError(what + ": empty image");
  if (!img.chw.all_finite()) throw NumericError(what + ": image contains NaN/Inf");
}

template <typename T>
Image<T> clamp01(Image<T> img) {
  for (auto& v : img.chw.vec()) v = std::min(T(1), std::max(T(0), v));
  return img;
}

}  // namespace deshadow
