#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "deshadow/image.hpp"

namespace deshadow {

/// Decode an 8-bit PNG/JPEG file to a float image in [0,1] (RGB order).
inline Image<float> read_image(const std::string& path, bool force_rgb = true) {
  cv::Mat m = cv::imread(path, force_rgb ? cv::IMREAD_COLOR : cv::IMREAD_UNCHANGED);
  if (m.empty()) throw DataError("cannot read image: " + path);
  if (m.depth() != CV_8U) m.convertTo(m, CV_8U);
  const int h = m.rows, w = m.cols, c = m.channels();
  if (c != 1 && c != 3) throw DataError("unsupported channel count in " + path);
  Image<float> img = Image<float>::zeros(c, h, w);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        // OpenCV loads BGR; store RGB planes.
        const int src = c == 3 ? (c - 1 - ch) : ch;
        img.chw.at(ch, y, x) = static_cast<float>(row[x * c + src]) / 255.0f;
      }
    }
  }
  return img;
}

/// Quantize to 8-bit and write PNG (or another format by extension).
inline void write_image(const std::string& path, const Image<float>& img) {
  const int h = img.height(), w = img.width(), c = img.channels();
  cv::Mat m(h, w, c == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < h; ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        const int dst = c == 3 ? (c - 1 - ch) : ch;
        const float v = std::min(1.0f, std::max(0.0f, img.chw.at(ch, y, x)));
        row[x * c + dst] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  if (!cv::imwrite(path, m)) throw DataError("cannot write image: " + path);
}

// --- PFM (portable float map): bit-exact storage for pyramid bands -----------

/// Writes 32-bit floats, little-endian (negative scale), rows bottom-up.
inline void write_pfm(const std::string& path, const Image<float>& img) {
  const int h = img.height(), w = img.width(), c = img.channels();
  if (c != 1 && c != 3) throw DataError("pfm supports 1 or 3 channels");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write pfm: " + path);
  f << (c == 3 ? "PF" : "Pf") << "\n" << w << " " << h << "\n" << "-1.0" << "\n";
  std::vector<float> row(static_cast<std::size_t>(w) * c);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        row[static_cast<std::size_t>(x) * c + ch] = img.chw.at(ch, y, x);
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!f) throw DataError("failed writing pfm: " + path);
}

inline Image<float> read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open pfm: " + path);
  std::string magic;
  int w = 0, h = 0;
  double pfm_scale = 0;
  f >> magic >> w >> h >> pfm_scale;
  if ((magic != "PF" && magic != "Pf") || w < 1 || h < 1) {
    throw DataError("bad pfm header: " + path);
  }
  if (pfm_scale >= 0) throw DataError("big-endian pfm not supported: " + path);
  f.get();  // single whitespace after the scale line
  const int c = magic == "PF" ? 3 : 1;
  Image<float> img = Image<float>::zeros(c, h, w);
  std::vector<float> row(static_cast<std::size_t>(w) * c);
  for (int y = h - 1; y >= 0; --y) {
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!f) throw DataError("truncated pfm: " + path);
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        img.chw.at(ch, y, x) = row[static_cast<std::size_t>(x) * c + ch];
  }
  return img;
}

}  // namespace deshadow
