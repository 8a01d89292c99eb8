#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deshadow/image.hpp"
#include "deshadow/kernels.hpp"

namespace deshadow {

enum class SsimMode { kGlobal, kWindowed };
enum class MseReduction { kMean, kSum };

/// Loss/metric constants. C1, C2 are defined on the 0-255 scale, so SSIM
/// statistics are always computed there regardless of the [0,1] input range.
struct LossConfig {
  double lambda_ssim = 0.2;
  double c1 = 6.5025;    // (0.01 * 255)^2
  double c2 = 58.5225;   // (0.03 * 255)^2
  SsimMode ssim_mode = SsimMode::kGlobal;
  double metric_range = 255.0;
  MseReduction mse_reduction = MseReduction::kMean;
  // When true, the SSIM term enters the total loss with its literal sign
  // (+lambda * SSIM) instead of the dissimilarity form lambda * (1 - SSIM).
  bool literal_ssim_term = false;
  int ssim_window = 11;
  double ssim_sigma = 1.5;
};

inline const char* to_string(SsimMode m) {
  return m == SsimMode::kGlobal ? "global" : "windowed";
}

inline SsimMode ssim_mode_from_string(const std::string& s) {
  if (s == "global") return SsimMode::kGlobal;
  if (s == "windowed") return SsimMode::kWindowed;
  throw ConfigError("unknown ssim mode: " + s);
}

// --- Pure reference metrics (double precision) --------------------------------

template <typename T>
double mse_loss(const Image<T>& pred, const Image<T>& target,
                MseReduction reduction = MseReduction::kMean) {
  require_same_shape(pred.chw, target.chw, "mse_loss");
  double acc = 0;
  for (std::size_t i = 0; i < pred.chw.numel(); ++i) {
    const double d = static_cast<double>(pred.chw[i]) - static_cast<double>(target.chw[i]);
    acc += d * d;
  }
  return reduction == MseReduction::kMean ? acc / static_cast<double>(pred.chw.numel())
                                          : acc;
}

namespace detail {

struct SsimStats {
  double mu_x = 0, mu_y = 0, var_x = 0, var_y = 0, cov = 0;
};

inline double ssim_formula(const SsimStats& s, double c1, double c2) {
  const double num = (2.0 * s.mu_x * s.mu_y + c1) * (2.0 * s.cov + c2);
  const double den =
      (s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1) * (s.var_x + s.var_y + c2);
  return num / den;
}

}  // namespace detail

/// Structural similarity. Global mode evaluates the formula once with
/// whole-image statistics; windowed mode averages it over 11x11 Gaussian
/// windows (sigma 1.5, valid region), per channel. Inputs in [0,1] are
/// rescaled to 0-255 before statistics.
template <typename T>
double ssim(const Image<T>& x, const Image<T>& y, const LossConfig& cfg = {}) {
  require_same_shape(x.chw, y.chw, "ssim");
  const double r = cfg.metric_range;
  if (cfg.ssim_mode == SsimMode::kGlobal) {
    detail::SsimStats s;
    const std::size_t n = x.chw.numel();
    for (std::size_t i = 0; i < n; ++i) {
      s.mu_x += r * static_cast<double>(x.chw[i]);
      s.mu_y += r * static_cast<double>(y.chw[i]);
    }
    s.mu_x /= static_cast<double>(n);
    s.mu_y /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = r * static_cast<double>(x.chw[i]) - s.mu_x;
      const double dy = r * static_cast<double>(y.chw[i]) - s.mu_y;
      s.var_x += dx * dx;
      s.var_y += dy * dy;
      s.cov += dx * dy;
    }
    s.var_x /= static_cast<double>(n);
    s.var_y /= static_cast<double>(n);
    s.cov /= static_cast<double>(n);
    return detail::ssim_formula(s, cfg.c1, cfg.c2);
  }

  const int h = x.height(), w = x.width(), c = x.channels();
  if (h < cfg.ssim_window || w < cfg.ssim_window) {
    throw ShapeError("ssim: image smaller than the 11x11 window");
  }
  const auto taps = gaussian_taps<double>(cfg.ssim_window / 2, cfg.ssim_sigma);
  Tensor<double> xs = x.chw.template cast<double>();
  Tensor<double> ys = y.chw.template cast<double>();
  for (auto& v : xs.vec()) v *= r;
  for (auto& v : ys.vec()) v *= r;
  auto gblur = [&](const Tensor<double>& t) {
    return conv1d_valid(conv1d_valid(t, taps, 1), taps, 0);
  };
  Tensor<double> xx = xs, yy2 = ys, xy = xs;
  for (std::size_t i = 0; i < xx.numel(); ++i) {
    xy[i] = xs[i] * ys[i];
    xx[i] *= xs[i];
    yy2[i] *= ys[i];
  }
  Tensor<double> mu_x = gblur(xs), mu_y = gblur(ys);
  Tensor<double> m_xx = gblur(xx), m_yy = gblur(yy2), m_xy = gblur(xy);
  double acc = 0;
  for (std::size_t i = 0; i < mu_x.numel(); ++i) {
    detail::SsimStats s;
    s.mu_x = mu_x[i];
    s.mu_y = mu_y[i];
    s.var_x = m_xx[i] - mu_x[i] * mu_x[i];
    s.var_y = m_yy[i] - mu_y[i] * mu_y[i];
    s.cov = m_xy[i] - mu_x[i] * mu_y[i];
    acc += detail::ssim_formula(s, cfg.c1, cfg.c2);
  }
  (void)c;
  return acc / static_cast<double>(mu_x.numel());
}

/// Peak signal-to-noise ratio in dB on the 0-255 scale. Identical images map
/// to +infinity.
template <typename T>
double psnr(const Image<T>& pred, const Image<T>& target, double range = 255.0) {
  require_same_shape(pred.chw, target.chw, "psnr");
  double acc = 0;
  for (std::size_t i = 0; i < pred.chw.numel(); ++i) {
    const double d =
        range * (static_cast<double>(pred.chw[i]) - static_cast<double>(target.chw[i]));
    acc += d * d;
  }
  const double mse255 = acc / static_cast<double>(pred.chw.numel());
  if (mse255 == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(range * range / mse255);
}

/// Root mean squared error in 0-255 units.
template <typename T>
double rmse(const Image<T>& pred, const Image<T>& target) {
  return std::sqrt(mse_loss(pred, target)) * 255.0;
}

// --- Reports -------------------------------------------------------------------

struct MetricsReport {
  struct Entry {
    std::string id;
    double psnr = 0, ssim = 0, rmse = 0;
  };
  std::string dataset, split, method;
  std::vector<Entry> per_image;

  double mean_psnr() const { return mean([](const Entry& e) { return e.psnr; }); }
  double mean_ssim() const { return mean([](const Entry& e) { return e.ssim; }); }
  double mean_rmse() const { return mean([](const Entry& e) { return e.rmse; }); }

 private:
  template <typename F>
  double mean(F f) const {
    if (per_image.empty()) return 0;
    double acc = 0;
    for (const auto& e : per_image) acc += f(e);
    return acc / static_cast<double>(per_image.size());
  }
};

namespace detail {

inline nlohmann::json metric_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double metric_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw DataError("bad metric value: " + s);
  }
  return j.get<double>();
}

inline std::string fixed2(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

}  // namespace detail

/// Delimited table, Table-2 style column layout, 2 decimal places.
inline std::string to_tsv(const MetricsReport& r) {
  std::ostringstream os;
  os << "# dataset=" << r.dataset << " split=" << r.split << " method=" << r.method
     << "\n";
  os << "id\tPSNR\tSSIM\tRMSE\n";
  for (const auto& e : r.per_image) {
    os << e.id << "\t" << detail::fixed2(e.psnr) << "\t" << detail::fixed2(e.ssim)
       << "\t" << detail::fixed2(e.rmse) << "\n";
  }
  os << "mean\t" << detail::fixed2(r.mean_psnr()) << "\t" << detail::fixed2(r.mean_ssim())
     << "\t" << detail::fixed2(r.mean_rmse()) << "\n";
  return os.str();
}

/// Structured document, full precision.
inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["dataset"] = r.dataset;
  j["split"] = r.split;
  j["method"] = r.method;
  j["per_image"] = nlohmann::json::array();
  for (const auto& e : r.per_image) {
    j["per_image"].push_back({{"id", e.id},
                              {"psnr", detail::metric_json(e.psnr)},
                              {"ssim", detail::metric_json(e.ssim)},
                              {"rmse", detail::metric_json(e.rmse)}});
  }
  j["aggregates"] = {{"psnr", detail::metric_json(r.mean_psnr())},
                     {"ssim", detail::metric_json(r.mean_ssim())},
                     {"rmse", detail::metric_json(r.mean_rmse())}};
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.method = j.at("method").get<std::string>();
  for (const auto& e : j.at("per_image")) {
    r.per_image.push_back({e.at("id").get<std::string>(),
                           detail::metric_from_json(e.at("psnr")),
                           detail::metric_from_json(e.at("ssim")),
                           detail::metric_from_json(e.at("rmse"))});
  }
  return r;
}

}  // namespace deshadow
