#pragma once

#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "deshadow/aan.hpp"
#include "deshadow/gmft.hpp"
#include "deshadow/pyramid.hpp"

namespace deshadow {

enum class Ablation { kFull, kNoAan, kNoGmft };

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::kNoAan: return "no_aan";
    case Ablation::kNoGmft: return "no_gmft";
    default: return "full";
  }
}

inline Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::kFull;
  if (s == "no_aan") return Ablation::kNoAan;
  if (s == "no_gmft") return Ablation::kNoGmft;
  throw ConfigError("unknown ablation: " + s);
}

/// Architecture hyperparameters the paper leaves open.
struct ModelConfig {
  int levels = 3;
  bool aan_enabled = true;
  bool gmft_enabled = true;
  int in_channels = 3;
  int feature_channels = 32;
  int maa_stages = 3;
  int gia_blocks = 2;
  int attention_heads = 2;
  int attention_window = 8;
  int dgfn_expansion = 2;
  std::vector<int> spp_pools = {1, 2, 4};
  std::uint64_t seed = 17;

  AanConfig aan() const { return {in_channels, feature_channels, maa_stages, spp_pools}; }
  GmftConfig gmft() const {
    return {in_channels, feature_channels, gia_blocks,
            attention_heads, attention_window, dgfn_expansion};
  }

  void apply_ablation(Ablation a) {
    if (a == Ablation::kNoAan) aan_enabled = false;
    if (a == Ablation::kNoGmft) gmft_enabled = false;
  }
};

inline void validate_config(const ModelConfig& cfg) {
  if (cfg.levels < 0 || cfg.levels > 5) throw ConfigError("levels must be in [0,5]");
  if (cfg.in_channels != 1 && cfg.in_channels != 3)
    throw ConfigError("in_channels must be 1 or 3");
  if (cfg.feature_channels < 2 || cfg.feature_channels % 2 != 0)
    throw ConfigError("feature_channels must be even and >= 2");
  if (cfg.maa_stages < 2) throw ConfigError("maa_stages must be >= 2");
  if (cfg.gia_blocks < 1) throw ConfigError("gia_blocks must be >= 1");
  if (cfg.attention_heads < 1 || (cfg.feature_channels / 2) % cfg.attention_heads != 0)
    throw ConfigError("attention width (feature_channels/2) must divide by heads");
  if (cfg.attention_window < 1) throw ConfigError("attention_window must be >= 1");
  if (cfg.dgfn_expansion < 1) throw ConfigError("dgfn_expansion must be >= 1");
  if (cfg.spp_pools.empty()) throw ConfigError("spp_pools must be non-empty");
  for (std::size_t i = 0; i < cfg.spp_pools.size(); ++i) {
    if (cfg.spp_pools[i] < 1 || (i > 0 && cfg.spp_pools[i] <= cfg.spp_pools[i - 1]))
      throw ConfigError("spp_pools must be strictly increasing positive");
  }
}

/// Human-readable key-value serialization (one `key value` pair per line).
inline std::string config_to_text(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "levels " << cfg.levels << "\n";
  os << "aan_enabled " << (cfg.aan_enabled ? 1 : 0) << "\n";
  os << "gmft_enabled " << (cfg.gmft_enabled ? 1 : 0) << "\n";
  os << "in_channels " << cfg.in_channels << "\n";
  os << "feature_channels " << cfg.feature_channels << "\n";
  os << "maa_stages " << cfg.maa_stages << "\n";
  os << "gia_blocks " << cfg.gia_blocks << "\n";
  os << "attention_heads " << cfg.attention_heads << "\n";
  os << "attention_window " << cfg.attention_window << "\n";
  os << "dgfn_expansion " << cfg.dgfn_expansion << "\n";
  os << "spp_pools";
  for (int p : cfg.spp_pools) os << " " << p;
  os << "\n";
  os << "seed " << cfg.seed << "\n";
  return os.str();
}

inline ModelConfig config_from_text(const std::string& text) {
  ModelConfig cfg;
  cfg.spp_pools.clear();
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "levels") ls >> cfg.levels;
    else if (key == "aan_enabled") { int v; ls >> v; cfg.aan_enabled = v != 0; }
    else if (key == "gmft_enabled") { int v; ls >> v; cfg.gmft_enabled = v != 0; }
    else if (key == "in_channels") ls >> cfg.in_channels;
    else if (key == "feature_channels") ls >> cfg.feature_channels;
    else if (key == "maa_stages") ls >> cfg.maa_stages;
    else if (key == "gia_blocks") ls >> cfg.gia_blocks;
    else if (key == "attention_heads") ls >> cfg.attention_heads;
    else if (key == "attention_window") ls >> cfg.attention_window;
    else if (key == "dgfn_expansion") ls >> cfg.dgfn_expansion;
    else if (key == "spp_pools") { int v; while (ls >> v) cfg.spp_pools.push_back(v); }
    else if (key == "seed") ls >> cfg.seed;
    else throw DataError("unknown config key: " + key);
  }
  validate_config(cfg);
  return cfg;
}

inline std::uint64_t config_hash(const ModelConfig& cfg) {
  return fnv1a(config_to_text(cfg));
}

/// Deterministic init from (config, seed). Each top-level module draws from
/// its own derived stream, so ablation switches do not shift the others.
template <typename T>
ParamStore<T> init_model_params(const ModelConfig& cfg) {
  validate_config(cfg);
  ParamStore<T> store;
  if (cfg.aan_enabled) {
    Rng rng = derived_rng(cfg.seed, "aan");
    init_aan_params(store, cfg.aan(), rng);
  }
  if (cfg.gmft_enabled) {
    for (int l = 0; l < cfg.levels; ++l) {
      Rng rng = derived_rng(cfg.seed, "gmft" + std::to_string(l));
      init_gmft_params(store, "gmft" + std::to_string(l), cfg.gmft(), rng);
    }
  }
  return store;
}

/// Closed-form parameter count implied by the config.
inline std::size_t predicted_param_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  if (cfg.aan_enabled) n += aan_param_count(cfg.aan());
  if (cfg.gmft_enabled) n += static_cast<std::size_t>(cfg.levels) * gmft_param_count(cfg.gmft());
  return n;
}

template <typename T>
ag::Value<T> pyr_up_value(const ag::Value<T>& x, int target_h, int target_w) {
  ag::Value<T> t = ag::zero_interleave_op(x, target_h, target_w);
  t = ag::blur1d_reflect_op(t, pyramid_taps_up<T>(), 1);
  return ag::blur1d_reflect_op(t, pyramid_taps_up<T>(), 0);
}

template <typename T>
struct ForwardTrace {
  ag::Value<T> preclamp;                 // reconstructed, before clamping
  ag::Value<T> low_band_out;             // corrected low band
  std::vector<ag::Value<T>> high_bands_out;  // corrected high bands
  std::vector<Tensor<T>> high_bands_in;  // decomposition inputs
  Tensor<T> low_band_in;
};

/// Differentiable end-to-end map. Gradients flow through the band
/// corrections and the reconstruction; the decomposition input is constant.
template <typename T>
ForwardTrace<T> forward_trace(const Image<T>& img, ParamGraph<T>& pg,
                              const ModelConfig& cfg) {
  validate_config(cfg);
  validate_image(img, "forward");
  if (cfg.levels > 0 && (std::min(img.height(), img.width()) >> cfg.levels) < 4) {
    throw ShapeError("forward: image too small for configured levels");
  }
  if (img.channels() != cfg.in_channels) {
    throw ShapeError("forward: image channels do not match config");
  }
  Pyramid<T> pyr = decompose(img, cfg.levels);

  ForwardTrace<T> tr;
  tr.low_band_in = pyr.low.chw;
  for (const auto& b : pyr.highs) tr.high_bands_in.push_back(b.chw);

  ag::Value<T> low = ag::constant(pyr.low.chw);
  if (cfg.aan_enabled) {
    AanConfig acfg = cfg.aan();
    AanParams<T> ap = load_aan_params(pg, acfg);
    low = aan_forward(low, ap);
  }
  tr.low_band_out = low;

  std::vector<ag::Value<T>> highs;
  for (int l = 0; l < cfg.levels; ++l) {
    ag::Value<T> band = ag::constant(pyr.highs[static_cast<std::size_t>(l)].chw);
    if (cfg.gmft_enabled) {
      GmftParams<T> gp = load_gmft_params(pg, "gmft" + std::to_string(l), cfg.gmft());
      band = gmft_forward(band, gp);
    }
    highs.push_back(band);
  }
  tr.high_bands_out = highs;

  ag::Value<T> acc = low;
  for (int l = cfg.levels - 1; l >= 0; --l) {
    const auto& shape = tr.high_bands_in[static_cast<std::size_t>(l)].shape();
    acc = ag::add(pyr_up_value(acc, shape[1], shape[2]),
                  highs[static_cast<std::size_t>(l)]);
  }
  tr.preclamp = acc;
  return tr;
}

/// Inference entry point: clamped output plus the pre-clamp raster.
template <typename T>
std::pair<Image<T>, Tensor<T>> forward_with_preclamp(const Image<T>& img,
                                                     const ParamStore<T>& params,
                                                     const ModelConfig& cfg) {
  ag::NoGradGuard ng;
  ParamGraph<T> pg(params, /*trainable=*/false);
  ForwardTrace<T> tr = forward_trace(img, pg, cfg);
  Tensor<T> preclamp = tr.preclamp.tensor();
  Image<T> out(preclamp, img.color_space);
  return {clamp01(std::move(out)), std::move(preclamp)};
}

template <typename T>
Image<T> forward(const Image<T>& img, const ParamStore<T>& params,
                 const ModelConfig& cfg) {
  return forward_with_preclamp(img, params, cfg).first;
}

}  // namespace deshadow
