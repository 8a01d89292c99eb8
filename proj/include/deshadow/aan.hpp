#pragma once

#include <string>
#include <utility>
#include <vector>

#include "deshadow/ops.hpp"
#include "deshadow/params.hpp"

namespace deshadow {

/// Per-channel spatial normalization with learnable affine:
/// (x - mu_c) / sqrt(var_c + eps) * gamma + beta. Shared by the CNR block and
/// the transformer pre-norms.
template <typename T>
ag::Value<T> channel_norm(const ag::Value<T>& x, const ag::Value<T>& gamma,
                          const ag::Value<T>& beta, T eps) {
  const int h = x.tensor().dim(1), w = x.tensor().dim(2);
  ag::Value<T> mu = ag::spatial_mean(x);
  ag::Value<T> xc = ag::sub(x, ag::broadcast_spatial(mu, h, w));
  ag::Value<T> var = ag::spatial_mean(ag::mul(xc, xc));
  ag::Value<T> inv = ag::rsqrt_shift(var, eps);
  ag::Value<T> xn = ag::mul(xc, ag::broadcast_spatial(inv, h, w));
  return ag::add(ag::mul(xn, ag::broadcast_spatial(gamma, h, w)),
                 ag::broadcast_spatial(beta, h, w));
}

template <typename T>
struct CnrParams {
  ag::Value<T> gamma;  // [C]
  ag::Value<T> beta;   // [C]
  T eps = T(1e-5);
};

/// Channel-wise Normalized Residual block.
template <typename T>
ag::Value<T> cnr_block(const ag::Value<T>& x, const CnrParams<T>& p) {
  if (x.tensor().rank() != 3) throw ShapeError("cnr_block: input must be CHW");
  const int c = x.tensor().dim(0);
  if (p.gamma.tensor().numel() != static_cast<std::size_t>(c) ||
      p.beta.tensor().numel() != static_cast<std::size_t>(c)) {
    throw ShapeError("cnr_block: gamma/beta length does not match channel count");
  }
  if (p.eps <= T(0)) throw ConfigError("cnr_block: eps must be positive");
  if (!x.tensor().all_finite()) throw NumericError("cnr_block: non-finite input");
  return channel_norm(x, p.gamma, p.beta, p.eps);
}

template <typename T>
struct MaaParams {
  struct Conv {
    ag::Value<T> w, b;
  };
  std::vector<Conv> stages;     // cascaded 3x3 convolutions
  Conv mlp1, mlp2;              // per-pixel two-layer perceptron (1x1 convs)
  std::vector<int> spp_pools;   // strictly increasing pooling grid sizes
  Conv attn;                    // 1x1 conv -> one weight map per concat group
  Conv proj;                    // 1x1 conv back to the input channel count
};

/// Attention weight maps in [0,1], one channel per concat group
/// (MLP group + one per pooling size).
template <typename T>
ag::Value<T> maa_attention(const ag::Value<T>& features, const MaaParams<T>& p) {
  return ag::sigmoid(ag::conv2d(features, p.attn.w, p.attn.b));
}

/// Multi-stage Attentive Aggregation:
/// Concat(MLP(u), SPP(u)) weighted elementwise by Attention(u), then projected
/// back to the input width, where u is the cascaded-convolution feature map.
template <typename T>
ag::Value<T> maa_block(const ag::Value<T>& x, const MaaParams<T>& p) {
  if (p.stages.size() < 2) throw ConfigError("maa_block: needs at least 2 stages");
  for (std::size_t i = 1; i < p.spp_pools.size(); ++i) {
    if (p.spp_pools[i] <= p.spp_pools[i - 1]) {
      throw ConfigError("maa_block: spp pools must be strictly increasing");
    }
  }
  const int c = x.tensor().dim(0), h = x.tensor().dim(1), w = x.tensor().dim(2);
  ag::Value<T> u = x;
  for (const auto& s : p.stages) u = ag::relu(ag::conv2d(u, s.w, s.b));

  ag::Value<T> mlp = ag::conv2d(ag::relu(ag::conv2d(u, p.mlp1.w, p.mlp1.b)), p.mlp2.w,
                                p.mlp2.b);
  ag::Value<T> cat = mlp;
  for (int pool : p.spp_pools) {
    ag::Value<T> pooled = ag::bilinear_resize_op(ag::avg_pool_grid_op(u, pool), h, w);
    cat = ag::concat_c(cat, pooled);
  }

  ag::Value<T> att = maa_attention(u, p);
  const int groups = 1 + static_cast<int>(p.spp_pools.size());
  ag::Value<T> fused;
  for (int g = 0; g < groups; ++g) {
    ag::Value<T> part = ag::mul_chan_bcast(ag::slice_c(cat, g * c, (g + 1) * c),
                                           ag::slice_c(att, g, g + 1));
    fused = g == 0 ? part : ag::concat_c(fused, part);
  }
  return ag::conv2d(fused, p.proj.w, p.proj.b);
}

template <typename T>
struct AanParams {
  ag::Value<T> embed_w, embed_b;  // 3x3, image channels -> F
  CnrParams<T> cnr;
  MaaParams<T> maa;
  ag::Value<T> head_w, head_b;    // 3x3, 2F -> image channels, zero-init
};

/// Attention-Aggregation Network on the low-frequency band, residual form:
/// low + head(concat(cnr_branch, maa_branch)).
template <typename T>
ag::Value<T> aan_forward(const ag::Value<T>& low, const AanParams<T>& p) {
  ag::Value<T> e = ag::conv2d(low, p.embed_w, p.embed_b);
  ag::Value<T> a = cnr_block(e, p.cnr);
  ag::Value<T> b = maa_block(e, p.maa);
  ag::Value<T> head = ag::conv2d(ag::concat_c(a, b), p.head_w, p.head_b);
  return ag::add(low, head);
}

// --- Parameter registration / loading ----------------------------------------

struct AanConfig {
  int in_channels = 3;
  int feature_channels = 32;
  int maa_stages = 3;
  std::vector<int> spp_pools = {1, 2, 4};
};

template <typename T>
void init_aan_params(ParamStore<T>& store, const AanConfig& cfg, Rng& rng) {
  const int f = cfg.feature_channels, c = cfg.in_channels;
  add_conv(store, "aan.embed", f, c, 3, rng);
  add_norm_affine(store, "aan.cnr", f);
  for (int i = 0; i < cfg.maa_stages; ++i) {
    add_conv(store, "aan.maa.stage" + std::to_string(i), f, f, 3, rng);
  }
  add_conv(store, "aan.maa.mlp1", f, f, 1, rng);
  add_conv(store, "aan.maa.mlp2", f, f, 1, rng);
  const int groups = 1 + static_cast<int>(cfg.spp_pools.size());
  add_conv(store, "aan.maa.attn", groups, f, 1, rng);
  add_conv(store, "aan.maa.proj", f, (groups)*f, 1, rng);
  add_conv(store, "aan.head", c, 2 * f, 3, rng, /*zero=*/true);
}

inline std::size_t conv_count(int out_c, int in_c, int k) {
  return static_cast<std::size_t>(out_c) * in_c * k * k + out_c;
}

inline std::size_t aan_param_count(const AanConfig& cfg) {
  const int f = cfg.feature_channels, c = cfg.in_channels;
  const int groups = 1 + static_cast<int>(cfg.spp_pools.size());
  std::size_t n = conv_count(f, c, 3);                  // embed
  n += 2 * static_cast<std::size_t>(f);                 // cnr affine
  n += static_cast<std::size_t>(cfg.maa_stages) * conv_count(f, f, 3);
  n += 2 * conv_count(f, f, 1);                         // mlp
  n += conv_count(groups, f, 1);                        // attention maps
  n += conv_count(f, groups * f, 1);                    // projection
  n += conv_count(c, 2 * f, 3);                         // head
  return n;
}

template <typename T>
AanParams<T> load_aan_params(ParamGraph<T>& pg, const AanConfig& cfg, T eps = T(1e-5)) {
  AanParams<T> p;
  p.embed_w = pg.get("aan.embed.w");
  p.embed_b = pg.get("aan.embed.b");
  p.cnr.gamma = pg.get("aan.cnr.gamma");
  p.cnr.beta = pg.get("aan.cnr.beta");
  p.cnr.eps = eps;
  for (int i = 0; i < cfg.maa_stages; ++i) {
    const std::string s = "aan.maa.stage" + std::to_string(i);
    p.maa.stages.push_back({pg.get(s + ".w"), pg.get(s + ".b")});
  }
  p.maa.mlp1 = {pg.get("aan.maa.mlp1.w"), pg.get("aan.maa.mlp1.b")};
  p.maa.mlp2 = {pg.get("aan.maa.mlp2.w"), pg.get("aan.maa.mlp2.b")};
  p.maa.spp_pools = cfg.spp_pools;
  p.maa.attn = {pg.get("aan.maa.attn.w"), pg.get("aan.maa.attn.b")};
  p.maa.proj = {pg.get("aan.maa.proj.w"), pg.get("aan.maa.proj.b")};
  p.head_w = pg.get("aan.head.w");
  p.head_b = pg.get("aan.head.b");
  return p;
}

}  // namespace deshadow
