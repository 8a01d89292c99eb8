#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "deshadow/aan.hpp"  // channel_norm
#include "deshadow/ops.hpp"
#include "deshadow/params.hpp"

namespace deshadow {

template <typename T>
struct ConvParams {
  ag::Value<T> w, b;
};

/// x + conv(relu(conv(x))), shape preserved.
template <typename T>
ag::Value<T> res_block(const ag::Value<T>& x, const ConvParams<T>& c1,
                       const ConvParams<T>& c2) {
  return ag::add(x, ag::conv2d(ag::relu(ag::conv2d(x, c1.w, c1.b)), c2.w, c2.b));
}

template <typename T>
struct GiaParams {
  ag::Value<T> wg;  // [C,C,1,1] channel gating map
  ag::Value<T> bg;  // [C]
};

/// Gated Identity Attention: x * sigmoid(Wg x) + bg.
template <typename T>
ag::Value<T> gia_block(const ag::Value<T>& x, const GiaParams<T>& p) {
  const int c = x.tensor().dim(0);
  if (p.wg.tensor().dim(0) != c || p.wg.tensor().dim(1) != c) {
    throw ShapeError("gia_block: gating map must be square in channels");
  }
  const int h = x.tensor().dim(1), w = x.tensor().dim(2);
  ag::Value<T> gate = ag::sigmoid(ag::conv2d(x, p.wg));
  return ag::add(ag::mul(x, gate), ag::broadcast_spatial(p.bg, h, w));
}

/// Split channels into halves (a, b) and return a * b.
template <typename T>
ag::Value<T> simple_gate(const ag::Value<T>& x) {
  const int c = x.tensor().dim(0);
  if (c % 2 != 0) throw ShapeError("simple_gate: channel count must be even");
  return ag::mul(ag::slice_c(x, 0, c / 2), ag::slice_c(x, c / 2, c));
}

/// x scaled per channel by a linear map of the pooled channel vector.
template <typename T>
ag::Value<T> channel_attention(const ag::Value<T>& x, const ConvParams<T>& p) {
  const int c = x.tensor().dim(0), h = x.tensor().dim(1), w = x.tensor().dim(2);
  ag::Value<T> pooled = ag::reshape(ag::spatial_mean(x), {1, c});
  ag::Value<T> s = ag::reshape(ag::linear(pooled, p.w, p.b), {c});
  return ag::mul(x, ag::broadcast_spatial(s, h, w));
}

template <typename T>
struct AttentionParams {
  ConvParams<T> q, k, v, out;
  int heads = 1;
};

/// Multi-head scaled dot-product attention over token rows [B, N, D].
/// scale overrides 1/sqrt(D/heads) when positive (used by the channel pass).
template <typename T>
ag::Value<T> self_attention_batched(const ag::Value<T>& tokens,
                                    const AttentionParams<T>& p, T scale = T(0)) {
  const int d = tokens.tensor().dim(2);
  if (d % p.heads != 0) throw ShapeError("self_attention: width not divisible by heads");
  const int dk = d / p.heads;
  if (scale <= T(0)) scale = T(1) / std::sqrt(static_cast<T>(dk));
  ag::Value<T> q = ag::to_heads(ag::linear(tokens, p.q.w, p.q.b), p.heads);
  ag::Value<T> k = ag::to_heads(ag::linear(tokens, p.k.w, p.k.b), p.heads);
  ag::Value<T> v = ag::to_heads(ag::linear(tokens, p.v.w, p.v.b), p.heads);
  ag::Value<T> logits = ag::scale(ag::bmm_nt(q, k), scale);
  ag::Value<T> probs = ag::softmax_rows(logits);
  ag::Value<T> ctx = ag::from_heads(ag::bmm_nn(probs, v), p.heads);
  return ag::linear(ctx, p.out.w, p.out.b);
}

/// Token-matrix form [N, D].
template <typename T>
ag::Value<T> self_attention(const ag::Value<T>& tokens, const AttentionParams<T>& p) {
  const int n = tokens.tensor().dim(0), d = tokens.tensor().dim(1);
  ag::Value<T> batched = ag::reshape(tokens, {1, n, d});
  return ag::reshape(self_attention_batched(batched, p), {n, d});
}

/// Global attention when the band fits inside one window, else windowed.
inline int effective_window(int cfg_window, int h, int w) {
  if (cfg_window <= 0) return 0;
  if (h <= cfg_window && w <= cfg_window) return 0;
  return cfg_window;
}

/// Attention over pixels as tokens; windows bound the token count.
template <typename T>
ag::Value<T> spatial_attention(const ag::Value<T>& x, const AttentionParams<T>& p,
                               int window) {
  const int c = x.tensor().dim(0), h = x.tensor().dim(1), w = x.tensor().dim(2);
  const int win = effective_window(window, h, w);
  if (win == 0) {
    ag::Value<T> t = ag::chw_to_tokens(x);
    return ag::tokens_to_chw(self_attention(t, p), h, w);
  }
  ag::Value<T> t = ag::window_partition(x, win);
  return ag::window_merge(self_attention_batched(t, p), c, h, w, win);
}

/// Attention over channels as tokens. Projections are 1x1 channel maps; each
/// token's feature vector is its H*W spatial map, so the dot-product scale is
/// 1/sqrt(H*W).
template <typename T>
ag::Value<T> channel_token_attention(const ag::Value<T>& x, const AttentionParams<T>& p) {
  const int c = x.tensor().dim(0), h = x.tensor().dim(1), w = x.tensor().dim(2);
  if (c % p.heads != 0) throw ShapeError("channel attention: channels not divisible by heads");
  const int ch = c / p.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(h) * static_cast<T>(w));
  auto proj = [&](const ConvParams<T>& pr) {
    return ag::reshape(ag::conv2d(x, pr.w, pr.b), {p.heads, ch, h * w});
  };
  ag::Value<T> q = proj(p.q), k = proj(p.k), v = proj(p.v);
  ag::Value<T> probs = ag::softmax_rows(ag::scale(ag::bmm_nt(q, k), scale));
  ag::Value<T> ctx = ag::reshape(ag::bmm_nn(probs, v), {c, h, w});
  return ag::conv2d(ctx, p.out.w, p.out.b);
}

template <typename T>
struct BmtParams {
  ag::Value<T> norm1_gamma, norm1_beta;
  AttentionParams<T> spatial;
  ag::Value<T> norm2_gamma, norm2_beta;
  AttentionParams<T> channel;
  int window = 8;
  T eps = T(1e-5);
};

/// Bi-directional multi-head transformer block: pre-normalized spatial-token
/// attention and channel-token attention, each with a residual, in sequence.
template <typename T>
ag::Value<T> bmt_block(const ag::Value<T>& x, const BmtParams<T>& p) {
  ag::Value<T> n1 = channel_norm(x, p.norm1_gamma, p.norm1_beta, p.eps);
  ag::Value<T> x2 = ag::add(x, spatial_attention(n1, p.spatial, p.window));
  ag::Value<T> n2 = channel_norm(x2, p.norm2_gamma, p.norm2_beta, p.eps);
  return ag::add(x2, channel_token_attention(n2, p.channel));
}

template <typename T>
struct DgfnParams {
  ConvParams<T> w1;  // expansion, C -> eC
  ConvParams<T> wg;  // gate, C -> eC
  ConvParams<T> w2;  // contraction, eC -> C
};

/// Dual Gated Feed-forward Network with residual:
/// x + W2(ReLU(W1 x + b1) * sigmoid(Wg x + bg)) + b2.
template <typename T>
ag::Value<T> dgfn(const ag::Value<T>& x, const DgfnParams<T>& p) {
  ag::Value<T> u = ag::relu(ag::conv2d(x, p.w1.w, p.w1.b));
  ag::Value<T> g = ag::sigmoid(ag::conv2d(x, p.wg.w, p.wg.b));
  return ag::add(x, ag::conv2d(ag::mul(u, g), p.w2.w, p.w2.b));
}

template <typename T>
struct GmftParams {
  ConvParams<T> embed;              // 3x3, image channels -> F
  ConvParams<T> res1, res2;         // ResBlock convolutions (F)
  std::vector<GiaParams<T>> gias;   // GIA stack (F)
  ConvParams<T> ca;                 // channel attention linear (F/2)
  BmtParams<T> bmt;                 // at width F/2
  DgfnParams<T> dgfn;               // at width F/2
  ConvParams<T> head;               // 3x3, F/2 -> image channels, zero-init
};

/// One high-frequency band through
/// ResBlock -> GIA stack -> SimpleGate -> channel attention -> BMT -> DGFN,
/// emitted as a residual correction on the band.
template <typename T>
ag::Value<T> gmft_forward(const ag::Value<T>& band, const GmftParams<T>& p) {
  ag::Value<T> e = ag::conv2d(band, p.embed.w, p.embed.b);
  ag::Value<T> r = res_block(e, p.res1, p.res2);
  for (const auto& g : p.gias) r = gia_block(r, g);
  ag::Value<T> sg = simple_gate(r);
  ag::Value<T> ca = channel_attention(sg, p.ca);
  ag::Value<T> t = bmt_block(ca, p.bmt);
  ag::Value<T> d = dgfn(t, p.dgfn);
  return ag::add(band, ag::conv2d(d, p.head.w, p.head.b));
}

// --- Parameter registration / loading ----------------------------------------

struct GmftConfig {
  int in_channels = 3;
  int feature_channels = 32;  // width before SimpleGate; must be even
  int gia_blocks = 2;
  int attention_heads = 2;
  int attention_window = 8;
  int dgfn_expansion = 2;
};

template <typename T>
void init_gmft_params(ParamStore<T>& store, const std::string& prefix,
                      const GmftConfig& cfg, Rng& rng) {
  const int f = cfg.feature_channels, c = cfg.in_channels;
  const int g = f / 2;  // width after SimpleGate
  add_conv(store, prefix + ".embed", f, c, 3, rng);
  add_conv(store, prefix + ".res1", f, f, 3, rng);
  add_conv(store, prefix + ".res2", f, f, 3, rng);
  for (int i = 0; i < cfg.gia_blocks; ++i) {
    const std::string gp = prefix + ".gia" + std::to_string(i);
    store.entries[gp + ".wg"] = uniform_init<T>({f, f, 1, 1}, f, rng);
    store.entries[gp + ".bg"] = Tensor<T>({f});
  }
  add_linear(store, prefix + ".ca", g, g, rng);
  add_norm_affine(store, prefix + ".bmt.norm1", g);
  for (const char* n : {"q", "k", "v", "out"}) {
    add_linear(store, prefix + ".bmt.sp." + std::string(n), g, g, rng);
  }
  add_norm_affine(store, prefix + ".bmt.norm2", g);
  for (const char* n : {"q", "k", "v", "out"}) {
    add_conv(store, prefix + ".bmt.ch." + std::string(n), g, g, 1, rng);
  }
  const int e = g * cfg.dgfn_expansion;
  add_conv(store, prefix + ".dgfn.w1", e, g, 1, rng);
  add_conv(store, prefix + ".dgfn.wg", e, g, 1, rng);
  add_conv(store, prefix + ".dgfn.w2", g, e, 1, rng);
  add_conv(store, prefix + ".head", c, g, 3, rng, /*zero=*/true);
}

inline std::size_t gmft_param_count(const GmftConfig& cfg) {
  const int f = cfg.feature_channels, c = cfg.in_channels;
  const int g = f / 2;
  const int e = g * cfg.dgfn_expansion;
  std::size_t n = conv_count(f, c, 3);                      // embed
  n += 2 * conv_count(f, f, 3);                             // res block
  n += static_cast<std::size_t>(cfg.gia_blocks) *
       (static_cast<std::size_t>(f) * f + f);               // gia wg + bg
  n += static_cast<std::size_t>(g) * g + g;                 // channel attention
  n += 2 * (2 * static_cast<std::size_t>(g));               // two norm affines
  n += 4 * (static_cast<std::size_t>(g) * g + g);           // spatial q,k,v,out
  n += 4 * conv_count(g, g, 1);                             // channel q,k,v,out
  n += 2 * conv_count(e, g, 1) + conv_count(g, e, 1);       // dgfn
  n += conv_count(c, g, 3);                                 // head
  return n;
}

template <typename T>
GmftParams<T> load_gmft_params(ParamGraph<T>& pg, const std::string& prefix,
                               const GmftConfig& cfg) {
  GmftParams<T> p;
  auto conv = [&](const std::string& name) -> ConvParams<T> {
    return {pg.get(prefix + name + ".w"), pg.get(prefix + name + ".b")};
  };
  p.embed = conv(".embed");
  p.res1 = conv(".res1");
  p.res2 = conv(".res2");
  for (int i = 0; i < cfg.gia_blocks; ++i) {
    const std::string gp = prefix + ".gia" + std::to_string(i);
    p.gias.push_back({pg.get(gp + ".wg"), pg.get(gp + ".bg")});
  }
  p.ca = conv(".ca");
  p.bmt.norm1_gamma = pg.get(prefix + ".bmt.norm1.gamma");
  p.bmt.norm1_beta = pg.get(prefix + ".bmt.norm1.beta");
  p.bmt.spatial = {conv(".bmt.sp.q"), conv(".bmt.sp.k"), conv(".bmt.sp.v"),
                   conv(".bmt.sp.out"), cfg.attention_heads};
  p.bmt.norm2_gamma = pg.get(prefix + ".bmt.norm2.gamma");
  p.bmt.norm2_beta = pg.get(prefix + ".bmt.norm2.beta");
  p.bmt.channel = {conv(".bmt.ch.q"), conv(".bmt.ch.k"), conv(".bmt.ch.v"),
                   conv(".bmt.ch.out"), cfg.attention_heads};
  p.bmt.window = cfg.attention_window;
  p.dgfn = {conv(".dgfn.w1"), conv(".dgfn.wg"), conv(".dgfn.w2")};
  p.head = conv(".head");
  return p;
}

}  // namespace deshadow
