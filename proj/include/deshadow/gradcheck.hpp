#pragma once

#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "deshadow/losses.hpp"
#include "deshadow/model.hpp"

namespace deshadow {

struct GradCheckOptions {
  double step = 1e-3;            // central-difference step (64-bit arithmetic)
  double tol = 1e-3;             // worst relative error allowed
  int max_coords_per_tensor = 0; // 0 = check every coordinate
  std::string corrupt_block;     // test hook: spoil this block's analytic grads
};

struct BlockCheck {
  std::string block;
  double max_rel_err = 0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<BlockCheck> blocks;
  double tolerance = 1e-3;

  bool all_pass() const {
    for (const auto& b : blocks)
      if (!b.pass) return false;
    return !blocks.empty();
  }

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& b : blocks) {
      os << "block=" << b.block << " max_rel_err=" << b.max_rel_err << " "
         << (b.pass ? "PASS" : "FAIL") << "\n";
    }
    os << (all_pass() ? "gradcheck: ALL PASS" : "gradcheck: FAILURES PRESENT") << "\n";
    return os.str();
  }
};

namespace fd {

/// Evaluation closure: returns the scalar loss for the given inputs; when
/// grads is non-null, also fills analytic gradients per input name.
using EvalFn = std::function<double(const std::map<std::string, Tensor<double>>&,
                                    std::map<std::string, Tensor<double>>*)>;

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-3});
  return std::abs(a - b) / denom;
}

inline BlockCheck check(const std::string& name,
                        std::map<std::string, Tensor<double>> inputs, const EvalFn& eval,
                        const GradCheckOptions& opts) {
  std::map<std::string, Tensor<double>> analytic;
  eval(inputs, &analytic);
  const bool corrupt = opts.corrupt_block == name;
  if (corrupt) {
    for (auto& [k, g] : analytic)
      for (auto& v : g.vec()) v += 0.05;
  }
  BlockCheck out;
  out.block = name;
  const double h = opts.step;

  auto fd_at = [&](Tensor<double>& t, std::size_t i, double step) {
    const double orig = t[i];
    t[i] = orig + step;
    const double fp = eval(inputs, nullptr);
    t[i] = orig - step;
    const double fm = eval(inputs, nullptr);
    t[i] = orig;
    return (fp - fm) / (2.0 * step);
  };

  // The central-difference oracle is only valid when no ReLU kink sits inside
  // the stencil. Kinks break the mutual agreement of estimates at step and
  // step/2, so the step shrinks until two adjacent estimates agree; a wrong
  // adjoint keeps FD estimates self-consistent and still fails the compare.
  auto fd_oracle = [&](Tensor<double>& t, std::size_t i, bool& reliable) {
    double step = h;
    for (int k = 0; k < 3; ++k, step /= 4.0) {
      const double f1 = fd_at(t, i, step);
      const double f2 = fd_at(t, i, step / 2.0);
      if (rel_err(f1, f2) < 0.5 * opts.tol) {
        reliable = true;
        return f2;
      }
    }
    reliable = false;
    return 0.0;
  };

  for (auto& [key, t] : inputs) {
    const std::size_t n = t.numel();
    std::size_t stride = 1;
    if (opts.max_coords_per_tensor > 0 &&
        n > static_cast<std::size_t>(opts.max_coords_per_tensor)) {
      stride = n / static_cast<std::size_t>(opts.max_coords_per_tensor);
    }
    for (std::size_t i = 0; i < n; i += stride) {
      bool reliable = false;
      double fd_grad = fd_oracle(t, i, reliable);
      double an = analytic.at(key)[i];
      if (!reliable) {
        // Kink at the base point itself: verify at a shifted base instead.
        const double orig = t[i];
        t[i] = orig + 4.0 * h;
        std::map<std::string, Tensor<double>> analytic2;
        eval(inputs, &analytic2);
        fd_grad = fd_oracle(t, i, reliable);
        an = analytic2.at(key)[i] + (corrupt ? 0.05 : 0.0);
        t[i] = orig;
      }
      if (!reliable) continue;  // FD itself indeterminate here
      out.max_rel_err = std::max(out.max_rel_err, rel_err(an, fd_grad));
    }
  }
  out.pass = out.max_rel_err < opts.tol;
  return out;
}

/// Random scalar objective: mean(out * R) with a fixed random projection R, so
/// every output coordinate influences the loss.
inline ag::Value<double> projected_loss(const ag::Value<double>& out, Rng& rng) {
  Tensor<double> r(out.shape());
  for (auto& v : r.vec()) v = rng.uniform(-1.0, 1.0);
  return ag::mean_all(ag::mul(out, ag::constant(std::move(r))));
}

inline Tensor<double> rand_tensor(const std::vector<int>& shape, Rng& rng, double lo,
                                  double hi) {
  Tensor<double> t(shape);
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace fd

/// Finite-difference verification of every block of the model equations plus
/// the end-to-end parameter gradient on a small input.
inline GradcheckReport gradcheck_all(std::uint64_t seed, const GradCheckOptions& user_opts = {}) {
  GradcheckReport report;
  report.tolerance = user_opts.tol;
  GradCheckOptions opts = user_opts;

  auto run = [&](const std::string& name, std::map<std::string, Tensor<double>> inputs,
                 const fd::EvalFn& eval, int max_coords = 0) {
    GradCheckOptions o = opts;
    o.max_coords_per_tensor = max_coords;
    report.blocks.push_back(fd::check(name, std::move(inputs), eval, o));
  };

  // cnr: per-channel normalization with affine.
  {
    Rng rng = derived_rng(seed, "gc.cnr");
    std::map<std::string, Tensor<double>> in;
    in["x"] = fd::rand_tensor({3, 5, 6}, rng, -1, 1);
    in["gamma"] = fd::rand_tensor({3}, rng, 0.5, 1.5);
    in["beta"] = fd::rand_tensor({3}, rng, -0.5, 0.5);
    Rng proj = derived_rng(seed, "gc.cnr.proj");
    Tensor<double> r = fd::rand_tensor({3, 5, 6}, proj, -1, 1);
    run("cnr", std::move(in),
        [r](const std::map<std::string, Tensor<double>>& inputs,
            std::map<std::string, Tensor<double>>* grads) {
          const bool g = grads != nullptr;
          auto x = ag::leaf(inputs.at("x"), g);
          auto gamma = ag::leaf(inputs.at("gamma"), g);
          auto beta = ag::leaf(inputs.at("beta"), g);
          CnrParams<double> p{gamma, beta, 1e-5};
          auto loss = ag::mean_all(ag::mul(cnr_block(x, p), ag::constant(r)));
          if (g) {
            ag::backward(loss);
            (*grads)["x"] = x.grad();
            (*grads)["gamma"] = gamma.grad();
            (*grads)["beta"] = beta.grad();
          }
          return loss.tensor()[0];
        });
  }

  // maa: cascaded convolution + SPP + attention fusion.
  {
    Rng rng = derived_rng(seed, "gc.maa");
    AanConfig acfg{1, 4, 2, {1, 2}};
    ParamStore<double> store;
    init_aan_params(store, acfg, rng);
    std::map<std::string, Tensor<double>> in;
    in["x"] = fd::rand_tensor({4, 6, 7}, rng, -1, 1);
    for (const auto& [name, t] : store.entries) {
      if (name.rfind("aan.maa.", 0) == 0) in[name] = fd::rand_tensor(t.shape(), rng, -0.6, 0.6);
    }
    Rng proj = derived_rng(seed, "gc.maa.proj");
    Tensor<double> r = fd::rand_tensor({4, 6, 7}, proj, -1, 1);
    run("maa", std::move(in),
        [r, acfg](const std::map<std::string, Tensor<double>>& inputs,
                  std::map<std::string, Tensor<double>>* grads) {
          const bool g = grads != nullptr;
          std::map<std::string, ag::Value<double>> leaves;
          for (const auto& [name, t] : inputs) leaves[name] = ag::leaf(t, g);
          MaaParams<double> p;
          for (int i = 0; i < acfg.maa_stages; ++i) {
            const std::string s = "aan.maa.stage" + std::to_string(i);
            p.stages.push_back({leaves.at(s + ".w"), leaves.at(s + ".b")});
          }
          p.mlp1 = {leaves.at("aan.maa.mlp1.w"), leaves.at("aan.maa.mlp1.b")};
          p.mlp2 = {leaves.at("aan.maa.mlp2.w"), leaves.at("aan.maa.mlp2.b")};
          p.spp_pools = acfg.spp_pools;
          p.attn = {leaves.at("aan.maa.attn.w"), leaves.at("aan.maa.attn.b")};
          p.proj = {leaves.at("aan.maa.proj.w"), leaves.at("aan.maa.proj.b")};
          auto loss = ag::mean_all(ag::mul(maa_block(leaves.at("x"), p), ag::constant(r)));
          if (g) {
            ag::backward(loss);
            for (const auto& [name, t] : inputs) {
              (*grads)[name] = leaves.at(name).has_grad() ? leaves.at(name).grad()
                                                          : Tensor<double>(t.shape());
            }
          }
          return loss.tensor()[0];
        });
  }

  // res_block.
  {
    Rng rng = derived_rng(seed, "gc.res");
    std::map<std::string, Tensor<double>> in;
    in["x"] = fd::rand_tensor({3, 4, 5}, rng, -1, 1);
    in["w1"] = fd::rand_tensor({3, 3, 3, 3}, rng, -0.3, 0.3);
    in["b1"] = fd::rand_tensor({3}, rng, -0.2, 0.2);
    in["w2"] = fd::rand_tensor({3, 3, 3, 3}, rng, -0.3, 0.3);
    in["b2"] = fd::rand_tensor({3}, rng, -0.2, 0.2);
    Rng proj = derived_rng(seed, "gc.res.proj");
    Tensor<double> r = fd::rand_tensor({3, 4, 5}, proj, -1, 1);
    run("res_block", std::move(in),
        [r](const std::map<std::string, Tensor<double>>& inputs,
            std::map<std::string, Tensor<double>>* grads) {
          const bool g = grads != nullptr;
          std::map<std::string, ag::Value<double>> lv;
          for (const auto& [name, t] : inputs) lv[name] = ag::leaf(t, g);
          ConvParams<double> c1{lv.at("w1"), lv.at("b1")}, c2{lv.at("w2"), lv.at("b2")};
          auto loss = ag::mean_all(ag::mul(res_block(lv.at("x"), c1, c2), ag::constant(r)));
          if (g) {
            ag::backward(loss);
            for (const auto& [name, t] : inputs) (*grads)[name] = lv.at(name).grad();
          }
          return loss.tensor()[0];
        });
  }

  // gia: x * sigmoid(Wg x) + bg.
  {
    Rng rng = derived_rng(seed, "gc.gia");
    std::map<std::string, Tensor<double>> in;
    in["x"] = fd::rand_tensor({3, 4, 5}, rng, -1, 1);
    in["wg"] = fd::rand_tensor({3, 3, 1, 1}, rng, -0.5, 0.5);
    in["bg"] = fd::rand_tensor({3}, rng, -0.3, 0.3);
    Rng proj = derived_rng(seed, "gc.gia.proj");
    Tensor<double> r = fd::rand_tensor({3, 4, 5}, proj, -1, 1);
    run("gia", std::move(in),
        [r](const std::map<std::string, Tensor<double>>& inputs,
            std::map<std::string, Tensor<double>>* grads) {
          const bool g = grads != nullptr;
          auto x = ag::leaf(inputs.at("x"), g);
          auto wg = ag::leaf(inputs.at("wg"), g);
          auto bg = ag::leaf(inputs.at("bg"), g);
          GiaParams<double> p{wg, bg};
          auto loss = ag::mean_all(ag::mul(gia_block(x, p), ag::constant(r)));
          if (g) {
            ag::backward(loss);
            (*grads)["x"] = x.grad();
            (*grads)["wg"] = wg.grad();
            (*grads)["bg"] = bg.grad();
          }
          return loss.tensor()[0];
        });
  }

  // simple_gate (input gradient only; the block has no parameters).
  {
    Rng rng = derived_rng(seed, "gc.sg");
    std::map<std::string, Tensor<double>> in;
    in["x"] = fd::rand_tensor({4, 3, 4}, rng, -1, 1);
    Rng proj = derived_rng(seed, "gc.sg.proj");
    Tensor<double> r = fd::rand_tensor({2, 3, 4}, proj, -1, 1);
    run("simple_gate", std::move(in),
        [r](const std::map<std::string, Tensor<double>>& inputs,
            std::map<std::string, Tensor<double>>* grads) {
          const bool g = grads != nullptr;
          auto x = ag::leaf(inputs.at("x"), g);
          auto loss = ag::mean_all(ag::mul(simple_gate(x), ag::constant(r)));
          if (g) {
            ag::backward(loss);
            (*grads)["x"] = x.grad();
          }
          return loss.tensor()[0];
        });
  }

  // channel_attention.
  {
    Rng rng = derived_rng(seed, "gc.ca");
    std::map<std::string, Tensor<double>> in;
    in["x"] = fd::rand_tensor({2, 3, 4}, rng, -1, 1);
    in["w"] = fd::rand_tensor({2, 2}, rng, -0.7, 0.7);
    in["b"] = fd::rand_tensor({2}, rng, -0.3, 0.3);
    Rng proj = derived_rng(seed, "gc.ca.proj");
    Tensor<double> r = fd::rand_tensor({2, 3, 4}, proj, -1, 1);
    run("channel_attention", std::move(in),
        [r](const std::map<std::string, Tensor<double>>& inputs,
            std::map<std::string, Tensor<double>>* grads) {
          const bool g = grads != nullptr;
          auto x = ag::leaf(inputs.at("x"), g);
          auto w = ag::leaf(inputs.at("w"), g);
          auto b = ag::leaf(inputs.at("b"), g);
          ConvParams<double> p{w, b};
          auto loss = ag::mean_all(ag::mul(channel_attention(x, p), ag::constant(r)));
          if (g) {
            ag::backward(loss);
            (*grads)["x"] = x.grad();
            (*grads)["w"] = w.grad();
            (*grads)["b"] = b.grad();
          }
          return loss.tensor()[0];
        });
  }

  // self_attention on a token matrix.
  {
    Rng rng = derived_rng(seed, "gc.sa");
    std::map<std::string, Tensor<double>> in;
    in["x"] = fd::rand_tensor({5, 4}, rng, -1, 1);
    for (const char* n : {"q", "k", "v", "o"}) {
      in[std::string(n) + "w"] = fd::rand_tensor({4, 4}, rng, -0.5, 0.5);
      in[std::string(n) + "b"] = fd::rand_tensor({4}, rng, -0.2, 0.2);
    }
    Rng proj = derived_rng(seed, "gc.sa.proj");
    Tensor<double> r = fd::rand_tensor({5, 4}, proj, -1, 1);
    run("self_attention", std::move(in),
        [r](const std::map<std::string, Tensor<double>>& inputs,
            std::map<std::string, Tensor<double>>* grads) {
          const bool g = grads != nullptr;
          std::map<std::string, ag::Value<double>> lv;
          for (const auto& [name, t] : inputs) lv[name] = ag::leaf(t, g);
          AttentionParams<double> p{{lv.at("qw"), lv.at("qb")},
                                    {lv.at("kw"), lv.at("kb")},
                                    {lv.at("vw"), lv.at("vb")},
                                    {lv.at("ow"), lv.at("ob")},
                                    2};
          auto loss = ag::mean_all(ag::mul(self_attention(lv.at("x"), p), ag::constant(r)));
          if (g) {
            ag::backward(loss);
            for (const auto& [name, t] : inputs) (*grads)[name] = lv.at(name).grad();
          }
          return loss.tensor()[0];
        });
  }

  // bmt: windowed spatial pass (with padding) + channel pass.
  {
    Rng rng = derived_rng(seed, "gc.bmt");
    GmftConfig gcfg{1, 8, 1, 2, 4, 2};
    ParamStore<double> store;
    init_gmft_params(store, "g", gcfg, rng);
    std::map<std::string, Tensor<double>> in;
    in["x"] = fd::rand_tensor({4, 5, 6}, rng, -1, 1);
    for (const auto& [name, t] : store.entries) {
      if (name.rfind("g.bmt.", 0) == 0) in[name] = fd::rand_tensor(t.shape(), rng, -0.5, 0.5);
    }
    Rng proj = derived_rng(seed, "gc.bmt.proj");
    Tensor<double> r = fd::rand_tensor({4, 5, 6}, proj, -1, 1);
    run("bmt", std::move(in),
        [r, gcfg](const std::map<std::string, Tensor<double>>& inputs,
                  std::map<std::string, Tensor<double>>* grads) {
          const bool g = grads != nullptr;
          std::map<std::string, ag::Value<double>> lv;
          for (const auto& [name, t] : inputs) lv[name] = ag::leaf(t, g);
          BmtParams<double> p;
          p.norm1_gamma = lv.at("g.bmt.norm1.gamma");
          p.norm1_beta = lv.at("g.bmt.norm1.beta");
          p.spatial = {{lv.at("g.bmt.sp.q.w"), lv.at("g.bmt.sp.q.b")},
                       {lv.at("g.bmt.sp.k.w"), lv.at("g.bmt.sp.k.b")},
                       {lv.at("g.bmt.sp.v.w"), lv.at("g.bmt.sp.v.b")},
                       {lv.at("g.bmt.sp.out.w"), lv.at("g.bmt.sp.out.b")},
                       gcfg.attention_heads};
          p.norm2_gamma = lv.at("g.bmt.norm2.gamma");
          p.norm2_beta = lv.at("g.bmt.norm2.beta");
          p.channel = {{lv.at("g.bmt.ch.q.w"), lv.at("g.bmt.ch.q.b")},
                       {lv.at("g.bmt.ch.k.w"), lv.at("g.bmt.ch.k.b")},
                       {lv.at("g.bmt.ch.v.w"), lv.at("g.bmt.ch.v.b")},
                       {lv.at("g.bmt.ch.out.w"), lv.at("g.bmt.ch.out.b")},
                       gcfg.attention_heads};
          p.window = gcfg.attention_window;
          auto loss = ag::mean_all(ag::mul(bmt_block(lv.at("x"), p), ag::constant(r)));
          if (g) {
            ag::backward(loss);
            for (const auto& [name, t] : inputs) (*grads)[name] = lv.at(name).grad();
          }
          return loss.tensor()[0];
        });
  }

  // dgfn.
  {
    Rng rng = derived_rng(seed, "gc.dgfn");
    std::map<std::string, Tensor<double>> in;
    in["x"] = fd::rand_tensor({3, 4, 5}, rng, -1, 1);
    in["w1w"] = fd::rand_tensor({6, 3, 1, 1}, rng, -0.5, 0.5);
    in["w1b"] = fd::rand_tensor({6}, rng, -0.2, 0.2);
    in["wgw"] = fd::rand_tensor({6, 3, 1, 1}, rng, -0.5, 0.5);
    in["wgb"] = fd::rand_tensor({6}, rng, -0.2, 0.2);
    in["w2w"] = fd::rand_tensor({3, 6, 1, 1}, rng, -0.5, 0.5);
    in["w2b"] = fd::rand_tensor({3}, rng, -0.2, 0.2);
    Rng proj = derived_rng(seed, "gc.dgfn.proj");
    Tensor<double> r = fd::rand_tensor({3, 4, 5}, proj, -1, 1);
    run("dgfn", std::move(in),
        [r](const std::map<std::string, Tensor<double>>& inputs,
            std::map<std::string, Tensor<double>>* grads) {
          const bool g = grads != nullptr;
          std::map<std::string, ag::Value<double>> lv;
          for (const auto& [name, t] : inputs) lv[name] = ag::leaf(t, g);
          DgfnParams<double> p{{lv.at("w1w"), lv.at("w1b")},
                               {lv.at("wgw"), lv.at("wgb")},
                               {lv.at("w2w"), lv.at("w2b")}};
          auto loss = ag::mean_all(ag::mul(dgfn(lv.at("x"), p), ag::constant(r)));
          if (g) {
            ag::backward(loss);
            for (const auto& [name, t] : inputs) (*grads)[name] = lv.at(name).grad();
          }
          return loss.tensor()[0];
        });
  }

  // aan end-to-end on a 1x8x8 low band.
  {
    Rng rng = derived_rng(seed, "gc.aan");
    AanConfig acfg{1, 4, 2, {1, 2}};
    ParamStore<double> store;
    init_aan_params(store, acfg, rng);
    std::map<std::string, Tensor<double>> in;
    in["low"] = fd::rand_tensor({1, 8, 8}, rng, 0, 1);
    for (const auto& [name, t] : store.entries)
      in[name] = fd::rand_tensor(t.shape(), rng, -0.4, 0.4);
    Rng proj = derived_rng(seed, "gc.aan.proj");
    Tensor<double> r = fd::rand_tensor({1, 8, 8}, proj, -1, 1);
    run("aan", std::move(in),
        [r, acfg](const std::map<std::string, Tensor<double>>& inputs,
                  std::map<std::string, Tensor<double>>* grads) {
          const bool g = grads != nullptr;
          ParamStore<double> store;
          for (const auto& [name, t] : inputs)
            if (name != "low") store.entries[name] = t;
          ParamGraph<double> pg(store, g);
          auto low = ag::leaf(inputs.at("low"), g);
          AanParams<double> p = load_aan_params(pg, acfg);
          auto loss = ag::mean_all(ag::mul(aan_forward(low, p), ag::constant(r)));
          if (g) {
            ag::backward(loss);
            (*grads)["low"] = low.grad();
            for (const auto& [name, t] : inputs)
              if (name != "low") (*grads)[name] = pg.grad_of(name);
          }
          return loss.tensor()[0];
        });
  }

  // gmft end-to-end on a 1x8x8 band.
  {
    Rng rng = derived_rng(seed, "gc.gmft");
    GmftConfig gcfg{1, 4, 1, 1, 4, 2};
    ParamStore<double> store;
    init_gmft_params(store, "gmft0", gcfg, rng);
    std::map<std::string, Tensor<double>> in;
    in["band"] = fd::rand_tensor({1, 8, 8}, rng, -0.5, 0.5);
    for (const auto& [name, t] : store.entries)
      in[name] = fd::rand_tensor(t.shape(), rng, -0.4, 0.4);
    Rng proj = derived_rng(seed, "gc.gmft.proj");
    Tensor<double> r = fd::rand_tensor({1, 8, 8}, proj, -1, 1);
    run("gmft", std::move(in),
        [r, gcfg](const std::map<std::string, Tensor<double>>& inputs,
                  std::map<std::string, Tensor<double>>* grads) {
          const bool g = grads != nullptr;
          ParamStore<double> store;
          for (const auto& [name, t] : inputs)
            if (name != "band") store.entries[name] = t;
          ParamGraph<double> pg(store, g);
          auto band = ag::leaf(inputs.at("band"), g);
          GmftParams<double> p = load_gmft_params(pg, "gmft0", gcfg);
          auto loss = ag::mean_all(ag::mul(gmft_forward(band, p), ag::constant(r)));
          if (g) {
            ag::backward(loss);
            (*grads)["band"] = band.grad();
            for (const auto& [name, t] : inputs)
              if (name != "band") (*grads)[name] = pg.grad_of(name);
          }
          return loss.tensor()[0];
        });
  }

  // total_loss gradient w.r.t. the prediction (global SSIM on 8x8 pairs).
  {
    Rng rng = derived_rng(seed, "gc.loss");
    std::map<std::string, Tensor<double>> in;
    in["pred"] = fd::rand_tensor({3, 8, 8}, rng, 0.05, 0.95);
    Tensor<double> target = fd::rand_tensor({3, 8, 8}, rng, 0.05, 0.95);
    run("total_loss", std::move(in),
        [target](const std::map<std::string, Tensor<double>>& inputs,
                 std::map<std::string, Tensor<double>>* grads) {
          const bool g = grads != nullptr;
          auto pred = ag::leaf(inputs.at("pred"), g);
          LossConfig lc;
          lc.ssim_mode = SsimMode::kGlobal;
          auto loss = total_loss_value(pred, ag::constant(target), lc);
          if (g) {
            ag::backward(loss);
            (*grads)["pred"] = pred.grad();
          }
          return loss.tensor()[0];
        });
  }

  // End-to-end: d total_loss / d every parameter on a 16x16 input
  // (windowed SSIM, the training configuration).
  {
    Rng rng = derived_rng(seed, "gc.model");
    ModelConfig cfg;
    cfg.levels = 2;
    cfg.in_channels = 1;
    cfg.feature_channels = 4;
    cfg.maa_stages = 2;
    cfg.gia_blocks = 1;
    cfg.attention_heads = 1;
    cfg.attention_window = 4;
    cfg.spp_pools = {1, 2};
    cfg.seed = seed;
    ParamStore<double> store = init_model_params<double>(cfg);
    std::map<std::string, Tensor<double>> in;
    // Perturb every entry (zero-initialized heads included) so no gradient
    // path is trivially zero.
    for (const auto& [name, t] : store.entries) {
      Tensor<double> p = t;
      Rng r2 = derived_rng(seed, "gc.model." + name);
      for (auto& v : p.vec()) v += r2.uniform(-0.15, 0.15);
      in[name] = std::move(p);
    }
    Image<double> img = Image<double>::zeros(1, 16, 16);
    for (auto& v : img.chw.vec()) v = rng.uniform(0.0, 1.0);
    Image<double> target = Image<double>::zeros(1, 16, 16);
    for (auto& v : target.chw.vec()) v = rng.uniform(0.0, 1.0);
    run("model", std::move(in),
        [img, target, cfg](const std::map<std::string, Tensor<double>>& inputs,
                           std::map<std::string, Tensor<double>>* grads) {
          const bool g = grads != nullptr;
          ParamStore<double> store;
          for (const auto& [name, t] : inputs) store.entries[name] = t;
          ParamGraph<double> pg(store, g);
          ForwardTrace<double> tr = forward_trace(img, pg, cfg);
          LossConfig lc;
          lc.ssim_mode = SsimMode::kWindowed;
          auto loss = total_loss_value(tr.preclamp, ag::constant(target.chw), lc);
          if (g) {
            ag::backward(loss);
            for (const auto& [name, t] : inputs) (*grads)[name] = pg.grad_of(name);
          }
          return loss.tensor()[0];
        },
        /*max_coords=*/24);
  }

  return report;
}

}  // namespace deshadow
