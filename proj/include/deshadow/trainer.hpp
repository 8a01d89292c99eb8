#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "deshadow/augment.hpp"
#include "deshadow/checkpoint.hpp"
#include "deshadow/losses.hpp"
#include "deshadow/metrics.hpp"
#include "deshadow/model.hpp"

namespace deshadow {

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  long max_steps = 0;
  long eval_every = 0;  // 0 = no periodic evaluation
  std::uint64_t seed = 0;
  LossConfig loss;  // training default below switches SSIM to windowed
  Ablation ablation = Ablation::kFull;
  AugmentConfig augment = AugmentConfig::identity();
  double grad_clip = 0;  // global-norm clip; 0 = off
  std::string out_dir;   // empty = do not write checkpoints
  std::string log_path;  // empty = keep the log in memory only

  TrainConfig() { loss.ssim_mode = SsimMode::kWindowed; }
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (cfg.lr <= 0) throw ConfigError("lr must be positive");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.max_steps < 0) throw ConfigError("max_steps must be >= 0");
  validate_augment_config(cfg.augment);
}

template <typename T>
struct TrainState {
  long step = 0;
  ParamStore<T> params;
  ParamStore<T> m, v;  // first/second moments, shaped like params
  CheckpointMeta best;
};

/// Standard bias-corrected adaptive-moment update, applied in place.
template <typename T>
void adam_step(TrainState<T>& state, const std::map<std::string, Tensor<T>>& grads,
               const TrainConfig& cfg) {
  const long t = state.step + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& [name, p] : state.params.entries) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor<T>& g = git->second;
    require_same_shape(g, p, "adam_step gradient for " + name);
    Tensor<T>& m = state.m.entries.at(name);
    Tensor<T>& v = state.v.entries.at(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<T>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi);
      v[i] = static_cast<T>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      const double upd = cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      p[i] = static_cast<T>(p[i] - upd);
      if (!std::isfinite(static_cast<double>(p[i]))) {
        throw NumericError("adam_step: non-finite update for " + name + " at step " +
                           std::to_string(t));
      }
    }
  }
  state.step = t;
}

struct LogRecord {
  long step = 0;
  double l_total = 0, l_mse = 0, l_ssim = 0;
  double wall_ms = 0;
};

/// Full-precision delimited line. The wall_ms column carries timing and is
/// excluded from the determinism contract (see loss_log_canonical).
inline std::string log_line(const LogRecord& r) {
  std::ostringstream os;
  os << r.step << "\t" << std::setprecision(17) << r.l_total << "\t" << r.l_mse << "\t"
     << r.l_ssim << "\t" << std::setprecision(6) << r.wall_ms;
  return os.str();
}

/// The deterministic byte content of a training log: everything except timing.
inline std::string loss_log_canonical(const std::vector<LogRecord>& log) {
  std::ostringstream os;
  for (const auto& r : log) {
    os << r.step << "\t" << std::setprecision(17) << r.l_total << "\t" << r.l_mse
       << "\t" << r.l_ssim << "\n";
  }
  return os.str();
}

struct TrainResult {
  TrainState<float> state;
  std::vector<LogRecord> log;
  ModelConfig model_config;
};

/// Per-image and aggregate metrics of a model (or of the raw inputs when
/// params is null) against the targets.
inline MetricsReport evaluate_pairs(const std::vector<PairedSample<float>>& data,
                                    const ParamStore<float>* params,
                                    const ModelConfig* cfg,
                                    const LossConfig& metric_cfg = {}) {
  MetricsReport rep;
  for (const auto& s : data) {
    Image<float> pred = params ? forward(s.shadow, *params, *cfg) : s.shadow;
    MetricsReport::Entry e;
    e.id = s.id;
    e.psnr = psnr(pred, s.target);
    e.ssim = ssim(pred, s.target, metric_cfg);
    e.rmse = rmse(pred, s.target);
    rep.per_image.push_back(std::move(e));
  }
  return rep;
}

namespace detail {

template <typename T>
double grad_global_norm(const std::map<std::string, Tensor<T>>& grads) {
  double acc = 0;
  for (const auto& [name, g] : grads)
    for (std::size_t i = 0; i < g.numel(); ++i) acc += static_cast<double>(g[i]) * g[i];
  return std::sqrt(acc);
}

template <typename T>
std::string grad_norm_report(const std::map<std::string, Tensor<T>>& grads) {
  std::ostringstream os;
  os << std::setprecision(4);
  for (const auto& [name, g] : grads) {
    double acc = 0;
    for (std::size_t i = 0; i < g.numel(); ++i) acc += static_cast<double>(g[i]) * g[i];
    os << " " << name << "=" << std::sqrt(acc);
  }
  return os.str();
}

}  // namespace detail

/// Runs the optimization loop: batch-accumulated gradients, Adam updates,
/// per-step loss logging, periodic evaluation, best-by-PSNR and last
/// checkpoints. Deterministic for a fixed seed.
inline TrainResult train(const TrainConfig& cfg, ModelConfig model_cfg,
                         const std::vector<PairedSample<float>>& train_data,
                         const std::vector<PairedSample<float>>& test_data,
                         const ParamStore<float>* initial_params = nullptr) {
  validate_train_config(cfg);
  model_cfg.apply_ablation(cfg.ablation);
  validate_config(model_cfg);
  if (train_data.empty()) throw DataError("train: dataset is empty");

  TrainResult result;
  result.model_config = model_cfg;
  TrainState<float>& st = result.state;
  st.params = initial_params ? *initial_params : init_model_params<float>(model_cfg);
  for (const auto& [name, t] : st.params.entries) {
    st.m.entries.emplace(name, Tensor<float>(t.shape()));
    st.v.entries.emplace(name, Tensor<float>(t.shape()));
  }

  std::ofstream log_file;
  if (!cfg.log_path.empty()) {
    log_file.open(cfg.log_path, std::ios::app);
    if (!log_file) throw DataError("cannot open training log: " + cfg.log_path);
  }

  Rng order_rng = derived_rng(cfg.seed, "order");
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces an initial shuffle

  auto next_index = [&]() {
    if (cursor >= order.size()) {
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(order_rng.uniform_int(
                                    0, static_cast<int>(i) - 1))]);
      }
      cursor = 0;
    }
    return order[cursor++];
  };

  auto draw_sample = [&](long step, int slot) {
    const PairedSample<float>& base = train_data[next_index()];
    Rng rng = derived_rng(cfg.seed + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(
                                         step * cfg.batch_size + slot + 1),
                          "aug:" + base.id);
    PairedSample<float> s = augment(base, cfg.augment, rng);
    if (cfg.augment.mixup_alpha > 0 && train_data.size() > 1) {
      const PairedSample<float>& pbase =
          train_data[static_cast<std::size_t>(rng.uniform_int(
              0, static_cast<int>(train_data.size()) - 1))];
      PairedSample<float> partner = augment(pbase, cfg.augment, rng);
      if (partner.shadow.chw.same_shape(s.shadow.chw)) {
        const float lam = static_cast<float>(rng.beta(cfg.augment.mixup_alpha));
        s = mixup_blend(s, partner, lam);
      }
    }
    return s;
  };

  auto maybe_eval = [&](long step) {
    if (test_data.empty()) return;
    ag::NoGradGuard ng;
    MetricsReport rep = evaluate_pairs(test_data, &st.params, &model_cfg);
    const double p = rep.mean_psnr();
    if (std::isnan(st.best.psnr) || p > st.best.psnr) {
      st.best.psnr = p;
      st.best.step = step;
      if (!cfg.out_dir.empty()) {
        save_checkpoint(st.params, model_cfg, st.best, cfg.out_dir + "/best");
      }
    }
  };

  for (long step = 0; step < cfg.max_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    std::map<std::string, Tensor<float>> grads;
    double l_total = 0, l_mse = 0, l_ssim = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      PairedSample<float> s = draw_sample(step, b);
      ParamGraph<float> pg(st.params, /*trainable=*/true);
      ForwardTrace<float> tr = forward_trace(s.shadow, pg, model_cfg);
      ag::Value<float> target = ag::constant(s.target.chw);
      ag::Value<float> mse = mse_loss_value(tr.preclamp, target, cfg.loss.mse_reduction);
      ag::Value<float> ssim_term = ssim_value(tr.preclamp, target, cfg.loss);
      const float lam = static_cast<float>(cfg.loss.lambda_ssim);
      ag::Value<float> total =
          cfg.loss.literal_ssim_term
              ? ag::add(mse, ag::scale(ssim_term, lam))
              : ag::add(mse, ag::scale(ag::add_scalar(ag::scale(ssim_term, -1.0f), 1.0f),
                                       lam));
      l_mse += mse.tensor()[0];
      l_ssim += ssim_term.tensor()[0];
      l_total += total.tensor()[0];
      ag::backward(total);
      for (const auto& [name, t] : st.params.entries) {
        Tensor<float> g = pg.grad_of(name);
        auto it = grads.find(name);
        if (it == grads.end()) {
          grads.emplace(name, std::move(g));
        } else {
          for (std::size_t i = 0; i < g.numel(); ++i) it->second[i] += g[i];
        }
      }
    }
    const double inv_b = 1.0 / cfg.batch_size;
    l_total *= inv_b;
    l_mse *= inv_b;
    l_ssim *= inv_b;
    for (auto& [name, g] : grads)
      for (auto& v : g.vec()) v = static_cast<float>(v * inv_b);

    if (!std::isfinite(l_total)) {
      throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                         "; parameter-gradient norms:" + detail::grad_norm_report(grads));
    }
    if (cfg.grad_clip > 0) {
      const double norm = detail::grad_global_norm(grads);
      if (norm > cfg.grad_clip) {
        const float s = static_cast<float>(cfg.grad_clip / norm);
        for (auto& [name, g] : grads)
          for (auto& v : g.vec()) v *= s;
      }
    }
    adam_step(st, grads, cfg);

    LogRecord rec;
    rec.step = step;
    rec.l_total = l_total;
    rec.l_mse = l_mse;
    rec.l_ssim = l_ssim;
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    result.log.push_back(rec);
    if (log_file) log_file << log_line(rec) << "\n" << std::flush;

    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) maybe_eval(step + 1);
  }

  if (cfg.eval_every > 0) maybe_eval(cfg.max_steps);
  if (std::isnan(st.best.psnr)) st.best.step = st.step;
  if (!cfg.out_dir.empty()) {
    CheckpointMeta last;
    last.step = st.step;
    last.loss = result.log.empty() ? std::numeric_limits<double>::quiet_NaN()
                                   : result.log.back().l_total;
    save_checkpoint(st.params, model_cfg, last, cfg.out_dir + "/last");
    if (std::isnan(st.best.psnr)) {
      save_checkpoint(st.params, model_cfg, last, cfg.out_dir + "/best");
    }
  }
  return result;
}

}  // namespace deshadow
