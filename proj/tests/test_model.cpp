#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "deshadow/checkpoint.hpp"
#include "deshadow/model.hpp"

using namespace deshadow;
namespace fs = std::filesystem;

namespace {

Image<float> random_image(int c, int h, int w, std::uint64_t seed) {
  Image<float> img = Image<float>::zeros(c, h, w);
  Rng rng(seed);
  for (auto& v : img.chw.vec()) v = static_cast<float>(rng.uniform());
  return img;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.levels = 2;
  cfg.feature_channels = 8;
  cfg.maa_stages = 2;
  cfg.gia_blocks = 1;
  cfg.attention_heads = 2;
  cfg.attention_window = 4;
  cfg.spp_pools = {1, 2};
  cfg.seed = 7;
  return cfg;
}

TEST(Model, BothBranchesDisabledIsPyramidRoundtrip) {
  ModelConfig cfg = tiny_config();
  cfg.aan_enabled = false;
  cfg.gmft_enabled = false;
  ParamStore<float> params = init_model_params<float>(cfg);
  EXPECT_EQ(params.param_count(), 0u);
  Image<float> img = random_image(3, 33, 47, 1);
  auto [out, preclamp] = forward_with_preclamp(img, params, cfg);
  EXPECT_LT(max_abs_diff(preclamp, img.chw), 1e-5f);
}

TEST(Model, IdentityAtInitialization) {
  ModelConfig cfg = tiny_config();
  ParamStore<float> params = init_model_params<float>(cfg);
  for (auto [h, w] : {std::pair{32, 32}, {33, 47}, {64, 50}}) {
    Image<float> img = random_image(3, h, w, static_cast<std::uint64_t>(h + w));
    auto [out, preclamp] = forward_with_preclamp(img, params, cfg);
    EXPECT_LT(max_abs_diff(preclamp, img.chw), 1e-5f) << h << "x" << w;
  }
}

TEST(Model, DeterministicForward) {
  ModelConfig cfg = tiny_config();
  ParamStore<float> params = init_model_params<float>(cfg);
  Rng rng(9);
  for (auto& [name, t] : params.entries)
    for (auto& v : t.vec()) v += static_cast<float>(rng.uniform(-0.2, 0.2));
  Image<float> img = random_image(3, 40, 40, 2);
  Image<float> a = forward(img, params, cfg);
  Image<float> b = forward(img, params, cfg);
  EXPECT_EQ(max_abs_diff(a.chw, b.chw), 0.0f);
}

TEST(Model, OutputClampedToUnitRange) {
  ModelConfig cfg = tiny_config();
  ParamStore<float> params = init_model_params<float>(cfg);
  Rng rng(10);
  for (auto& [name, t] : params.entries)
    for (auto& v : t.vec()) v += static_cast<float>(rng.uniform(-0.8, 0.8));
  Image<float> out = forward(random_image(3, 32, 32, 3), params, cfg);
  for (const auto& v : out.chw.vec()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Model, ParamCountMatchesPredictionAcrossAblations) {
  for (Ablation a : {Ablation::kFull, Ablation::kNoAan, Ablation::kNoGmft}) {
    ModelConfig cfg = tiny_config();
    cfg.apply_ablation(a);
    ParamStore<float> params = init_model_params<float>(cfg);
    EXPECT_EQ(params.param_count(), predicted_param_count(cfg)) << to_string(a);
  }
  // Default-sized configuration as well.
  ModelConfig def;
  EXPECT_EQ(init_model_params<float>(def).param_count(), predicted_param_count(def));
}

TEST(Model, AblationRemovesExactlyTheBranchEntries) {
  ModelConfig full_cfg = tiny_config();
  ModelConfig no_aan_cfg = tiny_config();
  no_aan_cfg.apply_ablation(Ablation::kNoAan);
  ParamStore<float> full = init_model_params<float>(full_cfg);
  ParamStore<float> no_aan = init_model_params<float>(no_aan_cfg);
  for (const auto& [name, t] : no_aan.entries) {
    ASSERT_TRUE(full.entries.count(name)) << name;
    EXPECT_EQ(max_abs_diff(full.entries.at(name), t), 0.0f) << name;
  }
  for (const auto& [name, t] : full.entries) {
    if (name.rfind("aan.", 0) == 0) {
      EXPECT_FALSE(no_aan.entries.count(name)) << name;
    } else {
      EXPECT_TRUE(no_aan.entries.count(name)) << name;
    }
  }
}

TEST(Model, DisabledBranchLeavesBandsUntouched) {
  ModelConfig cfg = tiny_config();
  ParamStore<float> params = init_model_params<float>(cfg);
  Rng rng(11);
  for (auto& [name, t] : params.entries)
    for (auto& v : t.vec()) v += static_cast<float>(rng.uniform(-0.3, 0.3));

  Image<float> img = random_image(3, 32, 32, 4);

  // no_aan: the low band passes through identically, highs match the full run.
  {
    ModelConfig ab = cfg;
    ab.apply_ablation(Ablation::kNoAan);
    ParamGraph<float> pg(params, false);
    ag::NoGradGuard ng;
    ForwardTrace<float> tr = forward_trace(img, pg, ab);
    EXPECT_EQ(max_abs_diff(tr.low_band_out.tensor(), tr.low_band_in), 0.0f);

    ParamGraph<float> pg_full(params, false);
    ForwardTrace<float> full = forward_trace(img, pg_full, cfg);
    for (int l = 0; l < cfg.levels; ++l) {
      EXPECT_EQ(max_abs_diff(tr.high_bands_out[l].tensor(),
                             full.high_bands_out[l].tensor()),
                0.0f);
    }
  }
  // no_gmft: high bands pass through identically, low matches the full run.
  {
    ModelConfig ab = cfg;
    ab.apply_ablation(Ablation::kNoGmft);
    ParamGraph<float> pg(params, false);
    ag::NoGradGuard ng;
    ForwardTrace<float> tr = forward_trace(img, pg, ab);
    for (int l = 0; l < cfg.levels; ++l) {
      EXPECT_EQ(max_abs_diff(tr.high_bands_out[l].tensor(), tr.high_bands_in[l]), 0.0f);
    }
    ParamGraph<float> pg_full(params, false);
    ForwardTrace<float> full = forward_trace(img, pg_full, cfg);
    EXPECT_EQ(max_abs_diff(tr.low_band_out.tensor(), full.low_band_out.tensor()), 0.0f);
  }
}

TEST(Model, RejectsBadConfigsAndInputs) {
  ModelConfig cfg = tiny_config();
  cfg.feature_channels = 7;  // odd: SimpleGate needs even
  EXPECT_THROW(validate_config(cfg), ConfigError);
  cfg = tiny_config();
  cfg.spp_pools = {2, 2};
  EXPECT_THROW(validate_config(cfg), ConfigError);
  cfg = tiny_config();
  ParamStore<float> params = init_model_params<float>(cfg);
  EXPECT_THROW(forward(random_image(3, 8, 8, 5), params, cfg), ShapeError);   // too small
  EXPECT_THROW(forward(random_image(1, 32, 32, 6), params, cfg), ShapeError); // channels
}

TEST(Config, TextRoundtripPreservesEverything) {
  ModelConfig cfg = tiny_config();
  cfg.aan_enabled = false;
  cfg.seed = 12345;
  ModelConfig back = config_from_text(config_to_text(cfg));
  EXPECT_EQ(config_to_text(back), config_to_text(cfg));
  EXPECT_EQ(config_hash(back), config_hash(cfg));
  EXPECT_THROW(config_from_text("bogus_key 3\n"), DataError);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("deshadow_ckpt_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(CheckpointTest, RoundtripIsBitExact) {
  ModelConfig cfg = tiny_config();
  ParamStore<float> params = init_model_params<float>(cfg);
  Rng rng(12);
  for (auto& [name, t] : params.entries)
    for (auto& v : t.vec()) v = static_cast<float>(rng.uniform(-1, 1));
  CheckpointMeta meta;
  meta.step = 41;
  meta.psnr = 19.25;
  const std::string base = (dir_ / "ck").string();
  save_checkpoint(params, cfg, meta, base);
  LoadedCheckpoint lc = load_checkpoint(base);
  EXPECT_EQ(lc.meta.step, 41);
  EXPECT_DOUBLE_EQ(lc.meta.psnr, 19.25);
  EXPECT_EQ(config_hash(lc.config), config_hash(cfg));
  ASSERT_EQ(lc.params.entries.size(), params.entries.size());
  for (const auto& [name, t] : params.entries) {
    const Tensor<float>& back = lc.params.entries.at(name);
    ASSERT_EQ(back.shape(), t.shape());
    EXPECT_EQ(0, std::memcmp(back.data(), t.data(), t.numel() * sizeof(float))) << name;
  }
}

TEST_F(CheckpointTest, TruncatedBlobIsAnExplicitError) {
  ModelConfig cfg = tiny_config();
  ParamStore<float> params = init_model_params<float>(cfg);
  const std::string base = (dir_ / "ck").string();
  save_checkpoint(params, cfg, {}, base);
  fs::resize_file(base + ".blob", fs::file_size(base + ".blob") - 8);
  EXPECT_THROW(
      {
        try {
          load_checkpoint(base);
        } catch (const DataError& e) {
          EXPECT_NE(std::string(e.what()).find("corrupted"), std::string::npos);
          throw;
        }
      },
      DataError);
}

TEST_F(CheckpointTest, SchemaAndHashMismatchesAreErrors) {
  ModelConfig cfg = tiny_config();
  ParamStore<float> params = init_model_params<float>(cfg);
  const std::string base = (dir_ / "ck").string();
  save_checkpoint(params, cfg, {}, base);

  // Tamper with the stored config: hash check must fire.
  std::ifstream in(base + ".manifest");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  in.close();
  auto pos = text.find("levels 2");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 8, "levels 3");
  std::ofstream out(base + ".manifest");
  out << text;
  out.close();
  EXPECT_THROW(load_checkpoint(base), DataError);

  std::ofstream bad(base + ".manifest");
  bad << "other.schema.v9\n";
  bad.close();
  EXPECT_THROW(load_checkpoint(base), DataError);
}

TEST_F(CheckpointTest, CountDeterministicAcrossIndependentInits) {
  ModelConfig cfg = tiny_config();
  ParamStore<float> a = init_model_params<float>(cfg);
  ParamStore<float> b = init_model_params<float>(cfg);
  EXPECT_EQ(a.param_count(), b.param_count());
  EXPECT_EQ(a.param_count(), predicted_param_count(cfg));
  for (const auto& [name, t] : a.entries) {
    EXPECT_EQ(max_abs_diff(t, b.entries.at(name)), 0.0f) << name;
  }
}

}  // namespace
