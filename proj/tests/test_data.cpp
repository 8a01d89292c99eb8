#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "deshadow/augment.hpp"
#include "deshadow/dataset.hpp"
#include "deshadow/image_io.hpp"

using namespace deshadow;
namespace fs = std::filesystem;

namespace {

Image<float> random_image(int c, int h, int w, std::uint64_t seed) {
  Image<float> img = Image<float>::zeros(c, h, w);
  Rng rng(seed);
  for (auto& v : img.chw.vec()) v = static_cast<float>(rng.uniform());
  return img;
}

class DataTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("deshadow_data_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  void write_pair_tree(const fs::path& base, int n, int size = 24) {
    fs::create_directories(base / "shadow");
    fs::create_directories(base / "target");
    for (int i = 0; i < n; ++i) {
      const std::string stem = "doc" + std::to_string(i);
      write_image((base / "shadow" / (stem + ".png")).string(),
                  random_image(3, size, size, 100 + i));
      write_image((base / "target" / (stem + ".png")).string(),
                  random_image(3, size, size, 200 + i));
    }
  }

  fs::path dir_;
};

TEST_F(DataTest, PngRoundtripWithinOneQuantum) {
  Image<float> img = random_image(3, 19, 23, 1);
  const std::string path = (dir_ / "x.png").string();
  write_image(path, img);
  Image<float> back = read_image(path);
  ASSERT_EQ(back.height(), 19);
  ASSERT_EQ(back.width(), 23);
  EXPECT_LE(max_abs_diff(back.chw, img.chw), 1.0f / 255.0f + 1e-6f);
}

TEST_F(DataTest, PfmRoundtripIsBitExact) {
  Image<float> img = random_image(3, 13, 17, 2);
  for (auto& v : img.chw.vec()) v = v * 4.0f - 2.0f;  // outside [0,1] too
  const std::string path = (dir_ / "x.pfm").string();
  write_pfm(path, img);
  Image<float> back = read_pfm(path);
  ASSERT_EQ(back.chw.shape(), img.chw.shape());
  EXPECT_EQ(0, std::memcmp(back.chw.data(), img.chw.data(),
                           img.chw.numel() * sizeof(float)));
}

TEST_F(DataTest, LoadsTrainTestLayout) {
  write_pair_tree(dir_ / "jung" / "train", 3);
  write_pair_tree(dir_ / "jung" / "test", 2);
  DatasetSplits<float> splits = load_dataset(dir_.string(), "jung", /*canonical=*/0);
  EXPECT_EQ(splits.train.size(), 3u);
  EXPECT_EQ(splits.test.size(), 2u);
  for (const auto& s : splits.train) {
    EXPECT_TRUE(s.shadow.chw.same_shape(s.target.chw));
    for (const auto& v : s.shadow.chw.vec()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST_F(DataTest, CanonicalizationResizesTo512) {
  write_pair_tree(dir_ / "jung" / "train", 1, 24);
  write_pair_tree(dir_ / "jung" / "test", 1, 24);
  DatasetSplits<float> splits = load_dataset(dir_.string(), "jung", 512);
  EXPECT_EQ(splits.train[0].shadow.height(), 512);
  EXPECT_EQ(splits.train[0].target.width(), 512);
}

TEST_F(DataTest, OrphanStemIsNamedError) {
  write_pair_tree(dir_ / "jung" / "train", 2);
  write_pair_tree(dir_ / "jung" / "test", 1);
  write_image((dir_ / "jung" / "train" / "shadow" / "lonely.png").string(),
              random_image(3, 24, 24, 3));
  try {
    load_dataset(dir_.string(), "jung", 0);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("lonely"), std::string::npos);
  }
}

TEST_F(DataTest, EmptyDatasetIsError) {
  fs::create_directories(dir_ / "jung" / "train" / "shadow");
  fs::create_directories(dir_ / "jung" / "train" / "target");
  fs::create_directories(dir_ / "jung" / "test" / "shadow");
  fs::create_directories(dir_ / "jung" / "test" / "target");
  EXPECT_THROW(load_dataset(dir_.string(), "jung", 0), DataError);
  EXPECT_THROW(load_dataset((dir_ / "missing").string(), "jung", 0), DataError);
  EXPECT_THROW(load_dataset(dir_.string(), "unknown", 0), ConfigError);
}

TEST_F(DataTest, IndexFileOverride) {
  write_image((dir_ / "s0.png").string(), random_image(3, 16, 16, 4));
  write_image((dir_ / "t0.png").string(), random_image(3, 16, 16, 5));
  std::ofstream idx(dir_ / "pairs.tsv");
  idx << "# comment line\n";
  idx << "s0.png\tt0.png\n";
  idx.close();
  auto pairs = load_pairs_from_index((dir_ / "pairs.tsv").string(), 0);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].id, "s0");

  std::ofstream bad(dir_ / "bad.tsv");
  bad << "no_tab_here.png\n";
  bad.close();
  EXPECT_THROW(load_pairs_from_index((dir_ / "bad.tsv").string(), 0), DataError);
}

PairedSample<float> make_sample(int h, int w, std::uint64_t seed) {
  return {random_image(3, h, w, seed), random_image(3, h, w, seed + 1), "s"};
}

TEST(Augment, IdentityConfigIsExactIdentity) {
  PairedSample<float> s = make_sample(20, 24, 10);
  Rng rng(1);
  PairedSample<float> out = augment(s, AugmentConfig::identity(), rng);
  EXPECT_EQ(max_abs_diff(out.shadow.chw, s.shadow.chw), 0.0f);
  EXPECT_EQ(max_abs_diff(out.target.chw, s.target.chw), 0.0f);
}

TEST(Augment, HorizontalFlipIsInvolution) {
  Image<float> img = random_image(3, 9, 12, 11);
  EXPECT_EQ(max_abs_diff(flip_h(flip_h(img)).chw, img.chw), 0.0f);
  EXPECT_EQ(max_abs_diff(flip_v(flip_v(img)).chw, img.chw), 0.0f);
}

TEST(Augment, CropLargerThanImageIsError) {
  PairedSample<float> s = make_sample(16, 16, 12);
  AugmentConfig cfg = AugmentConfig::identity();
  cfg.crop_size = 32;
  Rng rng(2);
  EXPECT_THROW(augment(s, cfg, rng), ShapeError);
}

TEST(Augment, MixupHalfBlend) {
  PairedSample<float> a = make_sample(8, 8, 13);
  a.shadow.chw.fill(0.0f);
  a.target.chw.fill(0.0f);
  PairedSample<float> b = make_sample(8, 8, 14);
  b.shadow.chw.fill(1.0f);
  b.target.chw.fill(1.0f);
  PairedSample<float> m = mixup_blend(a, b, 0.5f);
  for (const auto& v : m.shadow.chw.vec()) EXPECT_FLOAT_EQ(v, 0.5f);
  for (const auto& v : m.target.chw.vec()) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Augment, GeometricTransformsKeepPairAligned) {
  // A coordinate ramp in both images: any misalignment shows up as a diff.
  Image<float> ramp = Image<float>::zeros(3, 32, 32);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        ramp.chw.at(c, y, x) = (y * 32 + x) / 1024.0f * (c + 1) / 3.0f;
  PairedSample<float> s{ramp, ramp, "grid"};
  AugmentConfig cfg;  // geometric on, photometric defaults are degenerate
  cfg.crop_size = 16;
  cfg.flip_prob = 1.0;
  cfg.mixup_alpha = 0.0;
  cfg.resize_scales = {0.8, 1.2};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    PairedSample<float> out = augment(s, cfg, rng);
    EXPECT_EQ(max_abs_diff(out.shadow.chw, out.target.chw), 0.0f) << seed;
    EXPECT_EQ(out.shadow.height(), 16);
    EXPECT_EQ(out.shadow.width(), 16);
  }
}

TEST(Augment, PhotometricJitterTouchesShadowOnly) {
  PairedSample<float> s = make_sample(12, 12, 15);
  AugmentConfig cfg = AugmentConfig::identity();
  cfg.brightness_jitter = {0.5, 0.6};
  cfg.saturation_jitter = {1.4, 1.6};
  Rng rng(3);
  PairedSample<float> out = augment(s, cfg, rng);
  EXPECT_EQ(max_abs_diff(out.target.chw, s.target.chw), 0.0f);
  EXPECT_GT(max_abs_diff(out.shadow.chw, s.shadow.chw), 0.0f);
}

TEST(Augment, DeterministicStreams) {
  PairedSample<float> s = make_sample(24, 24, 16);
  AugmentConfig cfg = AugmentConfig::training_defaults(12);
  Rng r1(99), r2(99);
  PairedSample<float> a = augment(s, cfg, r1);
  PairedSample<float> b = augment(s, cfg, r2);
  EXPECT_EQ(max_abs_diff(a.shadow.chw, b.shadow.chw), 0.0f);
  EXPECT_EQ(max_abs_diff(a.target.chw, b.target.chw), 0.0f);
}

TEST(Augment, OutputsStayInUnitRange) {
  PairedSample<float> s = make_sample(16, 16, 17);
  AugmentConfig cfg = AugmentConfig::identity();
  cfg.brightness_jitter = {1.8, 2.0};
  Rng rng(4);
  PairedSample<float> out = augment(s, cfg, rng);
  for (const auto& v : out.shadow.chw.vec()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Augment, BetaSamplerStaysInUnitInterval) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const double b = rng.beta(0.2);
    EXPECT_GT(b, 0.0);
    EXPECT_LT(b, 1.0);
  }
}

TEST(Augment, InvalidConfigsRejected) {
  AugmentConfig cfg;
  cfg.flip_prob = 1.5;
  EXPECT_THROW(validate_augment_config(cfg), ConfigError);
  cfg = AugmentConfig();
  cfg.resize_scales = {1.2, 0.9};
  EXPECT_THROW(validate_augment_config(cfg), ConfigError);
}

}  // namespace
