#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "deshadow/checkpoint.hpp"
#include "deshadow/image_io.hpp"
#include "deshadow/model.hpp"

using namespace deshadow;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* p = std::getenv("DESHADOW_CLI");
  return p ? p : "";
}

int run(const std::string& args) {
  const std::string cmd = cli_path() + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

Image<float> random_image(int c, int h, int w, std::uint64_t seed) {
  Image<float> img = Image<float>::zeros(c, h, w);
  Rng rng(seed);
  for (auto& v : img.chw.vec()) v = static_cast<float>(rng.uniform());
  return img;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    if (cli_path().empty()) GTEST_SKIP() << "DESHADOW_CLI not set";
    dir_ = fs::temp_directory_path() /
           ("deshadow_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override {
    if (!dir_.empty()) fs::remove_all(dir_);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

TEST_F(CliTest, DecomposeReconstructRoundtrip) {
  write_image(path("in.png"), random_image(3, 48, 40, 1));
  Image<float> reference = read_image(path("in.png"));
  ASSERT_EQ(0, run("decompose --input " + path("in.png") + " --levels 3 --out-dir " +
                   path("bands")));
  ASSERT_TRUE(fs::exists(dir_ / "bands" / "manifest.txt"));
  ASSERT_TRUE(fs::exists(dir_ / "bands" / "high_2.pfm"));
  ASSERT_EQ(0, run("reconstruct --in-dir " + path("bands") + " --out " +
                   path("back.pfm")));
  Image<float> back = read_pfm(path("back.pfm"));
  EXPECT_LT(max_abs_diff(back.chw, reference.chw), 1e-5f);

  ASSERT_EQ(0, run("reconstruct --in-dir " + path("bands") + " --out " +
                   path("back.png")));
  Image<float> png_back = read_image(path("back.png"));
  EXPECT_LE(max_abs_diff(png_back.chw, reference.chw), 1.0f / 255.0f + 1e-5f);
}

TEST_F(CliTest, InferWithIdentityCheckpoint) {
  ModelConfig cfg;
  cfg.levels = 2;
  cfg.feature_channels = 8;
  cfg.maa_stages = 2;
  cfg.attention_window = 4;
  cfg.spp_pools = {1, 2};
  ParamStore<float> params = init_model_params<float>(cfg);
  save_checkpoint(params, cfg, {}, path("ck"));

  write_image(path("in.png"), random_image(3, 40, 56, 2));
  Image<float> reference = read_image(path("in.png"));
  ASSERT_EQ(0, run("infer --checkpoint " + path("ck") + " --input " + path("in.png") +
                   " --out " + path("out.png") + " --target " + path("in.png") +
                   " --side-by-side " + path("strip.png")));
  Image<float> out = read_image(path("out.png"));
  ASSERT_EQ(out.height(), reference.height());
  ASSERT_EQ(out.width(), reference.width());
  // Identity checkpoint: output differs only by reconstruction + quantization.
  EXPECT_LE(max_abs_diff(out.chw, reference.chw), 1.0f / 255.0f + 1e-5f);
  Image<float> strip = read_image(path("strip.png"));
  EXPECT_EQ(strip.width(), 3 * reference.width() + 2 * 4);
}

TEST_F(CliTest, InferRejectsTooSmallUnlessResizePolicy) {
  ModelConfig cfg;
  cfg.levels = 3;
  cfg.feature_channels = 8;
  cfg.maa_stages = 2;
  cfg.attention_window = 4;
  cfg.spp_pools = {1, 2};
  save_checkpoint(init_model_params<float>(cfg), cfg, {}, path("ck"));
  write_image(path("small.png"), random_image(3, 16, 16, 3));
  EXPECT_EQ(2, run("infer --checkpoint " + path("ck") + " --input " + path("small.png") +
                   " --out " + path("o.png")));
  EXPECT_EQ(0, run("infer --checkpoint " + path("ck") + " --input " + path("small.png") +
                   " --out " + path("o.png") + " --resize-policy resize"));
}

TEST_F(CliTest, EvalSanityRouteAndReportMerge) {
  // shadow == target: RMSE 0, SSIM 1.
  for (const char* split : {"train", "test"}) {
    fs::create_directories(dir_ / "jung" / split / "shadow");
    fs::create_directories(dir_ / "jung" / split / "target");
    for (int i = 0; i < 2; ++i) {
      Image<float> img = random_image(3, 24, 24, 10 + i);
      write_image((dir_ / "jung" / split / "shadow" / ("d" + std::to_string(i) + ".png"))
                      .string(),
                  img);
      write_image((dir_ / "jung" / split / "target" / ("d" + std::to_string(i) + ".png"))
                      .string(),
                  img);
    }
  }
  ASSERT_EQ(0, run("eval --dataset-root " + dir_.string() +
                   " --dataset jung --split test --canonical-size 0 --out " +
                   path("ev")));
  std::ifstream js(path("ev") + "/report.json");
  ASSERT_TRUE(js.good());
  nlohmann::json j;
  js >> j;
  EXPECT_EQ(j["method"], "Input");
  EXPECT_EQ(j["aggregates"]["rmse"].get<double>(), 0.0);
  EXPECT_EQ(j["aggregates"]["ssim"].get<double>(), 1.0);
  EXPECT_EQ(j["aggregates"]["psnr"], "inf");

  ASSERT_EQ(0, run("report --in " + path("ev") + "/report.json --out " +
                   path("table.tsv")));
  std::ifstream tf(path("table.tsv"));
  std::string table((std::istreambuf_iterator<char>(tf)), {});
  EXPECT_NE(table.find("Method"), std::string::npos);
  EXPECT_NE(table.find("jung PSNR"), std::string::npos);
  EXPECT_NE(table.find("Input"), std::string::npos);
}

TEST_F(CliTest, TrainSmokeRunProducesArtifacts) {
  for (const char* split : {"train", "test"}) {
    fs::create_directories(dir_ / "jung" / split / "shadow");
    fs::create_directories(dir_ / "jung" / split / "target");
    Image<float> target = random_image(3, 32, 32, 20);
    Image<float> shadow = target;
    for (auto& v : shadow.chw.vec()) v *= 0.8f;
    write_image((dir_ / "jung" / split / "shadow" / "a.png").string(), shadow);
    write_image((dir_ / "jung" / split / "target" / "a.png").string(), target);
  }
  ASSERT_EQ(0, run("train --dataset-root " + dir_.string() +
                   " --dataset jung --canonical-size 0 --levels 1 --max-steps 2"
                   " --crop 16 --seed 5 --out " +
                   path("run")));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "last.manifest"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "train_log.tsv"));
  // Checkpoint levels = 1; asking eval for --levels 3 must fail loudly.
  EXPECT_EQ(1, run("eval --dataset-root " + dir_.string() +
                   " --dataset jung --canonical-size 0 --levels 3 --checkpoint " +
                   path("run") + "/last --out " + path("ev2")));
  EXPECT_EQ(0, run("eval --dataset-root " + dir_.string() +
                   " --dataset jung --canonical-size 0 --checkpoint " + path("run") +
                   "/last --out " + path("ev2")));
}

TEST_F(CliTest, ExitCodesAreStable) {
  EXPECT_EQ(1, run("decompose --input x.png --bogus-flag 3"));   // unknown flag
  EXPECT_EQ(1, run("nonsense-subcommand"));                      // usage
  EXPECT_EQ(2, run("decompose --input " + path("missing.png") + " --out-dir " +
                   path("b")));                                  // data error
  EXPECT_EQ(2, run("eval --dataset-root " + path("nowhere") + " --dataset jung --out " +
                   path("e")));                                  // missing dataset
  EXPECT_EQ(0, run("gradcheck --seed 42"));                      // numeric checks pass
}

TEST_F(CliTest, GradcheckListsEveryEquationBlock) {
  const std::string out_path = path("gc.txt");
  const std::string cmd = cli_path() + " gradcheck --seed 42 > " + out_path + " 2>&1";
  ASSERT_EQ(0, WEXITSTATUS(std::system(cmd.c_str())));
  std::ifstream f(out_path);
  std::string text((std::istreambuf_iterator<char>(f)), {});
  for (const char* block : {"cnr", "maa", "gia", "simple_gate", "channel_attention",
                            "bmt", "dgfn"}) {
    EXPECT_NE(text.find("block=" + std::string(block)), std::string::npos) << block;
  }
  EXPECT_NE(text.find("ALL PASS"), std::string::npos);
}

}  // namespace
