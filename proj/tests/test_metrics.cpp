#include <gtest/gtest.h>

#include <cmath>

#include "deshadow/losses.hpp"
#include "deshadow/metrics.hpp"
#include "deshadow/rng.hpp"

using namespace deshadow;

namespace {

Image<double> random_image(int c, int h, int w, std::uint64_t seed, double lo = 0,
                           double hi = 1) {
  Image<double> img = Image<double>::zeros(c, h, w);
  Rng rng(seed);
  for (auto& v : img.chw.vec()) v = rng.uniform(lo, hi);
  return img;
}

TEST(Mse, IdenticalImagesGiveZero) {
  Image<double> x = random_image(3, 8, 8, 1);
  EXPECT_EQ(mse_loss(x, x), 0.0);
}

TEST(Mse, ConstantOffsetSquares) {
  Image<double> x = random_image(3, 8, 8, 2, 0, 0.8);
  Image<double> y = x;
  for (auto& v : y.chw.vec()) v += 0.1;
  EXPECT_NEAR(mse_loss(x, y), 0.01, 1e-12);
}

TEST(Mse, MatchesNaiveSummationOracle) {
  Image<double> x = random_image(3, 11, 13, 3);
  Image<double> y = random_image(3, 11, 13, 4);
  double acc = 0;
  for (std::size_t i = 0; i < x.chw.numel(); ++i) {
    acc += (x.chw[i] - y.chw[i]) * (x.chw[i] - y.chw[i]);
  }
  EXPECT_NEAR(mse_loss(x, y), acc / x.chw.numel(), 1e-7);
  EXPECT_NEAR(mse_loss(x, y, MseReduction::kSum), acc, 1e-7);
}

TEST(Ssim, SelfSimilarityIsExactlyOne) {
  Image<double> x = random_image(3, 16, 16, 5);
  LossConfig cfg;
  EXPECT_EQ(ssim(x, x, cfg), 1.0);
  cfg.ssim_mode = SsimMode::kWindowed;
  EXPECT_EQ(ssim(x, x, cfg), 1.0);
}

TEST(Ssim, ZeroVersusFullScaleClosedForm) {
  Image<double> x = Image<double>::zeros(1, 8, 8);
  Image<double> y = Image<double>::zeros(1, 8, 8);
  y.chw.fill(1.0);  // 255 on the metric scale
  const double want = 6.5025 / (255.0 * 255.0 + 6.5025);
  EXPECT_NEAR(ssim(x, y), want, 1e-9);
  EXPECT_NEAR(ssim(x, y), 9.9990e-5, 1e-8);
}

TEST(Ssim, Symmetric) {
  for (std::uint64_t s = 0; s < 4; ++s) {
    Image<double> x = random_image(3, 12, 12, 10 + s);
    Image<double> y = random_image(3, 12, 12, 20 + s);
    EXPECT_NEAR(ssim(x, y), ssim(y, x), 1e-9);
    LossConfig w;
    w.ssim_mode = SsimMode::kWindowed;
    EXPECT_NEAR(ssim(x, y, w), ssim(y, x, w), 1e-9);
  }
}

TEST(Ssim, BoundedAboveByOne) {
  for (std::uint64_t s = 0; s < 6; ++s) {
    Image<double> x = random_image(3, 14, 14, 30 + s);
    Image<double> y = random_image(3, 14, 14, 40 + s);
    EXPECT_LE(ssim(x, y), 1.0);
    LossConfig w;
    w.ssim_mode = SsimMode::kWindowed;
    EXPECT_LE(ssim(x, y, w), 1.0);
  }
}

TEST(Ssim, WindowedConstantPairsFollowClosedForm) {
  // Zero-variance windows: the formula reduces to the luminance term.
  LossConfig w;
  w.ssim_mode = SsimMode::kWindowed;
  Image<double> x = Image<double>::zeros(1, 16, 16);
  Image<double> y = x;
  y.chw.fill(1.0);
  EXPECT_NEAR(ssim(x, y, w), 6.5025 / (255.0 * 255.0 + 6.5025), 1e-9);
  EXPECT_EQ(ssim(y, y, w), 1.0);
}

TEST(Ssim, WindowedRejectsTinyImages) {
  LossConfig w;
  w.ssim_mode = SsimMode::kWindowed;
  Image<double> x = random_image(1, 8, 8, 50);
  EXPECT_THROW(ssim(x, x, w), ShapeError);
}

TEST(Ssim, GraphAgreesWithPureReference) {
  Image<double> x = random_image(3, 16, 16, 60);
  Image<double> y = random_image(3, 16, 16, 61);
  ag::NoGradGuard ng;
  for (SsimMode mode : {SsimMode::kGlobal, SsimMode::kWindowed}) {
    LossConfig cfg;
    cfg.ssim_mode = mode;
    const double graph =
        ssim_value(ag::constant(x.chw), ag::constant(y.chw), cfg).tensor()[0];
    EXPECT_NEAR(graph, ssim(x, y, cfg), 1e-10);
  }
}

TEST(Psnr, IdenticalImagesAreInfinite) {
  Image<double> x = random_image(3, 8, 8, 70);
  EXPECT_TRUE(std::isinf(psnr(x, x)));
  EXPECT_GT(psnr(x, x), 0);
}

TEST(Psnr, UniformOneLsbErrorClosedForm) {
  Image<double> x = random_image(3, 16, 16, 71, 0.1, 0.9);
  Image<double> y = x;
  for (auto& v : y.chw.vec()) v += 1.0 / 255.0;
  EXPECT_NEAR(psnr(x, y), 20.0 * std::log10(255.0), 1e-3);
  EXPECT_NEAR(psnr(x, y), 48.1308, 1e-3);
}

TEST(Psnr, DecreasesWithNoiseAmplitude) {
  Image<double> x = random_image(3, 16, 16, 72, 0.2, 0.8);
  double prev = std::numeric_limits<double>::infinity();
  Rng rng(73);
  for (double amp : {0.01, 0.05, 0.2}) {
    Image<double> y = x;
    for (auto& v : y.chw.vec()) v += amp * (rng.uniform() - 0.5) * 2.0;
    const double p = psnr(y, x);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Rmse, IdenticalZeroAndConstantOffset) {
  Image<double> x = random_image(3, 8, 8, 74, 0.2, 0.7);
  EXPECT_EQ(rmse(x, x), 0.0);
  Image<double> y = x;
  const double k = 17.0;  // 0-255 units
  for (auto& v : y.chw.vec()) v += k / 255.0;
  EXPECT_NEAR(rmse(x, y), k, 1e-9);
}

TEST(TotalLoss, ZeroAtPerfectPrediction) {
  Image<double> x = random_image(3, 16, 16, 75);
  LossConfig cfg;
  EXPECT_NEAR(total_loss(x, x, cfg), 0.0, 1e-12);
}

TEST(TotalLoss, LambdaZeroIsPlainMse) {
  Image<double> x = random_image(3, 12, 12, 76);
  Image<double> y = random_image(3, 12, 12, 77);
  LossConfig cfg;
  cfg.lambda_ssim = 0.0;
  EXPECT_NEAR(total_loss(x, y, cfg), mse_loss(x, y), 1e-12);
}

TEST(TotalLoss, PositiveUnlessEqual) {
  Image<double> x = random_image(3, 12, 12, 78);
  Image<double> y = x;
  y.chw[5] += 0.2;
  LossConfig cfg;
  EXPECT_GT(total_loss(x, y, cfg), 0.0);
}

TEST(TotalLoss, LiteralSsimSignFlagChangesTheTerm) {
  Image<double> x = random_image(3, 12, 12, 79);
  Image<double> y = random_image(3, 12, 12, 80);
  LossConfig dissim;
  LossConfig literal;
  literal.literal_ssim_term = true;
  const double s = ssim(x, y, dissim);
  const double m = mse_loss(x, y);
  EXPECT_NEAR(total_loss(x, y, dissim), m + 0.2 * (1.0 - s), 1e-9);
  EXPECT_NEAR(total_loss(x, y, literal), m + 0.2 * s, 1e-9);
}

TEST(Report, AggregatesEqualPerImageMeans) {
  MetricsReport r;
  r.dataset = "jung";
  r.split = "test";
  r.method = "Input";
  Rng rng(81);
  double sp = 0, ss = 0, sr = 0;
  for (int i = 0; i < 7; ++i) {
    MetricsReport::Entry e;
    e.id = "img" + std::to_string(i);
    e.psnr = rng.uniform(10, 30);
    e.ssim = rng.uniform(0.5, 1.0);
    e.rmse = rng.uniform(5, 70);
    sp += e.psnr;
    ss += e.ssim;
    sr += e.rmse;
    r.per_image.push_back(e);
  }
  EXPECT_NEAR(r.mean_psnr(), sp / 7, 1e-9);
  EXPECT_NEAR(r.mean_ssim(), ss / 7, 1e-9);
  EXPECT_NEAR(r.mean_rmse(), sr / 7, 1e-9);
}

TEST(Report, JsonRoundtripAndInfinityHandling) {
  MetricsReport r;
  r.dataset = "kligler";
  r.split = "test";
  r.method = "sanity";
  r.per_image.push_back({"a", std::numeric_limits<double>::infinity(), 1.0, 0.0});
  r.per_image.push_back({"b", 21.5, 0.83, 20.25});
  MetricsReport back = report_from_json(to_json(r));
  EXPECT_EQ(back.dataset, "kligler");
  ASSERT_EQ(back.per_image.size(), 2u);
  EXPECT_TRUE(std::isinf(back.per_image[0].psnr));
  EXPECT_DOUBLE_EQ(back.per_image[1].rmse, 20.25);
  const std::string tsv = to_tsv(r);
  EXPECT_NE(tsv.find("inf"), std::string::npos);
  EXPECT_NE(tsv.find("21.50"), std::string::npos);  // two decimal places
}

}  // namespace
