#include <gtest/gtest.h>

#include "deshadow/gradcheck.hpp"
#include "deshadow/ops.hpp"

using namespace deshadow;

namespace {

// Finite-difference check of a single op: loss = mean(op(inputs) * R).
void check_op(const std::string& name,
              std::map<std::string, Tensor<double>> inputs,
              const std::function<ag::Value<double>(
                  std::map<std::string, ag::Value<double>>&)>& build) {
  Tensor<double> projection;
  {
    ag::NoGradGuard ng;
    std::map<std::string, ag::Value<double>> leaves;
    for (const auto& [k, t] : inputs) leaves[k] = ag::leaf(t, false);
    projection = Tensor<double>(build(leaves).shape());
    Rng r(fnv1a("proj:" + name));
    for (auto& v : projection.vec()) v = r.uniform(-1, 1);
  }
  fd::EvalFn eval = [&build, projection](
                        const std::map<std::string, Tensor<double>>& in,
                        std::map<std::string, Tensor<double>>* grads) {
    const bool g = grads != nullptr;
    std::map<std::string, ag::Value<double>> leaves;
    for (const auto& [k, t] : in) leaves[k] = ag::leaf(t, g);
    ag::Value<double> out = build(leaves);
    ag::Value<double> loss = ag::mean_all(ag::mul(out, ag::constant(projection)));
    if (g) {
      ag::backward(loss);
      for (const auto& [k, t] : in) {
        (*grads)[k] = leaves.at(k).has_grad() ? leaves.at(k).grad()
                                              : Tensor<double>(t.shape());
      }
    }
    return loss.tensor()[0];
  };
  GradCheckOptions opts;
  BlockCheck c = fd::check(name, std::move(inputs), eval, opts);
  EXPECT_TRUE(c.pass) << name << " max_rel_err=" << c.max_rel_err;
}

Tensor<double> rand_t(const std::vector<int>& shape, std::uint64_t seed, double lo = -1,
                      double hi = 1) {
  Rng rng(seed);
  Tensor<double> t(shape);
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

TEST(Ops, ElementwiseGradients) {
  check_op("add", {{"a", rand_t({2, 3, 4}, 1)}, {"b", rand_t({2, 3, 4}, 2)}},
           [](auto& l) { return ag::add(l.at("a"), l.at("b")); });
  check_op("sub", {{"a", rand_t({2, 3, 4}, 3)}, {"b", rand_t({2, 3, 4}, 4)}},
           [](auto& l) { return ag::sub(l.at("a"), l.at("b")); });
  check_op("mul", {{"a", rand_t({2, 3, 4}, 5)}, {"b", rand_t({2, 3, 4}, 6)}},
           [](auto& l) { return ag::mul(l.at("a"), l.at("b")); });
  check_op("div", {{"a", rand_t({2, 3, 4}, 7)}, {"b", rand_t({2, 3, 4}, 8, 0.5, 2.0)}},
           [](auto& l) { return ag::div(l.at("a"), l.at("b")); });
  check_op("scale", {{"a", rand_t({2, 3, 4}, 9)}},
           [](auto& l) { return ag::scale(l.at("a"), 1.7); });
  check_op("add_scalar", {{"a", rand_t({2, 3, 4}, 10)}},
           [](auto& l) { return ag::add_scalar(l.at("a"), -0.4); });
  check_op("relu", {{"a", rand_t({2, 3, 4}, 11)}},
           [](auto& l) { return ag::relu(l.at("a")); });
  check_op("sigmoid", {{"a", rand_t({2, 3, 4}, 12)}},
           [](auto& l) { return ag::sigmoid(l.at("a")); });
  check_op("rsqrt_shift", {{"a", rand_t({5}, 13, 0.1, 2.0)}},
           [](auto& l) { return ag::rsqrt_shift(l.at("a"), 1e-5); });
}

TEST(Ops, ReductionBroadcastGradients) {
  check_op("mean_all", {{"a", rand_t({3, 4, 5}, 14)}},
           [](auto& l) { return ag::mean_all(l.at("a")); });
  check_op("sum_all", {{"a", rand_t({3, 4, 5}, 15)}},
           [](auto& l) { return ag::sum_all(l.at("a")); });
  check_op("spatial_mean", {{"a", rand_t({3, 4, 5}, 16)}},
           [](auto& l) { return ag::spatial_mean(l.at("a")); });
  check_op("broadcast_spatial", {{"a", rand_t({4}, 17)}},
           [](auto& l) { return ag::broadcast_spatial(l.at("a"), 3, 5); });
  check_op("mul_chan_bcast",
           {{"a", rand_t({3, 4, 5}, 18)}, {"m", rand_t({1, 4, 5}, 19)}},
           [](auto& l) { return ag::mul_chan_bcast(l.at("a"), l.at("m")); });
}

TEST(Ops, StructureGradients) {
  check_op("reshape", {{"a", rand_t({2, 3, 4}, 20)}},
           [](auto& l) { return ag::reshape(l.at("a"), {4, 6}); });
  check_op("concat_c", {{"a", rand_t({2, 3, 4}, 21)}, {"b", rand_t({3, 3, 4}, 22)}},
           [](auto& l) { return ag::concat_c(l.at("a"), l.at("b")); });
  check_op("slice_c", {{"a", rand_t({5, 3, 4}, 23)}},
           [](auto& l) { return ag::slice_c(l.at("a"), 1, 4); });
}

TEST(Ops, ConvResampleGradients) {
  check_op("conv2d_3x3",
           {{"x", rand_t({2, 5, 6}, 24)},
            {"w", rand_t({3, 2, 3, 3}, 25, -0.5, 0.5)},
            {"b", rand_t({3}, 26, -0.2, 0.2)}},
           [](auto& l) { return ag::conv2d(l.at("x"), l.at("w"), l.at("b")); });
  check_op("conv2d_1x1_nobias",
           {{"x", rand_t({3, 4, 5}, 27)}, {"w", rand_t({2, 3, 1, 1}, 28, -0.5, 0.5)}},
           [](auto& l) { return ag::conv2d(l.at("x"), l.at("w")); });
  const std::vector<double> taps = {0.25, 0.5, 0.25};
  check_op("conv1d_valid_y", {{"x", rand_t({2, 6, 5}, 29)}},
           [taps](auto& l) { return ag::conv1d_valid_fixed(l.at("x"), taps, 0); });
  check_op("conv1d_valid_x", {{"x", rand_t({2, 5, 7}, 30)}},
           [taps](auto& l) { return ag::conv1d_valid_fixed(l.at("x"), taps, 1); });
  check_op("blur1d_reflect_y", {{"x", rand_t({2, 5, 4}, 31)}},
           [](auto& l) {
             return ag::blur1d_reflect_op(l.at("x"), pyramid_taps_up<double>(), 0);
           });
  check_op("blur1d_reflect_x", {{"x", rand_t({2, 4, 6}, 32)}},
           [](auto& l) {
             return ag::blur1d_reflect_op(l.at("x"), pyramid_taps_up<double>(), 1);
           });
  check_op("zero_interleave", {{"x", rand_t({2, 3, 4}, 33)}},
           [](auto& l) { return ag::zero_interleave_op(l.at("x"), 5, 8); });
  check_op("avg_pool_grid", {{"x", rand_t({2, 5, 7}, 34)}},
           [](auto& l) { return ag::avg_pool_grid_op(l.at("x"), 2); });
  check_op("bilinear_up", {{"x", rand_t({2, 3, 4}, 35)}},
           [](auto& l) { return ag::bilinear_resize_op(l.at("x"), 7, 9); });
  check_op("bilinear_down", {{"x", rand_t({2, 6, 8}, 36)}},
           [](auto& l) { return ag::bilinear_resize_op(l.at("x"), 3, 3); });
}

TEST(Ops, TokenAttentionGradients) {
  check_op("chw_to_tokens", {{"x", rand_t({3, 4, 5}, 37)}},
           [](auto& l) { return ag::chw_to_tokens(l.at("x")); });
  check_op("tokens_to_chw", {{"t", rand_t({12, 3}, 38)}},
           [](auto& l) { return ag::tokens_to_chw(l.at("t"), 3, 4); });
  check_op("window_partition", {{"x", rand_t({2, 5, 6}, 39)}},
           [](auto& l) { return ag::window_partition(l.at("x"), 4); });
  check_op("window_merge", {{"t", rand_t({4, 16, 2}, 40)}},
           [](auto& l) { return ag::window_merge(l.at("t"), 2, 5, 6, 4); });
  check_op("linear_rank2",
           {{"x", rand_t({5, 3}, 41)},
            {"w", rand_t({3, 4}, 42, -0.5, 0.5)},
            {"b", rand_t({4}, 43, -0.2, 0.2)}},
           [](auto& l) { return ag::linear(l.at("x"), l.at("w"), l.at("b")); });
  check_op("linear_rank3",
           {{"x", rand_t({2, 5, 3}, 44)},
            {"w", rand_t({3, 3}, 45, -0.5, 0.5)},
            {"b", rand_t({3}, 46, -0.2, 0.2)}},
           [](auto& l) { return ag::linear(l.at("x"), l.at("w"), l.at("b")); });
  check_op("to_heads", {{"x", rand_t({2, 3, 6}, 47)}},
           [](auto& l) { return ag::to_heads(l.at("x"), 2); });
  check_op("from_heads", {{"x", rand_t({4, 3, 3}, 48)}},
           [](auto& l) { return ag::from_heads(l.at("x"), 2); });
  check_op("bmm_nn", {{"a", rand_t({2, 3, 4}, 49)}, {"b", rand_t({2, 4, 5}, 50)}},
           [](auto& l) { return ag::bmm_nn(l.at("a"), l.at("b")); });
  check_op("bmm_nt", {{"a", rand_t({2, 3, 4}, 51)}, {"b", rand_t({2, 5, 4}, 52)}},
           [](auto& l) { return ag::bmm_nt(l.at("a"), l.at("b")); });
  check_op("softmax_rows", {{"x", rand_t({2, 3, 5}, 53, -3, 3)}},
           [](auto& l) { return ag::softmax_rows(l.at("x")); });
}

TEST(Ops, SoftmaxRowsSumToOneAndAreNonNegative) {
  Tensor<double> logits = rand_t({3, 7, 9}, 54, -20, 20);
  ag::NoGradGuard ng;
  Tensor<double> p = ag::softmax_rows(ag::constant(logits)).tensor();
  for (int r = 0; r < 21; ++r) {
    double sum = 0;
    for (int j = 0; j < 9; ++j) {
      const double v = p[static_cast<std::size_t>(r) * 9 + j];
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Ops, GradAccumulatesAcrossReuse) {
  // y = x*x + x: dy/dx = 2x + 1 exercises multi-consumer accumulation.
  Tensor<double> xt = Tensor<double>::full({3}, 0.5);
  auto x = ag::leaf(xt, true);
  auto y = ag::sum_all(ag::add(ag::mul(x, x), x));
  ag::backward(y);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(x.grad()[i], 2.0, 1e-12);
}

TEST(Ops, NoGradModeRecordsNothing) {
  ag::NoGradGuard ng;
  auto x = ag::leaf(Tensor<double>::full({2}, 1.0), true);
  auto y = ag::mul(x, x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Ops, BackwardRequiresScalarRoot) {
  auto x = ag::leaf(Tensor<double>::full({3}, 1.0), true);
  auto y = ag::mul(x, x);
  EXPECT_THROW(ag::backward(y), ShapeError);
}

TEST(Ops, ShapeMismatchesThrow) {
  auto a = ag::leaf(Tensor<double>({2, 3, 4}));
  auto b = ag::leaf(Tensor<double>({2, 3, 5}));
  EXPECT_THROW(ag::add(a, b), ShapeError);
  EXPECT_THROW(ag::concat_c(a, ag::leaf(Tensor<double>({2, 4, 4}))), ShapeError);
  EXPECT_THROW(ag::slice_c(a, 1, 1), ShapeError);
  EXPECT_THROW(ag::to_heads(a, 3), ShapeError);
}

}  // namespace
