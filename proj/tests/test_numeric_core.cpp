#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "mcsr/core.hpp"

using namespace mcsr;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

// Direct nested-loop cross-correlation; independent of im2col/GEMM.
std::vector<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, std::size_t stride,
                                std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), o = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(n * o * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double s = 0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj) {
                const long yi = static_cast<long>(i * stride + ki) - static_cast<long>(pad);
                const long xj = static_cast<long>(j * stride + kj) - static_cast<long>(pad);
                if (yi < 0 || xj < 0 || yi >= static_cast<long>(h) || xj >= static_cast<long>(wd)) continue;
                s += x[((b * c + ic) * h + yi) * wd + xj] * w[((oc * c + ic) * k + ki) * k + kj];
              }
          out[((b * o + oc) * oh + i) * ow + j] = s;
        }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

const Tensor<double> kNone{};

}  // namespace

TEST(Mish, KnownValues) {
  auto y = mish(Tensor<double>({3}, {0.0, 1.0, -20.0}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 0.8650983882673103, 1e-12);
  EXPECT_LT(std::abs(y[2]), 1e-7);
  EXPECT_NEAR(y[2], -4.122307240628762e-08, 1e-15);
}

TEST(Mish, LargeInputsStayFinite) {
  auto y = mish(Tensor<float>({4}, {80.f, 500.f, -500.f, -80.f}));
  for (float v : y.values()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_FLOAT_EQ(y[0], 80.f);
  EXPECT_FLOAT_EQ(y[1], 500.f);
}

TEST(Mish, GradCheck) {
  Rng rng(1);
  auto x = random_tensor({64}, rng, true, -4.0, 4.0);
  auto r = grad_check([](const auto& in) { return sum(mish(in[0])); }, {x}, {.probes_per_input = 64});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(LeakyRelu, Values) {
  auto y = leaky_relu(Tensor<double>({3}, {1.0, -1.0, 0.0}), 0.2);
  EXPECT_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], -0.2);
  EXPECT_EQ(y[2], 0.0);
}

TEST(Conv2d, OneByOneIdentity) {
  Rng rng(2);
  auto x = random_tensor({2, 1, 5, 5}, rng, false);
  auto y = conv2d(x, Tensor<double>({1, 1, 1, 1}, {1.0}), kNone, 1, 0);
  EXPECT_EQ(y.values(), x.values());
}

TEST(Conv2d, ConstantInputAllOnesKernel) {
  auto x = Tensor<double>::full({1, 1, 5, 5}, 0.7);
  auto y = conv2d(x, Tensor<double>::full({1, 1, 3, 3}, 1.0), kNone, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (double v : y.values()) EXPECT_NEAR(v, 9 * 0.7, 1e-12);
}

TEST(Conv2d, StridedShapeAndNestedLoopOracle) {
  Rng rng(3);
  auto x = random_tensor({1, 1, 6, 6}, rng, false);
  auto w = random_tensor({1, 1, 4, 4}, rng, false);
  auto y = conv2d(x, w, kNone, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  auto ref = conv_oracle(x, w, 2, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv2d, MultiChannelBatchOracle) {
  Rng rng(4);
  auto x = random_tensor({3, 4, 7, 6}, rng, false);
  auto w = random_tensor({5, 4, 3, 3}, rng, false);
  auto b = random_tensor({5}, rng, false);
  auto y = conv2d(x, w, b, 1, 1);
  auto ref = conv_oracle(x, w, 1, 1);
  const std::size_t plane = 7 * 6;
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i] + b[(i / plane) % 5], 1e-12);
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(conv2d(Tensor<double>::zeros({1, 2, 4, 4}), Tensor<double>::zeros({1, 3, 3, 3}), kNone, 1, 1),
               ShapeError);
  EXPECT_THROW(conv2d(Tensor<double>::zeros({1, 1, 2, 2}), Tensor<double>::zeros({1, 1, 5, 5}), kNone, 1, 0),
               ShapeError);
}

TEST(Conv2d, GradCheck) {
  Rng rng(5);
  auto x = random_tensor({1, 2, 5, 5}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  auto wt = random_tensor({1, 3, 5, 5}, rng, false);
  auto r = grad_check(
      [&](const auto& in) { return sum(mul(conv2d(in[0], in[1], in[2], 1, 1), wt)); }, {x, w, b});
  EXPECT_LT(r.max_rel_error, 1e-5);
  auto ws = random_tensor({2, 2, 4, 4}, rng);
  auto wt2 = random_tensor({1, 2, 2, 2}, rng, false);
  auto r2 = grad_check([&](const auto& in) { return sum(mul(conv2d(in[0], in[1], kNone, 2, 1), wt2)); }, {x, ws});
  EXPECT_LT(r2.max_rel_error, 1e-5);
}

TEST(ConvTranspose2d, UnitInputSpreadsKernel) {
  auto y = conv_transpose2d(Tensor<double>({1, 1, 1, 1}, {0.3}), Tensor<double>::full({1, 1, 2, 2}, 1.0), kNone, 2, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.3);
}

TEST(ConvTranspose2d, OutputShape) {
  auto y = conv_transpose2d(Tensor<double>::zeros({1, 2, 3, 3}), Tensor<double>::zeros({2, 1, 4, 4}), kNone, 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 6, 6}));
  EXPECT_THROW(conv_transpose2d(Tensor<double>::zeros({1, 2, 3, 3}), Tensor<double>::zeros({3, 1, 4, 4}), kNone, 2, 1),
               ShapeError);
}

TEST(ConvTranspose2d, AdjointOfConv2d) {
  Rng rng(6);
  struct Case {
    Shape x, k;
    std::size_t stride, pad;
  };
  for (const auto& c : {Case{{2, 3, 6, 6}, {4, 3, 4, 4}, 2, 1}, Case{{1, 2, 5, 7}, {3, 2, 3, 3}, 1, 1},
                        Case{{1, 2, 8, 8}, {2, 2, 2, 2}, 2, 0}}) {
    auto x = random_tensor(c.x, rng, false);
    auto k = random_tensor(c.k, rng, false);
    auto y = random_tensor(conv2d(x, k, kNone, c.stride, c.pad).shape(), rng, false);
    const double lhs = dot(conv2d(x, k, kNone, c.stride, c.pad).data(), y.data());
    const double rhs = dot(x.data(), conv_transpose2d(y, k, kNone, c.stride, c.pad).data());
    EXPECT_LT(std::abs(lhs - rhs) / std::abs(lhs), 1e-5);
  }
}

TEST(ConvTranspose2d, GradCheck) {
  Rng rng(7);
  auto x = random_tensor({2, 3, 3, 3}, rng);
  auto w = random_tensor({3, 2, 2, 2}, rng);
  auto b = random_tensor({2}, rng);
  auto wt = random_tensor({2, 2, 6, 6}, rng, false);
  auto r = grad_check(
      [&](const auto& in) { return sum(mul(conv_transpose2d(in[0], in[1], in[2], 2, 0), wt)); }, {x, w, b});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(MaxPool, Values) {
  auto y = max_pool_2x2(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 4.0);
  auto c = max_pool_2x2(Tensor<double>::full({1, 2, 4, 6}, 0.25));
  EXPECT_EQ(c.shape(), (Shape{1, 2, 2, 3}));
  for (double v : c.values()) EXPECT_EQ(v, 0.25);
}

TEST(MaxPool, BlockMaxOracle) {
  Rng rng(8);
  auto x = random_tensor({1, 1, 4, 4}, rng, false);
  auto y = max_pool_2x2(x);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      const double m = std::max({x[(2 * i) * 4 + 2 * j], x[(2 * i) * 4 + 2 * j + 1], x[(2 * i + 1) * 4 + 2 * j],
                                 x[(2 * i + 1) * 4 + 2 * j + 1]});
      EXPECT_EQ(y[i * 2 + j], m);
    }
}

TEST(MaxPool, TiesRouteToFirstAndOddThrows) {
  auto x = Tensor<double>({1, 1, 2, 2}, {5, 5, 5, 5}, true);
  sum(max_pool_2x2(x)).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 0, 0}));
  EXPECT_THROW(max_pool_2x2(Tensor<double>::zeros({1, 1, 3, 4})), ShapeError);
}

TEST(MaxPool, GradCheck) {
  Rng rng(9);
  auto x = random_tensor({2, 2, 4, 4}, rng);
  auto wt = random_tensor({2, 2, 2, 2}, rng, false);
  auto r = grad_check([&](const auto& in) { return sum(mul(max_pool_2x2(in[0]), wt)); }, {x});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GroupNorm, NormalizedGroups) {
  Rng rng(10);
  auto x = random_tensor({2, 16, 3, 3}, rng, false, -3.0, 5.0);
  auto y = group_norm(x, 8, Tensor<double>::full({16}, 1.0), Tensor<double>::zeros({16}));
  const std::size_t group = 2 * 9;
  for (std::size_t g = 0; g < 2 * 8; ++g) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < group; ++j) m += y[g * group + j];
    m /= group;
    for (std::size_t j = 0; j < group; ++j) v += (y[g * group + j] - m) * (y[g * group + j] - m);
    v /= group;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

TEST(GroupNorm, ConstantInputGivesBeta) {
  auto y = group_norm(Tensor<double>::full({1, 8, 2, 2}, 3.0), 8, Tensor<double>::full({8}, 1.0),
                      Tensor<double>::full({8}, 0.5));
  for (double v : y.values()) EXPECT_NEAR(v, 0.5, 1e-12);
}

TEST(GroupNorm, PerChannelOracleWhenGroupsEqualChannels) {
  Rng rng(11);
  auto x = random_tensor({1, 8, 4, 4}, rng, false);
  auto gamma = random_tensor({8}, rng, false);
  auto beta = random_tensor({8}, rng, false);
  auto y = group_norm(x, 8, gamma, beta);
  for (std::size_t c = 0; c < 8; ++c) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 16; ++j) m += x[c * 16 + j];
    m /= 16;
    for (std::size_t j = 0; j < 16; ++j) v += (x[c * 16 + j] - m) * (x[c * 16 + j] - m);
    v /= 16;
    for (std::size_t j = 0; j < 16; ++j) {
      EXPECT_NEAR(y[c * 16 + j], gamma[c] * (x[c * 16 + j] - m) / std::sqrt(v + 1e-5) + beta[c], 1e-12);
    }
  }
}

TEST(GroupNorm, IndivisibleChannelsThrow) {
  EXPECT_THROW(group_norm(Tensor<double>::zeros({1, 12, 2, 2}), 8, Tensor<double>::zeros({12}),
                          Tensor<double>::zeros({12})),
               ShapeError);
}

TEST(GroupNorm, GradCheck) {
  Rng rng(12);
  auto x = random_tensor({2, 16, 3, 3}, rng);
  auto gamma = random_tensor({16}, rng);
  auto beta = random_tensor({16}, rng);
  auto wt = random_tensor({2, 16, 3, 3}, rng, false);
  auto r = grad_check([&](const auto& in) { return sum(mul(group_norm(in[0], 8, in[1], in[2]), wt)); },
                      {x, gamma, beta});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(BatchNorm, TrainingZeroMeanAndRunningStats) {
  BatchNormStats<double> stats(1);
  auto x = Tensor<double>({2, 1, 1, 1}, {1.0, 3.0});
  auto y = batch_norm(x, Tensor<double>::full({1}, 1.0), Tensor<double>::zeros({1}), stats, true);
  const double s = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y[0], -s, 1e-12);
  EXPECT_NEAR(y[1], s, 1e-12);
  EXPECT_NEAR(stats.mean[0], 0.2, 1e-12);
  EXPECT_NEAR(stats.var[0], 0.9 + 0.1 * 2.0, 1e-12);
}

TEST(BatchNorm, BatchMeanIsZeroPerChannel) {
  Rng rng(13);
  BatchNormStats<double> stats(3);
  auto y = batch_norm(random_tensor({4, 3, 2, 2}, rng, false, 2.0, 9.0), Tensor<double>::full({3}, 1.0),
                      Tensor<double>::zeros({3}), stats, true);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t j = 0; j < 4; ++j) m += y[(n * 3 + c) * 4 + j];
    EXPECT_NEAR(m / 16, 0.0, 1e-12);
  }
}

TEST(BatchNorm, EvalUsesRunningStats) {
  BatchNormStats<double> stats(1);
  stats.mean = {0.5};
  stats.var = {4.0};
  auto y = batch_norm(Tensor<double>({1, 1, 1, 2}, {2.5, -1.5}), Tensor<double>::full({1}, 1.0),
                      Tensor<double>::zeros({1}), stats, false);
  EXPECT_NEAR(y[0], 2.0 / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_NEAR(y[1], -2.0 / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_EQ(stats.mean[0], 0.5);
}

TEST(BatchNorm, TrainingWithSingleSampleThrows) {
  BatchNormStats<double> stats(1);
  EXPECT_THROW(batch_norm(Tensor<double>::zeros({1, 1, 2, 2}), Tensor<double>::full({1}, 1.0),
                          Tensor<double>::zeros({1}), stats, true),
               ShapeError);
}

TEST(BatchNorm, GradCheckBothModes) {
  Rng rng(14);
  auto x = random_tensor({3, 2, 3, 3}, rng);
  auto gamma = random_tensor({2}, rng);
  auto beta = random_tensor({2}, rng);
  auto wt = random_tensor({3, 2, 3, 3}, rng, false);
  for (bool training : {true, false}) {
    auto r = grad_check(
        [&](const auto& in) {
          BatchNormStats<double> stats(2);
          stats.mean = {0.1, -0.2};
          stats.var = {0.5, 1.5};
          return sum(mul(batch_norm(in[0], in[1], in[2], stats, training), wt));
        },
        {x, gamma, beta});
    EXPECT_LT(r.max_rel_error, 1e-5) << "training=" << training;
  }
}

TEST(Losses, GradCheck) {
  Rng rng(15);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({3, 4}, rng);
  auto w = random_tensor({5, 4}, rng);
  auto bias = random_tensor({5}, rng);
  auto r = grad_check(
      [](const auto& in) {
        auto h = linear(in[0], in[2], in[3]);
        auto logits = reshape(h, {15});
        auto pooled = global_avg_pool(reshape(concat_channels(reshape(in[0], {1, 3, 2, 2}), reshape(in[1], {1, 3, 2, 2})), {1, 6, 2, 2}));
        return add(add(add(mse(in[0], in[1]), l1(in[0], in[1])), bce_with_logits(logits, 1.0)),
                   add(bce_with_logits(sigmoid(logits), 0.0), mean(group_mean(mul(pooled, pooled), 3))));
      },
      {a, b, w, bias});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Losses, BceMatchesProbabilityForm) {
  auto z = Tensor<double>({3}, {-2.0, 0.3, 4.0});
  const double expected = [&] {
    double s = 0;
    for (double v : z.values()) s += -std::log(1.0 / (1.0 + std::exp(-v)));
    return s / 3;
  }();
  EXPECT_NEAR(bce_with_logits(z, 1.0).item(), expected, 1e-12);
}

TEST(Adam, ZeroGradientLeavesParams) {
  std::vector<double> p{1.0, -2.0};
  std::vector<double> g{0.0, 0.0};
  auto s = adam_step<double>({&p}, {std::span<const double>(g)}, AdamState(0.1, 0.5, 0.999));
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  std::vector<double> p{1.0, 1.0, 1.0};
  std::vector<double> g{0.3, -7.0, 1e-3};
  adam_step<double>({&p}, {std::span<const double>(g)}, AdamState(2e-4, 0.5, 0.999));
  EXPECT_NEAR(p[0], 1.0 - 2e-4, 1e-10);
  EXPECT_NEAR(p[1], 1.0 + 2e-4, 1e-10);
  EXPECT_NEAR(p[2], 1.0 - 2e-4, 1e-8);
}

TEST(Adam, ThreeScriptedStepsMatchOracle) {
  std::vector<double> p{1.0};
  AdamState s(0.1, 0.5, 0.999);
  const double expected[] = {0.900000002, 0.9080854744023615, 0.8306170420402388};
  int i = 0;
  for (double grad : {0.5, -0.3, 0.8}) {
    std::vector<double> g{grad};
    s = adam_step<double>({&p}, {std::span<const double>(g)}, std::move(s));
    EXPECT_NEAR(p[0], expected[i++], 1e-12);
  }
  EXPECT_EQ(s.step, 3u);
}

TEST(Adam, ShapeMismatchThrows) {
  std::vector<double> p{1.0, 2.0};
  std::vector<double> g{1.0};
  EXPECT_THROW(adam_step<double>({&p}, {std::span<const double>(g)}, AdamState{}), ShapeError);
}

TEST(LrSchedule, CosineEndpointsAndMonotone) {
  LrSchedule s{LrSchedule::Kind::cosine, 2e-4, 100};
  EXPECT_DOUBLE_EQ(s.lr_at(0), 2e-4);
  EXPECT_DOUBLE_EQ(s.lr_at(100), 0.0);
  EXPECT_NEAR(s.lr_at(50), 1e-4, 1e-15);
  for (std::size_t t = 1; t <= 120; ++t) EXPECT_LE(s.lr_at(t), s.lr_at(t - 1));
  LrSchedule c{LrSchedule::Kind::constant, 3e-3, 10};
  for (std::size_t t = 0; t < 20; ++t) EXPECT_EQ(c.lr_at(t), 3e-3);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  auto x = Tensor<double>({2}, {1.5, -2.0}, true);
  auto y = mul(x, x);
  sum(add(y, y)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -8.0);
}

TEST(Autodiff, NoGradGuardSkipsGraph) {
  auto x = Tensor<double>({1}, {1.0}, true);
  NoGradGuard guard;
  auto y = mish(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Determinism, RepeatedConvIsBitIdentical) {
  Rng r1(99), r2(99);
  auto x1 = random_tensor({2, 3, 8, 8}, r1, false);
  auto x2 = random_tensor({2, 3, 8, 8}, r2, false);
  auto w = Tensor<float>({4, 3, 3, 3}, std::vector<float>(108, 0.1f));
  auto a = conv2d(cast<float>(x1), w, Tensor<float>(), 1, 1);
  auto b = conv2d(cast<float>(x2), w, Tensor<float>(), 1, 1);
  EXPECT_EQ(a.values(), b.values());
}

// Identical values stored at differently aligned addresses must reduce to
// identical bits (vectorized reductions peel by alignment otherwise).
TEST(Determinism, ReductionsIgnoreBufferAlignment) {
  Rng rng(5);
  std::vector<float> values(2 * 16 * 9 * 9);
  for (auto& v : values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  std::vector<Tensor<float>> copies;
  std::set<std::uintptr_t> residues;
  std::vector<std::vector<char>> spacers;
  for (int attempt = 0; attempt < 64 && residues.size() < 3; ++attempt) {
    spacers.emplace_back(static_cast<std::size_t>(attempt * 8 + 1));
    Tensor<float> t({2, 16, 9, 9}, values);
    if (residues.insert(reinterpret_cast<std::uintptr_t>(t.values().data()) % 64).second) copies.push_back(t);
  }
  ASSERT_GE(copies.size(), 2u);
  auto gamma = Tensor<float>::full({16}, 1.3f), beta = Tensor<float>::full({16}, 0.1f);
  const auto ref_gn = group_norm(copies[0], 8, gamma, beta).values();
  const auto ref_sum = sum(copies[0]).item();
  for (const auto& c : copies) {
    EXPECT_EQ(group_norm(c, 8, gamma, beta).values(), ref_gn);
    EXPECT_EQ(sum(c).item(), ref_sum);
    EXPECT_EQ(l1(c, copies[0]).item(), 0.0f);
  }
}
