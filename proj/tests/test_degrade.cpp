#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "mcsr/degrade.hpp"
#include "mcsr/io/phantom.hpp"

using namespace mcsr;

namespace {

ImageGrid filled(std::size_t h, std::size_t w, float v) {
  ImageGrid img(h, w);
  std::fill(img.pixels.begin(), img.pixels.end(), v);
  return img;
}

// Multiples of 1/256 keep every block mean exactly representable.
ImageGrid dyadic_grid(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  ImageGrid img(h, w);
  for (auto& v : img.pixels) v = static_cast<float>(rng.below(257)) / 256.0f;
  return img;
}

double mean_of(const ImageGrid& img) {
  return std::accumulate(img.pixels.begin(), img.pixels.end(), 0.0) / static_cast<double>(img.size());
}

}  // namespace

TEST(Downsample, ConstantImageStaysConstant) {
  const auto lr = downsample(filled(8, 12, 0.3f), {4});
  ASSERT_EQ(lr.height, 2u);
  ASSERT_EQ(lr.width, 3u);
  for (float v : lr.pixels) EXPECT_FLOAT_EQ(v, 0.3f);
}

TEST(Downsample, TwoByTwoMean) {
  ImageGrid img(2, 2);
  img.pixels = {0, 1, 2, 3};
  const auto lr = downsample(img, {2});
  ASSERT_EQ(lr.size(), 1u);
  EXPECT_EQ(lr.pixels[0], 1.5f);
}

TEST(Downsample, RampMatchesNestedLoopOracle) {
  ImageGrid img(8, 8);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) img.at(i, j) = static_cast<float>(i * 8 + j);
  const auto lr = downsample(img, {4});
  // Block (a,b) mean of 8i+j over i in [4a,4a+4), j in [4b,4b+4) is 8(4a+1.5) + 4b+1.5.
  const float expected[4] = {13.5f, 17.5f, 45.5f, 49.5f};
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(lr.pixels[k], expected[k]);
}

TEST(Downsample, NonDivisibleExtentsThrow) {
  EXPECT_THROW(downsample(filled(10, 8, 0), {4}), std::invalid_argument);
  EXPECT_THROW(downsample(filled(8, 6, 0), {4}), std::invalid_argument);
}

TEST(Downsample, PreservesGlobalMean) {
  const auto img = dyadic_grid(64, 64, 1);
  EXPECT_EQ(mean_of(downsample(img, {4})), mean_of(img));
  EXPECT_EQ(mean_of(downsample(img, {8})), mean_of(img));
  Rng rng(2);
  ImageGrid noisy(32, 32);
  for (auto& v : noisy.pixels) v = static_cast<float>(rng.uniform());
  EXPECT_NEAR(mean_of(downsample(noisy, {4})), mean_of(noisy), 1e-7);
}

TEST(Downsample, ComposesAcrossScales) {
  const auto img = dyadic_grid(64, 64, 3);
  EXPECT_EQ(downsample(downsample(img, {2}), {4}).pixels, downsample(img, {8}).pixels);
  EXPECT_EQ(downsample(downsample(img, {4}), {2}).pixels, downsample(img, {8}).pixels);
  Rng rng(4);
  ImageGrid noisy(32, 32);
  for (auto& v : noisy.pixels) v = static_cast<float>(rng.uniform());
  const auto two = downsample(downsample(noisy, {2}), {2}), one = downsample(noisy, {4});
  for (std::size_t k = 0; k < one.size(); ++k) EXPECT_NEAR(two.pixels[k], one.pixels[k], 1e-7);
}

TEST(BilinearUpsample, HalfPixelCentersOnARow) {
  ImageGrid img(1, 2);
  img.pixels = {0.0f, 1.0f};
  const auto up = bilinear_upsample(img, 2);
  ASSERT_EQ(up.height, 2u);
  ASSERT_EQ(up.width, 4u);
  const float expected[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(up.at(r, j), expected[j]);
}

TEST(BilinearUpsample, ConstantImageStaysConstant) {
  const auto up = bilinear_upsample(filled(3, 5, 0.42f), 4);
  ASSERT_EQ(up.height, 12u);
  ASSERT_EQ(up.width, 20u);
  for (float v : up.pixels) EXPECT_FLOAT_EQ(v, 0.42f);
}

TEST(BilinearUpsample, OutputStaysWithinInputRange) {
  Rng rng(6);
  ImageGrid img(7, 5);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform(-2.0, 3.0));
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  for (std::size_t s : {2, 3, 4, 8}) {
    for (float v : bilinear_upsample(img, s).pixels) {
      EXPECT_GE(v, *lo);
      EXPECT_LE(v, *hi);
    }
  }
}

TEST(BilinearUpsample, ScaleBelowTwoThrows) { EXPECT_THROW(bilinear_upsample(filled(2, 2, 0), 1), std::invalid_argument); }

TEST(BilinearUpsample, BoxOfUpsampleRecoversSmoothPhantom) {
  PhantomSpec spec;
  spec.seed = 12;
  // Full-resolution phantom: edges span ~1 pixel, smooth relative to its grid.
  const auto lr = generate_phantom_pair(spec).second;
  const auto back = downsample(bilinear_upsample(lr, 4), {4});
  double mse = 0;
  for (std::size_t k = 0; k < lr.size(); ++k) mse += std::pow(back.pixels[k] - lr.pixels[k], 2);
  mse /= static_cast<double>(lr.size());
  EXPECT_LT(mse, 1e-3);  // measured 9.8e-5
}

TEST(MakeLr, SizesAndReplay) {
  PhantomSpec spec;
  spec.seed = 13;
  const auto hr = generate_phantom_pair(spec).second;
  const auto [lr4, op4] = make_lr(hr, 4);
  EXPECT_EQ(lr4.height, 16u);
  EXPECT_EQ(lr4.width, 16u);
  EXPECT_EQ(op4.scale, 4u);
  EXPECT_EQ(op4.kind, DegradationKind::box);
  const auto [lr8, op8] = make_lr(hr, 8);
  EXPECT_EQ(lr8.height, 8u);
  EXPECT_EQ(downsample(hr, op8).pixels, lr8.pixels);
  EXPECT_EQ(downsample(hr, op4).pixels, lr4.pixels);
}
