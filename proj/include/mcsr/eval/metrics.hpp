#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcsr/io/image.hpp"

namespace mcsr {

inline constexpr double kPsnrCapDb = 100.0;

namespace detail {

inline void require_same_extents(const ImageGrid& a, const ImageGrid& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument(std::string(what) + ": extents " + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " and " + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + " differ");
  }
}

}  // namespace detail

inline double mse(const ImageGrid& a, const ImageGrid& b) {
  detail::require_same_extents(a, b, "mse");
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a.pixels[k]) - static_cast<double>(b.pixels[k]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// 10 log10(1 / MSE) with peak 1; zero error reports kPsnrCapDb.
inline double psnr(const ImageGrid& a, const ImageGrid& b) {
  const double e = mse(a, b);
  if (e == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / e));
}

struct SsimOptions {
  static constexpr std::size_t kWindow = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

/// Normalized 11-tap Gaussian.
inline std::array<double, SsimOptions::kWindow> gaussian_window(double sigma) {
  std::array<double, SsimOptions::kWindow> g{};
  const double c = (SsimOptions::kWindow - 1) / 2.0;
  double total = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = static_cast<double>(i) - c;
    g[i] = std::exp(-x * x / (2 * sigma * sigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

/// Mean SSIM over all fully-contained 11x11 windows (no padding).
inline double ssim(const ImageGrid& a, const ImageGrid& b, const SsimOptions& opt = {}) {
  detail::require_same_extents(a, b, "ssim");
  constexpr std::size_t k = SsimOptions::kWindow;
  if (a.height < k || a.width < k) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const auto g = gaussian_window(opt.sigma);
  const std::size_t h = a.height, w = a.width, oh = h - k + 1, ow = w - k + 1;

  // Horizontal pass over five moment images, then vertical.
  std::array<std::vector<double>, 5> rows;
  for (auto& r : rows) r.assign(h * ow, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      double s[5] = {0, 0, 0, 0, 0};
      for (std::size_t t = 0; t < k; ++t) {
        const double x = a.pixels[i * w + j + t], y = b.pixels[i * w + j + t];
        s[0] += g[t] * x;
        s[1] += g[t] * y;
        s[2] += g[t] * x * x;
        s[3] += g[t] * y * y;
        s[4] += g[t] * x * y;
      }
      for (int m = 0; m < 5; ++m) rows[m][i * ow + j] = s[m];
    }
  }
  const double c1 = std::pow(opt.k1 * opt.range, 2), c2 = std::pow(opt.k2 * opt.range, 2);
  double total = 0;
  for (std::size_t i = 0; i < oh; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      double s[5] = {0, 0, 0, 0, 0};
      for (std::size_t t = 0; t < k; ++t)
        for (int m = 0; m < 5; ++m) s[m] += g[t] * rows[m][(i + t) * ow + j];
      const double mx = s[0], my = s[1];
      const double vx = s[2] - mx * mx, vy = s[3] - my * my, cxy = s[4] - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  }
  return total / static_cast<double>(oh * ow);
}

/// |a - b| per pixel.
inline ImageGrid abs_error_map(const ImageGrid& output, const ImageGrid& truth) {
  detail::require_same_extents(output, truth, "abs_error_map");
  ImageGrid out(output.height, output.width, Modality::output, output.subject_id);
  for (std::size_t k = 0; k < out.size(); ++k) out.pixels[k] = std::abs(output.pixels[k] - truth.pixels[k]);
  return out;
}

}  // namespace mcsr
