#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "mcsr/io/image.hpp"

namespace mcsr {

enum class DegradationKind { box };

inline std::string to_string(DegradationKind) { return "box"; }

/// The known HR -> LR operator: mean over each s x s block.
struct DegradationOp {
  std::size_t scale = 4;
  DegradationKind kind = DegradationKind::box;
};

inline ImageGrid downsample(const ImageGrid& img, const DegradationOp& op) {
  const std::size_t s = op.scale;
  if (s < 1 || img.height % s != 0 || img.width % s != 0) {
    throw std::invalid_argument("downsample: extents " + std::to_string(img.height) + "x" +
                                std::to_string(img.width) + " not divisible by " + std::to_string(s));
  }
  ImageGrid out(img.height / s, img.width / s, img.modality, img.subject_id);
  const double inv = 1.0 / static_cast<double>(s * s);
  for (std::size_t i = 0; i < out.height; ++i)
    for (std::size_t j = 0; j < out.width; ++j) {
      double acc = 0;
      for (std::size_t a = 0; a < s; ++a)
        for (std::size_t b = 0; b < s; ++b) acc += img.at(i * s + a, j * s + b);
      out.at(i, j) = static_cast<float>(acc * inv);
    }
  return out;
}

/// Half-pixel-center (align-corners-false) bilinear interpolation onto the
/// s-times larger grid with edge clamping.
inline ImageGrid bilinear_upsample(const ImageGrid& img, std::size_t s) {
  if (s < 2) throw std::invalid_argument("bilinear_upsample: scale must be >= 2");
  ImageGrid out(img.height * s, img.width * s, img.modality, img.subject_id);
  auto source = [s](std::size_t o, std::size_t n, std::size_t& lo, std::size_t& hi, double& t) {
    const double src = std::clamp((static_cast<double>(o) + 0.5) / static_cast<double>(s) - 0.5, 0.0,
                                  static_cast<double>(n - 1));
    lo = static_cast<std::size_t>(std::floor(src));
    hi = std::min(lo + 1, n - 1);
    t = src - static_cast<double>(lo);
  };
  for (std::size_t i = 0; i < out.height; ++i) {
    std::size_t y0, y1;
    double ty;
    source(i, img.height, y0, y1, ty);
    for (std::size_t j = 0; j < out.width; ++j) {
      std::size_t x0, x1;
      double tx;
      source(j, img.width, x0, x1, tx);
      const double top = (1 - tx) * img.at(y0, x0) + tx * img.at(y0, x1);
      const double bottom = (1 - tx) * img.at(y1, x0) + tx * img.at(y1, x1);
      out.at(i, j) = static_cast<float>((1 - ty) * top + ty * bottom);
    }
  }
  return out;
}

/// Retrospective LR generation; returns the operator so the same D can be
/// applied inside the data-consistency loss.
inline std::pair<ImageGrid, DegradationOp> make_lr(const ImageGrid& hr, std::size_t scale) {
  DegradationOp op{scale, DegradationKind::box};
  return {downsample(hr, op), op};
}

}  // namespace mcsr
