#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcsr/core/random.hpp"
#include "mcsr/io/image.hpp"

namespace mcsr {

inline constexpr std::size_t kTissueClasses = 4;

/// Monotone transfer u -> gain[tissue] * u^gamma (or gain * (1 - u^gamma)
/// when inverted), applied to the latent intensity of each structure.
struct ContrastMap {
  double gamma = 1.0;
  bool invert = false;
  std::array<double, kTissueClasses> gain{1.0, 1.0, 1.0, 1.0};

  double apply(double latent, std::size_t tissue) const {
    const double base = std::pow(std::clamp(latent, 0.0, 1.0), gamma);
    return std::clamp(gain.at(tissue) * (invert ? 1.0 - base : base), 0.0, 1.0);
  }

  static ContrastMap identity() { return {}; }
  // Square-root curve with per-tissue gains that reorder tissue brightness.
  static ContrastMap default_target() { return {0.5, false, {1.0, 0.6, 1.5, 1.1}}; }
};

inline void to_json(nlohmann::json& j, const ContrastMap& m) {
  j = {{"gamma", m.gamma}, {"invert", m.invert}, {"gain", m.gain}};
}
inline void from_json(const nlohmann::json& j, ContrastMap& m) {
  m.gamma = j.at("gamma").get<double>();
  m.invert = j.at("invert").get<bool>();
  m.gain = j.at("gain").get<std::array<double, kTissueClasses>>();
}

struct PhantomSpec {
  std::uint64_t seed = 0;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t num_structures = 6;  // including the outer head ellipse
  ContrastMap reference_map = ContrastMap::identity();
  ContrastMap target_map = ContrastMap::default_target();
  double noise_sigma_reference = 0.02;
  double noise_sigma_target = 0.01;
  double misalignment_px = 2.0;
};

inline void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = {{"seed", s.seed},
       {"height", s.height},
       {"width", s.width},
       {"num_structures", s.num_structures},
       {"reference_map", s.reference_map},
       {"target_map", s.target_map},
       {"noise_sigma_reference", s.noise_sigma_reference},
       {"noise_sigma_target", s.noise_sigma_target},
       {"misalignment_px", s.misalignment_px}};
}
inline void from_json(const nlohmann::json& j, PhantomSpec& s) {
  s.seed = j.at("seed").get<std::uint64_t>();
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.num_structures = j.at("num_structures").get<std::size_t>();
  s.reference_map = j.at("reference_map").get<ContrastMap>();
  s.target_map = j.at("target_map").get<ContrastMap>();
  s.noise_sigma_reference = j.at("noise_sigma_reference").get<double>();
  s.noise_sigma_target = j.at("noise_sigma_target").get<double>();
  s.misalignment_px = j.at("misalignment_px").get<double>();
}

/// A soft-edged rotated ellipse in pixel coordinates.
struct Structure {
  double cy = 0, cx = 0;  // center (row, column)
  double ry = 1, rx = 1;  // semi-axes
  double angle = 0;
  std::size_t tissue = 0;
  double latent = 0;  // reference-scale intensity before the contrast map

  /// Coverage in [0,1] at pixel center (i, j); the edge ramps over ~1 pixel.
  double coverage(double i, double j) const {
    const double dy = i - cy, dx = j - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
    const double rho = std::sqrt(u * u + v * v);
    const double signed_px = (1.0 - rho) * std::min(rx, ry);
    return 1.0 / (1.0 + std::exp(-signed_px / 0.35));
  }
};

/// Shared anatomy plus the per-modality structure lists (identical except
/// for the displaced structure in the target list).
struct PhantomGeometry {
  std::vector<Structure> reference;
  std::vector<Structure> target;
  std::size_t displaced = 1;
  // Smooth multiplicative texture shared by both modalities.
  double texture_amp = 0.06;
  double texture_fy = 1, texture_fx = 1, texture_phase_y = 0, texture_phase_x = 0;

  double texture(double i, double j, std::size_t h, std::size_t w) const {
    return 1.0 + texture_amp * std::sin(2 * std::numbers::pi * texture_fy * i / h + texture_phase_y) *
                     std::sin(2 * std::numbers::pi * texture_fx * j / w + texture_phase_x);
  }
};

inline void validate(const PhantomSpec& spec) {
  if (spec.height < 16 || spec.width < 16) {
    throw std::invalid_argument("phantom: canvas " + std::to_string(spec.height) + "x" + std::to_string(spec.width) +
                                " is below the 16x16 minimum");
  }
  if (spec.num_structures < 1 || spec.num_structures > spec.height * spec.width / 128) {
    throw std::invalid_argument("phantom: canvas too small for " + std::to_string(spec.num_structures) +
                                " structures");
  }
  if (spec.noise_sigma_reference < 0 || spec.noise_sigma_target < 0 || spec.misalignment_px < 0) {
    throw std::invalid_argument("phantom: noise and misalignment must be non-negative");
  }
}

inline PhantomGeometry phantom_geometry(const PhantomSpec& spec) {
  validate(spec);
  static constexpr std::array<double, kTissueClasses> kLatent{0.45, 0.9, 0.25, 0.65};
  Rng rng(derive_seed(spec.seed, 1));
  const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  const double side = std::min(h, w);
  PhantomGeometry g;

  Structure head;
  head.cy = h / 2 + rng.uniform(-0.04, 0.04) * h;
  head.cx = w / 2 + rng.uniform(-0.04, 0.04) * w;
  head.ry = rng.uniform(0.36, 0.44) * h;
  head.rx = rng.uniform(0.30, 0.40) * w;
  head.angle = rng.uniform(-0.25, 0.25);
  head.tissue = 0;
  head.latent = kLatent[0] + rng.uniform(-0.03, 0.03);
  g.reference.push_back(head);

  for (std::size_t k = 1; k < spec.num_structures; ++k) {
    Structure s;
    const double r = 0.55 * std::sqrt(rng.uniform());
    const double t = rng.uniform(0.0, 2 * std::numbers::pi);
    s.cy = head.cy + r * head.ry * std::sin(t);
    s.cx = head.cx + r * head.rx * std::cos(t);
    s.ry = rng.uniform(0.05, 0.14) * side;
    s.rx = rng.uniform(0.05, 0.14) * side;
    s.angle = rng.uniform(0.0, std::numbers::pi);
    s.tissue = 1 + static_cast<std::size_t>(rng.below(kTissueClasses - 1));
    s.latent = std::clamp(kLatent[s.tissue] + rng.uniform(-0.04, 0.04), 0.0, 1.0);
    g.reference.push_back(s);
  }

  g.texture_fy = rng.uniform(1.0, 3.0);
  g.texture_fx = rng.uniform(1.0, 3.0);
  g.texture_phase_y = rng.uniform(0.0, 2 * std::numbers::pi);
  g.texture_phase_x = rng.uniform(0.0, 2 * std::numbers::pi);

  g.target = g.reference;
  g.displaced = spec.num_structures > 1 ? 1 : 0;
  const double dy = rng.uniform(-spec.misalignment_px, spec.misalignment_px);
  const double dx = rng.uniform(-spec.misalignment_px, spec.misalignment_px);
  g.target[g.displaced].cy += dy;
  g.target[g.displaced].cx += dx;
  return g;
}

/// Coverage map of a single structure; used to locate centroids.
inline std::vector<double> structure_mask(const Structure& s, std::size_t h, std::size_t w) {
  std::vector<double> m(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) m[i * w + j] = s.coverage(static_cast<double>(i), static_cast<double>(j));
  return m;
}

namespace detail {

inline ImageGrid render_modality(const PhantomGeometry& g, const std::vector<Structure>& structures,
                                 const ContrastMap& map, double noise_sigma, std::uint64_t noise_seed,
                                 const PhantomSpec& spec, Modality modality) {
  ImageGrid img(spec.height, spec.width, modality);
  Rng noise(noise_seed);
  for (std::size_t i = 0; i < spec.height; ++i) {
    for (std::size_t j = 0; j < spec.width; ++j) {
      const double y = static_cast<double>(i), x = static_cast<double>(j);
      const double tex = g.texture(y, x, spec.height, spec.width);
      double v = 0.0;
      for (const auto& s : structures) {
        const double a = s.coverage(y, x);
        v = (1.0 - a) * v + a * map.apply(s.latent * tex, s.tissue);
      }
      if (noise_sigma > 0) v += noise.normal(0.0, noise_sigma);
      img.at(i, j) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

}  // namespace detail

/// Renders the (reference, target) pair; a pure function of `spec`.
inline std::pair<ImageGrid, ImageGrid> generate_phantom_pair(const PhantomSpec& spec) {
  const auto g = phantom_geometry(spec);
  auto ref = detail::render_modality(g, g.reference, spec.reference_map, spec.noise_sigma_reference,
                                     derive_seed(spec.seed, 2), spec, Modality::reference);
  auto tgt = detail::render_modality(g, g.target, spec.target_map, spec.noise_sigma_target, derive_seed(spec.seed, 3),
                                     spec, Modality::target);
  return {std::move(ref), std::move(tgt)};
}

}  // namespace mcsr
