#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcsr/core.hpp"
#include "mcsr/io/checkpoint.hpp"
#include "mcsr/nn/layers.hpp"

namespace mcsr {

/// A continuous coordinate in [-1,1]^2; x runs along columns, y along rows.
struct Coord {
  double x = 0;
  double y = 0;
};

/// Pixel (i, j) of an H x W grid sits at x = -1 + (2j+1)/W, y = -1 + (2i+1)/H.
inline Coord pixel_center(std::size_t i, std::size_t j, std::size_t h, std::size_t w) {
  return {-1.0 + (2.0 * static_cast<double>(j) + 1.0) / static_cast<double>(w),
          -1.0 + (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(h)};
}

/// Row-major pixel-center coordinates of an H x W grid.
inline std::vector<Coord> grid_for(std::size_t h, std::size_t w) {
  std::vector<Coord> out;
  out.reserve(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) out.push_back(pixel_center(i, j, h, w));
  return out;
}

/// v = [cos(2 pi B x), sin(2 pi B x)] with B drawn once from N(mu, sigma^2).
/// Entries are rounded to f32 so checkpoints hold B exactly.
struct FourierEncoder {
  std::size_t features = 0;
  std::vector<double> b;  // [features, 2] row-major

  static FourierEncoder sample(std::size_t features, double mu, double sigma, Rng& rng) {
    FourierEncoder e;
    e.features = features;
    e.b.resize(features * 2);
    for (auto& v : e.b) v = static_cast<float>(rng.normal(mu, sigma));
    return e;
  }

  std::size_t dim() const { return 2 * features; }

  /// [n, 2F]: the first F columns are cosines, the last F sines.
  template <class T>
  Tensor<T> encode(const std::vector<Coord>& coords) const {
    const std::size_t f = features;
    std::vector<T> out(coords.size() * 2 * f);
    for (std::size_t n = 0; n < coords.size(); ++n) {
      T* row = out.data() + n * 2 * f;
      for (std::size_t k = 0; k < f; ++k) {
        const double phase = 2.0 * std::numbers::pi * (b[2 * k] * coords[n].x + b[2 * k + 1] * coords[n].y);
        row[k] = static_cast<T>(std::cos(phase));
        row[f + k] = static_cast<T>(std::sin(phase));
      }
    }
    return Tensor<T>({coords.size(), 2 * f}, std::move(out));
  }
};

struct InrSpec {
  std::size_t fourier_features = 128;
  double b_mu = 0.0;
  double b_sigma = 10.0;
  std::size_t hidden = 256;
  std::size_t layers = 8;  // weight layers, including the scalar head
};

inline void to_json(nlohmann::json& j, const InrSpec& s) {
  j = {{"fourier_features", s.fourier_features},
       {"b_mu", s.b_mu},
       {"b_sigma", s.b_sigma},
       {"hidden", s.hidden},
       {"layers", s.layers}};
}
inline void from_json(const nlohmann::json& j, InrSpec& s) {
  const InrSpec d;
  s.fourier_features = j.value("fourier_features", d.fourier_features);
  s.b_mu = j.value("b_mu", d.b_mu);
  s.b_sigma = j.value("b_sigma", d.b_sigma);
  s.hidden = j.value("hidden", d.hidden);
  s.layers = j.value("layers", d.layers);
}

/// Fourier features followed by `layers` dense layers: mish after every
/// layer except the linear scalar head.
template <class T>
class InrModel {
 public:
  InrModel() = default;

  /// B and the MLP weights are drawn from independent streams of `seed`.
  InrModel(const InrSpec& spec, std::uint64_t seed) : spec_(spec) {
    if (spec.layers < 2 || spec.fourier_features == 0 || spec.hidden == 0) {
      throw std::invalid_argument("inr: need at least two layers and non-empty widths");
    }
    Rng b_rng(derive_seed(seed, 0)), w_rng(derive_seed(seed, 1));
    encoder_ = FourierEncoder::sample(spec.fourier_features, spec.b_mu, spec.b_sigma, b_rng);
    std::size_t in = encoder_.dim();
    for (std::size_t k = 0; k + 1 < spec.layers; ++k) {
      mlp_.push_back(nn::Dense<T>::make(in, spec.hidden, w_rng));
      in = spec.hidden;
    }
    mlp_.push_back(nn::Dense<T>::make(in, 1, w_rng));
  }

  const InrSpec& spec() const { return spec_; }
  const FourierEncoder& encoder() const { return encoder_; }
  FourierEncoder& encoder() { return encoder_; }

  /// encoded: [n, 2F] -> [n].
  Tensor<T> forward_encoded(const Tensor<T>& encoded) const {
    Tensor<T> h = encoded;
    for (std::size_t k = 0; k + 1 < mlp_.size(); ++k) h = mish(mlp_[k](h));
    return reshape(mlp_.back()(h), {encoded.dim(0)});
  }

  Tensor<T> forward(const std::vector<Coord>& coords) const {
    return forward_encoded(encoder_.template encode<T>(coords));
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    for (std::size_t k = 0; k < mlp_.size(); ++k) mlp_[k].collect("mlp." + std::to_string(k) + ".", out);
    return out;
  }

 private:
  InrSpec spec_;
  FourierEncoder encoder_;
  std::vector<nn::Dense<T>> mlp_;
};

/// Field values on the H x W pixel-center grid, evaluated in chunks without
/// recording a graph.
template <class T>
std::vector<T> evaluate_grid(const InrModel<T>& model, std::size_t h, std::size_t w) {
  NoGradGuard no_grad;
  const auto coords = grid_for(h, w);
  std::vector<T> out;
  out.reserve(coords.size());
  constexpr std::size_t kChunk = 8192;
  for (std::size_t begin = 0; begin < coords.size(); begin += kChunk) {
    const std::vector<Coord> part(coords.begin() + static_cast<std::ptrdiff_t>(begin),
                                  coords.begin() + static_cast<std::ptrdiff_t>(std::min(coords.size(), begin + kChunk)));
    const auto y = model.forward(part);
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  return out;
}

/// Renders the field on an H x W grid; `clamp` limits output to [0,1].
template <class T>
ImageGrid render(const InrModel<T>& model, std::size_t h, std::size_t w, bool clamp = true) {
  if (h == 0 || w == 0) throw std::invalid_argument("render: extents must be positive");
  const auto values = evaluate_grid(model, h, w);
  ImageGrid img(h, w, Modality::output);
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double v = static_cast<double>(values[k]);
    img.pixels[k] = static_cast<float>(clamp ? std::clamp(v, 0.0, 1.0) : v);
  }
  return img;
}

template <class T>
void save_inr(const InrModel<T>& model, const nlohmann::json& config, const std::filesystem::path& dir) {
  Checkpoint ck;
  ck.config = config;
  ck.config["inr"] = model.spec();
  const auto& b = model.encoder().b;
  ck.put("encoder.B", {model.encoder().features, 2}, std::vector<float>(b.begin(), b.end()));
  ck.put_all("", model.parameters());
  save_checkpoint(ck, dir);
}

template <class T>
InrModel<T> load_inr(const std::filesystem::path& dir, nlohmann::json* config_out = nullptr) {
  const auto ck = load_checkpoint(dir);
  InrModel<T> model(ck.config.at("inr").get<InrSpec>(), 0);
  const auto& [shape, b] = ck.get("encoder.B");
  if (shape != Shape{model.encoder().features, 2}) throw IoError("checkpoint: encoder.B has the wrong shape");
  model.encoder().b.assign(b.begin(), b.end());
  auto params = model.parameters();
  ck.load_all("", params);
  if (config_out) *config_out = ck.config;
  return model;
}

}  // namespace mcsr
