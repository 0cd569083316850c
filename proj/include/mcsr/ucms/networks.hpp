#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcsr/core.hpp"
#include "mcsr/io/image.hpp"
#include "mcsr/nn/layers.hpp"

namespace mcsr {

struct GeneratorSpec {
  std::array<std::size_t, 4> encoder_channels{32, 64, 128, 256};
  std::size_t bottleneck_channels = 512;
  std::size_t groups = 8;

  std::size_t extent_multiple() const { return std::size_t{1} << encoder_channels.size(); }
};

inline void to_json(nlohmann::json& j, const GeneratorSpec& s) {
  j = {{"encoder_channels", s.encoder_channels}, {"bottleneck_channels", s.bottleneck_channels}, {"groups", s.groups}};
}
inline void from_json(const nlohmann::json& j, GeneratorSpec& s) {
  s.encoder_channels = j.at("encoder_channels").get<std::array<std::size_t, 4>>();
  s.bottleneck_channels = j.at("bottleneck_channels").get<std::size_t>();
  s.groups = j.at("groups").get<std::size_t>();
}

struct DiscriminatorSpec {
  std::array<std::size_t, 4> channels{64, 128, 256, 512};
  double slope = 0.2;

  static constexpr std::size_t kMinExtent = 16;
};

inline void to_json(nlohmann::json& j, const DiscriminatorSpec& s) {
  j = {{"channels", s.channels}, {"slope", s.slope}};
}
inline void from_json(const nlohmann::json& j, DiscriminatorSpec& s) {
  s.channels = j.at("channels").get<std::array<std::size_t, 4>>();
  s.slope = j.at("slope").get<double>();
}

/// Residual U-Net: four encoder ResidualBlocks separated by 2x2 max pooling,
/// a bottleneck block, transposed-conv upsampling with concatenated skips,
/// and a 1x1 conv + sigmoid head.
template <class T>
class Generator {
 public:
  Generator() = default;

  Generator(const GeneratorSpec& spec, Rng& rng) : spec_(spec) {
    std::size_t in = 1;
    for (std::size_t c : spec.encoder_channels) {
      encoder_.push_back(nn::ResidualBlock<T>::make(in, c, spec.groups, rng));
      in = c;
    }
    bottleneck_ = nn::ResidualBlock<T>::make(in, spec.bottleneck_channels, spec.groups, rng);
    in = spec.bottleneck_channels;
    for (std::size_t k = spec.encoder_channels.size(); k-- > 0;) {
      const std::size_t c = spec.encoder_channels[k];
      up_.push_back(nn::ConvTranspose2d<T>::make(in, c, 2, 2, rng));
      decoder_.push_back(nn::ResidualBlock<T>::make(2 * c, c, spec.groups, rng));
      in = c;
    }
    head_ = nn::Conv2d<T>::make(in, 1, 1, 1, 0, true, rng);
  }

  const GeneratorSpec& spec() const { return spec_; }

  void check_extent(std::size_t h, std::size_t w) const {
    const std::size_t m = spec_.extent_multiple();
    if (h == 0 || w == 0 || h % m != 0 || w % m != 0) {
      throw std::invalid_argument("generator: extents " + std::to_string(h) + "x" + std::to_string(w) +
                                  " must be positive multiples of " + std::to_string(m));
    }
  }

  /// x: [N,1,H,W] in [0,1] -> [N,1,H,W] in (0,1). When `trace` is given it
  /// receives the shape of each encoder feature map and of the bottleneck.
  Tensor<T> forward(const Tensor<T>& x, std::vector<Shape>* trace = nullptr) const {
    if (x.rank() != 4 || x.dim(1) != 1) throw ShapeError("generator: expected [N,1,H,W], got " + shape_str(x.shape()));
    check_extent(x.dim(2), x.dim(3));
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (const auto& block : encoder_) {
      h = block(h);
      if (trace) trace->push_back(h.shape());
      skips.push_back(h);
      h = max_pool_2x2(h);
    }
    h = bottleneck_(h);
    if (trace) trace->push_back(h.shape());
    for (std::size_t k = 0; k < decoder_.size(); ++k) {
      h = up_[k](h);
      h = decoder_[k](concat_channels(h, skips[skips.size() - 1 - k]));
    }
    return sigmoid(head_(h));
  }

  ImageGrid forward(const ImageGrid& img) const {
    NoGradGuard no_grad;
    Tensor<T> x({1, 1, img.height, img.width}, std::vector<T>(img.pixels.begin(), img.pixels.end()));
    const auto y = forward(x);
    ImageGrid out(img.height, img.width, Modality::synthesized, img.subject_id);
    std::transform(y.values().begin(), y.values().end(), out.pixels.begin(),
                   [](T v) { return static_cast<float>(v); });
    return out;
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    for (std::size_t k = 0; k < encoder_.size(); ++k) encoder_[k].collect("enc" + std::to_string(k) + ".", out);
    bottleneck_.collect("bottleneck.", out);
    for (std::size_t k = 0; k < decoder_.size(); ++k) {
      up_[k].collect("up" + std::to_string(k) + ".", out);
      decoder_[k].collect("dec" + std::to_string(k) + ".", out);
    }
    head_.collect("head.", out);
    return out;
  }

 private:
  GeneratorSpec spec_;
  std::vector<nn::ResidualBlock<T>> encoder_;
  nn::ResidualBlock<T> bottleneck_;
  std::vector<nn::ConvTranspose2d<T>> up_;
  std::vector<nn::ResidualBlock<T>> decoder_;
  nn::Conv2d<T> head_;
};

/// Four 4x4/stride-2 convs (batch norm on layers 2-4, LeakyReLU after each),
/// global average pooling, dense -> one logit per image.
template <class T>
class Discriminator {
 public:
  Discriminator() = default;

  Discriminator(const DiscriminatorSpec& spec, Rng& rng) : spec_(spec) {
    std::size_t in = 1;
    for (std::size_t k = 0; k < spec.channels.size(); ++k) {
      const std::size_t c = spec.channels[k];
      convs_.push_back(nn::Conv2d<T>::make(in, c, 4, 2, 1, k == 0, rng));  // BN supplies the shift
      if (k > 0) {
        gammas_.push_back(constant_param<T>({c}, T(1)));
        betas_.push_back(constant_param<T>({c}, T(0)));
        stats_.emplace_back(c);
      }
      in = c;
    }
    dense_ = nn::Dense<T>::make(in, 1, rng);
  }

  const DiscriminatorSpec& spec() const { return spec_; }

  /// One logit per image, shape [N]. Training mode normalizes with batch
  /// statistics and updates the running estimates.
  Tensor<T> logits(const Tensor<T>& x, bool training) {
    if (x.rank() != 4 || x.dim(1) != 1) {
      throw ShapeError("discriminator: expected [N,1,H,W], got " + shape_str(x.shape()));
    }
    if (x.dim(2) < DiscriminatorSpec::kMinExtent || x.dim(3) < DiscriminatorSpec::kMinExtent) {
      throw std::invalid_argument("discriminator: extents must be at least 16");
    }
    Tensor<T> h = x;
    for (std::size_t k = 0; k < convs_.size(); ++k) {
      h = convs_[k](h);
      if (k > 0) h = batch_norm(h, gammas_[k - 1], betas_[k - 1], stats_[k - 1], training);
      h = leaky_relu(h, static_cast<T>(spec_.slope));
    }
    return reshape(dense_(global_avg_pool(h)), {x.dim(0)});
  }

  /// Eval-mode probability per image.
  Tensor<T> probability(const Tensor<T>& x) { return sigmoid(logits(x, false)); }

  ParamList<T> parameters() const {
    ParamList<T> out;
    for (std::size_t k = 0; k < convs_.size(); ++k) {
      const std::string p = "conv" + std::to_string(k) + ".";
      convs_[k].collect(p, out);
      if (k > 0) {
        out.push_back({p + "bn.gamma", gammas_[k - 1]});
        out.push_back({p + "bn.beta", betas_[k - 1]});
      }
    }
    dense_.collect("dense.", out);
    return out;
  }

  std::vector<BatchNormStats<T>>& running_stats() { return stats_; }
  const std::vector<BatchNormStats<T>>& running_stats() const { return stats_; }

 private:
  DiscriminatorSpec spec_;
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<Tensor<T>> gammas_, betas_;
  std::vector<BatchNormStats<T>> stats_;
  nn::Dense<T> dense_;
};

}  // namespace mcsr
