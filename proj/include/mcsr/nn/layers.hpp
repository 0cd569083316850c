#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "mcsr/core.hpp"

namespace mcsr::nn {

template <class T>
struct Conv2d {
  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;    // [out] or empty
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv2d make(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad,
                     bool with_bias, Rng& rng) {
    Conv2d c;
    c.weight = fan_in_uniform<T>({out, in, k, k}, in * k * k, rng);
    if (with_bias) c.bias = constant_param<T>({out}, T(0));
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + "weight", weight});
    if (bias.size()) out.push_back({prefix + "bias", bias});
  }
};

template <class T>
struct ConvTranspose2d {
  Tensor<T> weight;  // [in, out, k, k]
  Tensor<T> bias;
  std::size_t stride = 2;
  std::size_t pad = 0;

  // Each output pixel receives in * (k / stride)^2 contributions.
  static ConvTranspose2d make(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, Rng& rng) {
    ConvTranspose2d c;
    const std::size_t taps = std::max<std::size_t>(1, (k / stride) * (k / stride));
    c.weight = fan_in_uniform<T>({in, out, k, k}, in * taps, rng);
    c.bias = constant_param<T>({out}, T(0));
    c.stride = stride;
    return c;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv_transpose2d(x, weight, bias, stride, pad); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + "weight", weight});
    out.push_back({prefix + "bias", bias});
  }
};

template <class T>
struct GroupNorm {
  Tensor<T> gamma, beta;
  std::size_t groups = 8;

  static GroupNorm make(std::size_t channels, std::size_t groups) {
    return {constant_param<T>({channels}, T(1)), constant_param<T>({channels}, T(0)), groups};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return group_norm(x, groups, gamma, beta); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + "gamma", gamma});
    out.push_back({prefix + "beta", beta});
  }
};

template <class T>
struct Dense {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  static Dense make(std::size_t in, std::size_t out, Rng& rng) {
    return {fan_in_uniform<T>({out, in}, in, rng), constant_param<T>({out}, T(0))};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + "weight", weight});
    out.push_back({prefix + "bias", bias});
  }
};

/// 3x3 conv -> group norm -> mish.
template <class T>
struct ConvBlock {
  Conv2d<T> conv;
  GroupNorm<T> norm;

  static ConvBlock make(std::size_t in, std::size_t out, std::size_t groups, Rng& rng) {
    return {Conv2d<T>::make(in, out, 3, 1, 1, true, rng), GroupNorm<T>::make(out, groups)};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return mish(norm(conv(x))); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    conv.collect(prefix + "conv.", out);
    norm.collect(prefix + "norm.", out);
  }
};

/// Two ConvBlocks with an additive shortcut; a 1x1 projection aligns the
/// shortcut when the channel count changes.
template <class T>
struct ResidualBlock {
  ConvBlock<T> first, second;
  std::optional<Conv2d<T>> projection;

  static ResidualBlock make(std::size_t in, std::size_t out, std::size_t groups, Rng& rng) {
    ResidualBlock r{ConvBlock<T>::make(in, out, groups, rng), ConvBlock<T>::make(out, out, groups, rng), {}};
    if (in != out) r.projection = Conv2d<T>::make(in, out, 1, 1, 0, true, rng);
    return r;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto h = second(first(x));
    return add(h, projection ? (*projection)(x) : x);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    first.collect(prefix + "block1.", out);
    second.collect(prefix + "block2.", out);
    if (projection) projection->collect(prefix + "shortcut.", out);
  }
};

}  // namespace mcsr::nn
