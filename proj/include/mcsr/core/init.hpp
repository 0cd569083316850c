#pragma once

#include <cmath>
#include <cstddef>

#include "mcsr/core/random.hpp"
#include "mcsr/core/tensor.hpp"

namespace mcsr {

/// Weight tensor drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <class T>
Tensor<T> constant_param(Shape shape, T value) {
  return Tensor<T>::full(std::move(shape), value, true);
}

}  // namespace mcsr
