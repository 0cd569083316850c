#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "mcsr/core/random.hpp"
#include "mcsr/core/tensor.hpp"

namespace mcsr {

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates probed per input; inputs with fewer elements are checked fully.
  std::size_t probes_per_input = 24;
  std::uint64_t seed = 7;
  // Denominator floor: gradients below it are compared absolutely, since
  // central differences carry ~1e-11 of rounding noise there.
  double floor = 1e-3;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `inputs` must require gradients; `fn` rebuilds the graph from
/// them on every call.
inline GradCheckResult grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& fn,
                                  std::vector<Tensor<double>> inputs, GradCheckOptions opts = {}) {
  for (auto& in : inputs) in.zero_grad();
  fn(inputs).backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& in : inputs) {
    analytic.emplace_back(in.grad().begin(), in.grad().end());
    if (analytic.back().size() != in.size()) analytic.back().assign(in.size(), 0.0);
  }

  Rng rng(opts.seed);
  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& values = inputs[k].node()->value;
    std::vector<std::size_t> coords;
    if (values.size() <= opts.probes_per_input) {
      for (std::size_t i = 0; i < values.size(); ++i) coords.push_back(i);
    } else {
      for (std::size_t i = 0; i < opts.probes_per_input; ++i) coords.push_back(rng.below(values.size()));
    }
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + opts.step;
      const double up = fn(inputs).item();
      values[i] = saved - opts.step;
      const double down = fn(inputs).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.probes;
    }
  }
  return result;
}

}  // namespace mcsr
