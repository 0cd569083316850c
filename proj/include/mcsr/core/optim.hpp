#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcsr/core/tensor.hpp"

namespace mcsr {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered, named parameter list; the order is the checkpoint order.
template <class T>
using ParamList = std::vector<NamedTensor<T>>;

template <class T>
void zero_grads(ParamList<T>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

template <class T>
std::size_t count_parameters(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

/// Bias-corrected Adam over a flat set of parameter slots.
struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(double lr_, double beta1_, double beta2_, double eps_ = 1e-8)
      : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {}
};

/// One Adam update of `params` (in place) from `grads`; moments are created
/// zero-initialized on first use. Returns the advanced state.
template <class T>
AdamState adam_step(std::vector<std::vector<T>*> params, const std::vector<std::span<const T>>& grads,
                    AdamState state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (state.first_moment.empty()) {
    for (auto* p : params) {
      state.first_moment.emplace_back(p->size(), 0.0);
      state.second_moment.emplace_back(p->size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->size() != grads[k].size() || state.first_moment[k].size() != grads[k].size()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(k));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) - state.lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
  return state;
}

/// Adam over a ParamList; parameters without a gradient buffer see zeros.
template <class T>
class Adam {
 public:
  explicit Adam(AdamState state) : state_(std::move(state)) {}

  void step(ParamList<T>& params) {
    std::vector<std::vector<T>*> values;
    std::vector<std::span<const T>> grads;
    values.reserve(params.size());
    for (auto& p : params) {
      values.push_back(&p.tensor.node()->value);
      grads.push_back(p.tensor.mutable_grad());
    }
    state_ = adam_step<T>(std::move(values), grads, std::move(state_));
  }

  void set_lr(double lr) { state_.lr = lr; }
  const AdamState& state() const { return state_; }

 private:
  AdamState state_;
};

struct LrSchedule {
  enum class Kind { constant, cosine };
  Kind kind = Kind::constant;
  double base_lr = 2e-4;
  std::size_t total_steps = 1;

  /// Half-cosine from base_lr at step 0 to 0 at total_steps, held at 0 after.
  double lr_at(std::size_t step) const {
    if (kind == Kind::constant) return base_lr;
    if (total_steps == 0 || step >= total_steps) return 0.0;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * frac));
  }
};

}  // namespace mcsr
