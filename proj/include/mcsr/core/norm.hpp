#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "mcsr/core/ops.hpp"
#include "mcsr/core/tensor.hpp"

namespace mcsr {

inline constexpr double kNormEps = 1e-5;

namespace detail {

// Normalizes `count` elements reachable through `index(j)`; writes xhat and
// returns 1/sigma.
template <class T, class Index>
T normalize_slice(const std::vector<T>& x, std::size_t count, Index index, T eps, std::vector<T>& xhat) {
  T mu = 0;
  for (std::size_t j = 0; j < count; ++j) mu += x[index(j)];
  mu /= static_cast<T>(count);
  T var = 0;
  for (std::size_t j = 0; j < count; ++j) {
    const T d = x[index(j)] - mu;
    var += d * d;
  }
  var /= static_cast<T>(count);
  const T inv_std = T(1) / std::sqrt(var + eps);
  for (std::size_t j = 0; j < count; ++j) xhat[index(j)] = (x[index(j)] - mu) * inv_std;
  return inv_std;
}

// dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)) over one slice.
template <class T, class Index, class Gain>
void normalize_slice_backward(const std::vector<T>& gy, const std::vector<T>& xhat, std::size_t count, Index index,
                              Gain gain, T inv_std, std::vector<T>& gx) {
  T mean_d = 0, mean_dx = 0;
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t i = index(j);
    const T d = gy[i] * gain(j);
    mean_d += d;
    mean_dx += d * xhat[i];
  }
  mean_d /= static_cast<T>(count);
  mean_dx /= static_cast<T>(count);
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t i = index(j);
    gx[i] += inv_std * (gy[i] * gain(j) - mean_d - xhat[i] * mean_dx);
  }
}

}  // namespace detail

/// Group normalization of x [N,C,H,W] over (C/groups channels x H x W) per
/// sample, followed by a per-channel affine map.
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(kNormEps)) {
  if (x.rank() != 4) throw ShapeError("group_norm: expected NCHW, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible by " + std::to_string(groups) +
                     " groups");
  }
  if (gamma.size() != c || beta.size() != c) throw ShapeError("group_norm: affine parameters must have C entries");
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  using Seg = Eigen::Map<const Arr>;
  const std::size_t cpg = c / groups, count = cpg * plane;
  const auto cnt = static_cast<Eigen::Index>(count), pl = static_cast<Eigen::Index>(plane);
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(n * groups);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = (i * c + gi * cpg) * plane;
      Seg xs(x.values().data() + base, cnt);
      const T* xp = x.values().data() + base;
      const T mu = detail::ordered_sum(xp, count) / static_cast<T>(count);
      const T var = detail::ordered_sum_of<T>(count, [xp, mu](std::size_t j) { return (xp[j] - mu) * (xp[j] - mu); }) /
                    static_cast<T>(count);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[i * groups + gi] = is;
      Eigen::Map<Arr>(xhat.data() + base, cnt) = (xs - mu) * is;
      for (std::size_t k = 0; k < cpg; ++k) {
        const std::size_t ch = gi * cpg + k, off = base + k * plane;
        Eigen::Map<Arr>(out.data() + off, pl) =
            Seg(xhat.data() + off, pl) * gamma.values()[ch] + beta.values()[ch];
      }
    }
  return make_result<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, n, c, plane, groups, cpg, count, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::Node<T>& self) {
        const auto pl = static_cast<Eigen::Index>(plane);
        const auto& gy = self.grad;
        if (gamma.requires_grad() || beta.requires_grad()) {
          auto& gg = gamma.node()->ensure_grad();
          auto& gb = beta.node()->ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t base = (i * c + ch) * plane;
              const T* g = gy.data() + base;
              const T* xh = xhat.data() + base;
              gg[ch] += detail::ordered_sum_of<T>(plane, [g, xh](std::size_t j) { return g[j] * xh[j]; });
              gb[ch] += detail::ordered_sum(g, plane);
            }
        }
        if (!x.requires_grad()) return;
        // dx = inv_std * (d - mean(d) - xhat * mean(d * xhat)), d = gamma * dy, per group.
        auto& gx = x.node()->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t gi = 0; gi < groups; ++gi) {
            T sum_d = 0, sum_dx = 0;
            for (std::size_t k = 0; k < cpg; ++k) {
              const std::size_t off = (i * c + gi * cpg + k) * plane;
              const T gm = gamma.values()[gi * cpg + k];
              const T* g = gy.data() + off;
              const T* xh = xhat.data() + off;
              sum_d += gm * detail::ordered_sum(g, plane);
              sum_dx += gm * detail::ordered_sum_of<T>(plane, [g, xh](std::size_t j) { return g[j] * xh[j]; });
            }
            const T mean_d = sum_d / static_cast<T>(count), mean_dx = sum_dx / static_cast<T>(count);
            const T is = inv_std[i * groups + gi];
            for (std::size_t k = 0; k < cpg; ++k) {
              const std::size_t off = (i * c + gi * cpg + k) * plane;
              const T gm = gamma.values()[gi * cpg + k];
              Eigen::Map<Arr>(gx.data() + off, pl) +=
                  is * (Seg(gy.data() + off, pl) * gm - mean_d - Seg(xhat.data() + off, pl) * mean_dx);
            }
          }
      });
}

/// Running statistics for batch normalization (buffers, not parameters).
template <class T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;
  T momentum = T(0.1);

  explicit BatchNormStats(std::size_t channels = 0) : mean(channels, T(0)), var(channels, T(1)) {}
};

/// Batch normalization of x [N,C,H,W] per channel. Training mode uses batch
/// statistics (biased variance) and folds them into `stats` with the
/// unbiased variance; eval mode uses the running statistics.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                     bool training, T eps = T(kNormEps)) {
  if (x.rank() != 4) throw ShapeError("batch_norm: expected NCHW, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.size() != c || beta.size() != c || stats.mean.size() != c) {
    throw ShapeError("batch_norm: parameters must have C entries");
  }
  if (training && n < 2) throw ShapeError("batch_norm: training mode needs a batch of at least 2");
  const std::size_t count = n * plane;
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    auto index = [ch, c, plane](std::size_t j) { return ((j / plane) * c + ch) * plane + j % plane; };
    if (training) {
      inv_std[ch] = detail::normalize_slice(x.values(), count, index, eps, xhat);
      T mu = 0;
      for (std::size_t j = 0; j < count; ++j) mu += x.values()[index(j)];
      mu /= static_cast<T>(count);
      T ss = 0;
      for (std::size_t j = 0; j < count; ++j) {
        const T d = x.values()[index(j)] - mu;
        ss += d * d;
      }
      const T unbiased = ss / static_cast<T>(count - 1);
      stats.mean[ch] = (T(1) - stats.momentum) * stats.mean[ch] + stats.momentum * mu;
      stats.var[ch] = (T(1) - stats.momentum) * stats.var[ch] + stats.momentum * unbiased;
    } else {
      inv_std[ch] = T(1) / std::sqrt(stats.var[ch] + eps);
      for (std::size_t j = 0; j < count; ++j) xhat[index(j)] = (x.values()[index(j)] - stats.mean[ch]) * inv_std[ch];
    }
  }
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t ch = (i / plane) % c;
    out[i] = gamma.values()[ch] * xhat[i] + beta.values()[ch];
  }
  return make_result<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, c, plane, count, training, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::Node<T>& self) {
        const auto& gy = self.grad;
        if (gamma.requires_grad() || beta.requires_grad()) {
          auto& gg = gamma.node()->ensure_grad();
          auto& gb = beta.node()->ensure_grad();
          for (std::size_t i = 0; i < gy.size(); ++i) {
            const std::size_t ch = (i / plane) % c;
            gg[ch] += gy[i] * xhat[i];
            gb[ch] += gy[i];
          }
        }
        if (!x.requires_grad()) return;
        auto& gx = x.node()->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch) {
          auto index = [ch, c, plane](std::size_t j) { return ((j / plane) * c + ch) * plane + j % plane; };
          const T g = gamma.values()[ch];
          if (training) {
            detail::normalize_slice_backward(gy, xhat, count, index, [g](std::size_t) { return g; }, inv_std[ch], gx);
          } else {
            for (std::size_t j = 0; j < count; ++j) gx[index(j)] += gy[index(j)] * g * inv_std[ch];
          }
        }
      });
}

}  // namespace mcsr
