#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mcsr/core/tensor.hpp"

namespace mcsr {

namespace detail {

template <class T>
using ArrayMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using ConstArrayMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <class T>
ConstArrayMap<T> arr(const std::vector<T>& v) {
  return ConstArrayMap<T>(v.data(), static_cast<Eigen::Index>(v.size()));
}
template <class T>
ArrayMap<T> arr(std::vector<T>& v) {
  return ArrayMap<T>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Fixed-order sum with eight interleaved accumulators. Eigen reductions over
/// mapped std::vector storage peel a prefix that depends on the pointer's
/// alignment, which changes the rounding from one allocation to the next.
template <class T>
T ordered_sum(const T* p, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += p[i + l];
  for (std::size_t l = 0; i < n; ++i, ++l) acc[l] += p[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

/// Fixed-order sum of f(i) for i in [0, n).
template <class T, class F>
T ordered_sum_of(std::size_t n, F f) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += f(i + l);
  for (std::size_t l = 0; i < n; ++i, ++l) acc[l] += f(i);
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.size());
  detail::arr(out) = detail::arr(a.values()) + detail::arr(b.values());
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& self) {
    for (auto* in : {&a, &b}) {
      if (in->requires_grad()) detail::arr(in->node()->ensure_grad()) += detail::arr(self.grad);
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.size());
  detail::arr(out) = detail::arr(a.values()) - detail::arr(b.values());
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& self) {
    if (a.requires_grad()) detail::arr(a.node()->ensure_grad()) += detail::arr(self.grad);
    if (b.requires_grad()) detail::arr(b.node()->ensure_grad()) -= detail::arr(self.grad);
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.size());
  detail::arr(out) = detail::arr(a.values()) * detail::arr(b.values());
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& self) {
    if (a.requires_grad()) {
      detail::arr(a.node()->ensure_grad()) += detail::arr(self.grad) * detail::arr(b.values());
    }
    if (b.requires_grad()) {
      detail::arr(b.node()->ensure_grad()) += detail::arr(self.grad) * detail::arr(a.values());
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  detail::arr(out) = detail::arr(a.values()) * factor;
  return make_result<T>(a.shape(), std::move(out), {a}, [a, factor](detail::Node<T>& self) {
    detail::arr(a.node()->ensure_grad()) += detail::arr(self.grad) * factor;
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return make_result<T>(std::move(shape), a.values(), {a}, [a](detail::Node<T>& self) {
    detail::arr(a.node()->ensure_grad()) += detail::arr(self.grad);
  });
}

/// mish(x) = x * tanh(softplus(x)).
///
/// With e = exp(x) and n = e (e + 2), tanh(log(1 + e)) = n / (n + 2); the
/// exponent is clamped at 20 where the ratio is already 1 to working precision.
template <class T>
Tensor<T> mish(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  auto xa = detail::arr(x.values());
  Eigen::Array<T, Eigen::Dynamic, 1> e = xa.min(T(20)).exp();
  Eigen::Array<T, Eigen::Dynamic, 1> n = e * (e + T(2));
  detail::arr(out) = xa * (n / (n + T(2)));
  return make_result<T>(x.shape(), std::move(out), {x}, [x](detail::Node<T>& self) {
    auto xv = detail::arr(x.values());
    Eigen::Array<T, Eigen::Dynamic, 1> ev = xv.min(T(20)).exp();
    Eigen::Array<T, Eigen::Dynamic, 1> nv = ev * (ev + T(2));
    Eigen::Array<T, Eigen::Dynamic, 1> t = nv / (nv + T(2));
    // 1 - t^2 = (1 - t)(1 + t) with 1 - t = 2 / (n + 2), free of cancellation.
    Eigen::Array<T, Eigen::Dynamic, 1> sech2 = (T(2) / (nv + T(2))) * (T(1) + t);
    Eigen::Array<T, Eigen::Dynamic, 1> sig = ev / (T(1) + ev);
    detail::arr(x.node()->ensure_grad()) += detail::arr(self.grad) * (t + xv * sech2 * sig);
  });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  std::vector<T> out(x.size());
  auto xa = detail::arr(x.values());
  detail::arr(out) = (xa >= T(0)).select(xa, xa * slope);
  return make_result<T>(x.shape(), std::move(out), {x}, [x, slope](detail::Node<T>& self) {
    auto xv = detail::arr(x.values());
    auto g = detail::arr(self.grad);
    detail::arr(x.node()->ensure_grad()) += (xv >= T(0)).select(g, g * slope);
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x.values()[i];
    // Branching keeps exp() from overflowing for large |v|.
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  auto y = out;
  return make_result<T>(x.shape(), std::move(out), {x}, [x, y = std::move(y)](detail::Node<T>& self) {
    auto ya = detail::arr(y);
    detail::arr(x.node()->ensure_grad()) += detail::arr(self.grad) * ya * (T(1) - ya);
  });
}

/// y = x W^T + b for x [N, K], W [M, K], b [M] (b may be empty).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto k = static_cast<Eigen::Index>(x.dim(1));
  const auto m = static_cast<Eigen::Index>(w.dim(0));
  const bool has_bias = b.size() != 0;
  if (has_bias && b.size() != static_cast<std::size_t>(m)) throw ShapeError("linear: bias length");
  std::vector<T> out(static_cast<std::size_t>(n * m));
  detail::MatrixMap<T> y(out.data(), n, m);
  y.noalias() = detail::ConstMatrixMap<T>(x.values().data(), n, k) *
                detail::ConstMatrixMap<T>(w.values().data(), m, k).transpose();
  if (has_bias) {
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.values().data(), m);
  }
  return make_result<T>(
      Shape{x.dim(0), w.dim(0)}, std::move(out), {x, w, b}, [x, w, b, n, k, m, has_bias](detail::Node<T>& self) {
        detail::ConstMatrixMap<T> gy(self.grad.data(), n, m);
        if (x.requires_grad()) {
          detail::MatrixMap<T>(x.node()->ensure_grad().data(), n, k).noalias() +=
              gy * detail::ConstMatrixMap<T>(w.values().data(), m, k);
        }
        if (w.requires_grad()) {
          detail::MatrixMap<T>(w.node()->ensure_grad().data(), m, k).noalias() +=
              gy.transpose() * detail::ConstMatrixMap<T>(x.values().data(), n, k);
        }
        if (has_bias && b.requires_grad()) {
          auto& gb = b.node()->ensure_grad();
          for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < m; ++j) gb[static_cast<std::size_t>(j)] += gy(i, j);
        }
      });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  const T s = detail::ordered_sum(a.values().data(), a.size());
  return make_result<T>(Shape{}, std::vector<T>{s}, {a}, [a](detail::Node<T>& self) {
    detail::arr(a.node()->ensure_grad()) += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

/// Means over consecutive groups of `group` elements: length n -> n / group.
template <class T>
Tensor<T> group_mean(const Tensor<T>& a, std::size_t group) {
  if (group == 0 || a.size() % group != 0) {
    throw ShapeError("group_mean: length " + std::to_string(a.size()) + " not divisible by " +
                     std::to_string(group));
  }
  const std::size_t groups = a.size() / group;
  std::vector<T> out(groups);
  const T inv = T(1) / static_cast<T>(group);
  for (std::size_t g = 0; g < groups; ++g) {
    T s = 0;
    for (std::size_t i = 0; i < group; ++i) s += a.values()[g * group + i];
    out[g] = s * inv;
  }
  return make_result<T>(Shape{groups}, std::move(out), {a}, [a, group, inv](detail::Node<T>& self) {
    auto& ga = a.node()->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i / group] * inv;
  });
}

/// out[i] = a[index[i]] over the flattened tensor; gradients scatter-add back.
template <class T>
Tensor<T> take(const Tensor<T>& a, std::vector<std::size_t> index) {
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.size()) {
      throw ShapeError("take: index " + std::to_string(index[i]) + " out of range for " + shape_str(a.shape()));
    }
    out[i] = a.values()[index[i]];
  }
  const std::size_t n = index.size();
  return make_result<T>(Shape{n}, std::move(out), {a}, [a, index = std::move(index)](detail::Node<T>& self) {
    auto& ga = a.node()->ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i) ga[index[i]] += self.grad[i];
  });
}

/// Mean squared error against a tensor of the same shape.
template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  auto d = sub(a, b);
  return mean(mul(d, d));
}

/// Mean absolute error; the subgradient at zero is taken as zero.
template <class T>
Tensor<T> l1(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "l1");
  const auto count = static_cast<T>(a.size());
  const T* av = a.values().data();
  const T* bv = b.values().data();
  const T total = detail::ordered_sum_of<T>(a.size(), [av, bv](std::size_t i) { return std::abs(av[i] - bv[i]); });
  return make_result<T>(Shape{}, std::vector<T>{total / count}, {a, b}, [a, b, count](detail::Node<T>& self) {
    const T g = self.grad[0] / count;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const T d = a.values()[i] - b.values()[i];
      const T sg = d > T(0) ? g : (d < T(0) ? -g : T(0));
      if (a.requires_grad()) a.node()->ensure_grad()[i] += sg;
      if (b.requires_grad()) b.node()->ensure_grad()[i] -= sg;
    }
  });
}

/// Mean binary cross-entropy of sigmoid(logits) against a constant label.
///
/// Evaluated as softplus(z) - label * z, which equals
/// -[label log p + (1 - label) log(1 - p)] for p = sigmoid(z) without the
/// log(0) hazard of saturated probabilities.
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, T label) {
  const auto count = static_cast<T>(logits.size());
  T total = 0;
  for (T z : logits.values()) {
    const T softplus = std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
    total += softplus - label * z;
  }
  return make_result<T>(Shape{}, std::vector<T>{total / count}, {logits},
                        [logits, label, count](detail::Node<T>& self) {
                          auto& g = logits.node()->ensure_grad();
                          const T scale_g = self.grad[0] / count;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const T z = logits.values()[i];
                            const T p = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                                                  : std::exp(z) / (T(1) + std::exp(z));
                            g[i] += (p - label) * scale_g;
                          }
                        });
}

/// Concatenates two NCHW tensors along channels.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: " + shape_str(a.shape()) + " with " + shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  std::vector<T> out(n * (ca + cb) * plane);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.values().begin() + i * ca * plane, ca * plane, out.begin() + i * (ca + cb) * plane);
    std::copy_n(b.values().begin() + i * cb * plane, cb * plane, out.begin() + (i * (ca + cb) + ca) * plane);
  }
  return make_result<T>(Shape{n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                        [a, b, n, ca, cb, plane](detail::Node<T>& self) {
                          for (std::size_t i = 0; i < n; ++i) {
                            const T* g = self.grad.data() + i * (ca + cb) * plane;
                            if (a.requires_grad()) {
                              T* ga = a.node()->ensure_grad().data() + i * ca * plane;
                              for (std::size_t j = 0; j < ca * plane; ++j) ga[j] += g[j];
                            }
                            if (b.requires_grad()) {
                              T* gb = b.node()->ensure_grad().data() + i * cb * plane;
                              for (std::size_t j = 0; j < cb * plane; ++j) gb[j] += g[ca * plane + j];
                            }
                          }
                        });
}

/// NCHW -> [N, C] spatial mean.
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: expected NCHW, got " + shape_str(x.shape()));
  const std::size_t nc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  const T inv = T(1) / static_cast<T>(plane);
  std::vector<T> out(nc);
  for (std::size_t i = 0; i < nc; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < plane; ++j) s += x.values()[i * plane + j];
    out[i] = s * inv;
  }
  return make_result<T>(Shape{x.dim(0), x.dim(1)}, std::move(out), {x}, [x, plane, inv](detail::Node<T>& self) {
    auto& g = x.node()->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / plane] * inv;
  });
}

}  // namespace mcsr
