#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <vector>

#include "mcsr/core/ops.hpp"
#include "mcsr/core/tensor.hpp"

namespace mcsr {

/// Geometry of a square-kernel convolution over a batch of NCHW planes.
struct ConvGeometry {
  std::size_t batch = 0, channels = 0, height = 0, width = 0;
  std::size_t kernel = 1, stride = 1, pad = 0;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t cols() const { return batch * out_height() * out_width(); }
};

namespace detail {

// Output columns j whose input column j*stride + kj - pad lies in [0, w).
inline std::pair<std::size_t, std::size_t> valid_span(std::size_t ow, std::size_t w, std::size_t kj,
                                                      std::size_t stride, std::size_t pad) {
  const auto lo_num = static_cast<std::ptrdiff_t>(pad) - static_cast<std::ptrdiff_t>(kj);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const std::ptrdiff_t lo = lo_num <= 0 ? 0 : (lo_num + s - 1) / s;
  const auto hi_num = static_cast<std::ptrdiff_t>(w + pad) - static_cast<std::ptrdiff_t>(kj);  // need j*s < hi_num
  const std::ptrdiff_t hi = hi_num <= 0 ? 0 : (hi_num + s - 1) / s;
  const auto clamp = [ow](std::ptrdiff_t v) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(ow)));
  };
  return {clamp(lo), std::max(clamp(lo), clamp(hi))};
}

// cols is [C*k*k, N*OH*OW]: row (c, ki, kj), column (n, oh, ow).
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), ncols = g.cols();
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ncols;
        const auto [j0, j1] = valid_span(ow, g.width, kj, g.stride, g.pad);
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* plane = x + (n * g.channels + c) * g.height * g.width;
          for (std::size_t i = 0; i < oh; ++i) {
            T* out = row + (n * oh + i) * ow;
            const auto yi = static_cast<std::ptrdiff_t>(i * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
            if (yi < 0 || yi >= h) {
              std::fill_n(out, ow, T(0));
              continue;
            }
            std::fill_n(out, j0, T(0));
            std::fill(out + j1, out + ow, T(0));
            const T* src = plane + yi * static_cast<std::ptrdiff_t>(g.width) + static_cast<std::ptrdiff_t>(kj) -
                           static_cast<std::ptrdiff_t>(g.pad);
            if (g.stride == 1) {
              std::copy(src + j0, src + j1, out + j0);
            } else {
              for (std::size_t j = j0; j < j1; ++j) out[j] = src[j * g.stride];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters columns back into (accumulating) planes.
template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), ncols = g.cols();
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ncols;
        const auto [j0, j1] = valid_span(ow, g.width, kj, g.stride, g.pad);
        for (std::size_t n = 0; n < g.batch; ++n) {
          T* plane = x + (n * g.channels + c) * g.height * g.width;
          for (std::size_t i = 0; i < oh; ++i) {
            const auto yi = static_cast<std::ptrdiff_t>(i * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
            if (yi < 0 || yi >= h) continue;
            const T* in = row + (n * oh + i) * ow;
            T* dst = plane + yi * static_cast<std::ptrdiff_t>(g.width) + static_cast<std::ptrdiff_t>(kj) -
                     static_cast<std::ptrdiff_t>(g.pad);
            if (g.stride == 1) {
              for (std::size_t j = j0; j < j1; ++j) dst[j] += in[j];
            } else {
              for (std::size_t j = j0; j < j1; ++j) dst[j * g.stride] += in[j];
            }
          }
        }
      }
    }
  }
}

// [O, N*P] <-> [N, O, P]
template <class T>
void channel_major_to_nchw(const T* src, std::size_t n, std::size_t c, std::size_t p, T* dst) {
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) std::copy_n(src + (ch * n + i) * p, p, dst + (i * c + ch) * p);
}
template <class T>
void nchw_to_channel_major(const T* src, std::size_t n, std::size_t c, std::size_t p, T* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) std::copy_n(src + (i * c + ch) * p, p, dst + (ch * n + i) * p);
}

inline void require_conv_shapes(const Shape& x, const Shape& w, std::size_t w_in_axis, const char* op) {
  if (x.size() != 4 || w.size() != 4 || w[2] != w[3]) {
    throw ShapeError(std::string(op) + ": expected NCHW input and square kernel, got " + shape_str(x) + " and " +
                     shape_str(w));
  }
  if (x[1] != w[w_in_axis]) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x[1]) + " channels, kernel expects " +
                     std::to_string(w[w_in_axis]));
  }
}

}  // namespace detail

// Samples per im2col chunk: enough columns for an efficient GEMM while the
// column buffer stays near cache size.
inline std::size_t conv_chunk(std::size_t batch, std::size_t plane) {
  constexpr std::size_t kTargetColumns = 4096;
  return std::clamp<std::size_t>((kTargetColumns + plane - 1) / plane, 1, batch);
}

/// Cross-correlation (no kernel flip) of x [N,C,H,W] with w [O,C,k,k],
/// zero padding, optional bias [O] (pass an empty tensor for none).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  detail::require_conv_shapes(x.shape(), w.shape(), 1, "conv2d");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(2), stride, pad};
  if (g.kernel > g.height + 2 * pad || g.kernel > g.width + 2 * pad) {
    throw ShapeError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  const std::size_t out_c = w.dim(0), p = g.out_height() * g.out_width();
  const bool has_bias = bias.size() != 0;
  if (has_bias && bias.size() != out_c) throw ShapeError("conv2d: bias length");
  const bool pointwise = g.kernel == 1 && stride == 1 && pad == 0;
  const std::size_t chunk = conv_chunk(g.batch, p);
  const std::size_t in_plane = g.channels * g.height * g.width;
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto oc = static_cast<Eigen::Index>(out_c);

  // Fills `col` with the [rows, m*P] patch matrix of samples [n0, n0+m).
  auto patches = [x, g, p, pointwise, in_plane](std::size_t n0, std::size_t m, std::vector<T>& col) {
    ConvGeometry gc = g;
    gc.batch = m;
    col.resize(gc.rows() * gc.cols());
    const T* src = x.values().data() + n0 * in_plane;
    if (pointwise) {
      detail::nchw_to_channel_major(src, m, g.channels, p, col.data());
    } else {
      detail::im2col(src, gc, col.data());
    }
  };

  std::vector<T> out(g.batch * out_c * p);
  std::vector<T> col;
  detail::RowMatrix<T> y;
  const detail::ConstMatrixMap<T> wm(w.values().data(), oc, rows);
  for (std::size_t n0 = 0; n0 < g.batch; n0 += chunk) {
    const std::size_t m = std::min(chunk, g.batch - n0);
    const auto cols = static_cast<Eigen::Index>(m * p);
    patches(n0, m, col);
    y.noalias() = wm * detail::ConstMatrixMap<T>(col.data(), rows, cols);
    if (has_bias) y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.values().data(), oc);
    detail::channel_major_to_nchw(y.data(), m, out_c, p, out.data() + n0 * out_c * p);
  }

  return make_result<T>(
      Shape{g.batch, out_c, g.out_height(), g.out_width()}, std::move(out), {x, w, bias},
      [x, w, bias, g, out_c, p, has_bias, pointwise, rows, oc, chunk, in_plane, patches](detail::Node<T>& self) {
        const detail::ConstMatrixMap<T> wm(w.values().data(), oc, rows);
        std::vector<T> col;
        detail::RowMatrix<T> gy, gcol;
        for (std::size_t n0 = 0; n0 < g.batch; n0 += chunk) {
          const std::size_t m = std::min(chunk, g.batch - n0);
          const auto cols = static_cast<Eigen::Index>(m * p);
          gy.resize(oc, cols);
          detail::nchw_to_channel_major(self.grad.data() + n0 * out_c * p, m, out_c, p, gy.data());
          if (w.requires_grad()) {
            patches(n0, m, col);
            detail::MatrixMap<T>(w.node()->ensure_grad().data(), oc, rows).noalias() +=
                gy * detail::ConstMatrixMap<T>(col.data(), rows, cols).transpose();
          }
          if (has_bias && bias.requires_grad()) {
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.node()->ensure_grad().data(), oc) +=
                gy.rowwise().sum();
          }
          if (x.requires_grad()) {
            gcol.noalias() = wm.transpose() * gy;
            T* gx = x.node()->ensure_grad().data() + n0 * in_plane;
            if (pointwise) {
              for (std::size_t ch = 0; ch < g.channels; ++ch)
                for (std::size_t i = 0; i < m; ++i) {
                  const T* src = gcol.data() + (ch * m + i) * p;
                  T* dst = gx + (i * g.channels + ch) * p;
                  for (std::size_t j = 0; j < p; ++j) dst[j] += src[j];
                }
            } else {
              ConvGeometry gc = g;
              gc.batch = m;
              detail::col2im(gcol.data(), gc, gx);
            }
          }
        }
      });
}

/// Transposed convolution: x [N,Cin,H,W], w [Cin,Cout,k,k] (the layout of the
/// conv2d kernel it is the input-adjoint of), output extent (H-1)*stride - 2*pad + k.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                           std::size_t pad) {
  detail::require_conv_shapes(x.shape(), w.shape(), 0, "conv_transpose2d");
  if (stride == 0) throw ShapeError("conv_transpose2d: stride must be positive");
  const std::size_t k = w.dim(2);
  if ((x.dim(2) - 1) * stride + k <= 2 * pad || (x.dim(3) - 1) * stride + k <= 2 * pad) {
    throw ShapeError("conv_transpose2d: padding consumes the output");
  }
  const std::size_t in_c = x.dim(1), out_c = w.dim(1);
  const std::size_t oh = (x.dim(2) - 1) * stride + k - 2 * pad;
  const std::size_t ow = (x.dim(3) - 1) * stride + k - 2 * pad;
  // The output plays the role of a conv2d input under geometry g.
  const ConvGeometry g{x.dim(0), out_c, oh, ow, k, stride, pad};
  if (g.out_height() != x.dim(2) || g.out_width() != x.dim(3)) {
    throw ShapeError("conv_transpose2d: inconsistent geometry for " + shape_str(x.shape()));
  }
  const bool has_bias = bias.size() != 0;
  if (has_bias && bias.size() != out_c) throw ShapeError("conv_transpose2d: bias length");
  const std::size_t p = x.dim(2) * x.dim(3);
  const auto rows = static_cast<Eigen::Index>(g.rows()), cols = static_cast<Eigen::Index>(g.cols());
  const auto ic = static_cast<Eigen::Index>(in_c);

  detail::RowMatrix<T> xm(ic, cols);
  detail::nchw_to_channel_major(x.values().data(), g.batch, in_c, p, xm.data());
  detail::RowMatrix<T> col = detail::ConstMatrixMap<T>(w.values().data(), ic, rows).transpose() * xm;
  std::vector<T> out(g.batch * out_c * oh * ow, T(0));
  detail::col2im(col.data(), g, out.data());
  if (has_bias) {
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t c = 0; c < out_c; ++c) {
        T* plane = out.data() + (n * out_c + c) * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) plane[i] += bias.values()[c];
      }
  }

  return make_result<T>(
      Shape{g.batch, out_c, oh, ow}, std::move(out), {x, w, bias},
      [x, w, bias, g, in_c, out_c, p, has_bias, rows, cols, ic](detail::Node<T>& self) {
        detail::RowMatrix<T> gcol(rows, cols);
        detail::im2col(self.grad.data(), g, gcol.data());
        if (x.requires_grad()) {
          detail::RowMatrix<T> gx = detail::ConstMatrixMap<T>(w.values().data(), ic, rows) * gcol;
          std::vector<T> tmp(x.size());
          detail::channel_major_to_nchw(gx.data(), g.batch, in_c, p, tmp.data());
          detail::arr(x.node()->ensure_grad()) += detail::arr(tmp);
        }
        if (w.requires_grad()) {
          detail::RowMatrix<T> xm(ic, cols);
          detail::nchw_to_channel_major(x.values().data(), g.batch, in_c, p, xm.data());
          detail::MatrixMap<T>(w.node()->ensure_grad().data(), ic, rows).noalias() += xm * gcol.transpose();
        }
        if (has_bias && bias.requires_grad()) {
          auto& gb = bias.node()->ensure_grad();
          const std::size_t plane = g.height * g.width;
          for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t c = 0; c < out_c; ++c) {
              const T* gp = self.grad.data() + (n * out_c + c) * plane;
              T s = 0;
              for (std::size_t i = 0; i < plane; ++i) s += gp[i];
              gb[c] += s;
            }
        }
      });
}

/// 2x2 max pooling with stride 2. Ties route the gradient to the first
/// maximal element in row-major order.
template <class T>
Tensor<T> max_pool_2x2(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("max_pool_2x2: expected NCHW, got " + shape_str(x.shape()));
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw ShapeError("max_pool_2x2: odd spatial extent " + shape_str(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), oh = h / 2, ow = w / 2;
  std::vector<T> out(planes * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* in = x.values().data() + pl * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t cand[4] = {2 * i * w + 2 * j, 2 * i * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                     (2 * i + 1) * w + 2 * j + 1};
        std::size_t best = cand[0];
        for (int c = 1; c < 4; ++c)
          if (in[cand[c]] > in[best]) best = cand[c];
        const std::size_t o = (pl * oh + i) * ow + j;
        out[o] = in[best];
        argmax[o] = pl * h * w + best;
      }
  }
  return make_result<T>(Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                        [x, argmax = std::move(argmax)](detail::Node<T>& self) {
                          auto& g = x.node()->ensure_grad();
                          for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
                        });
}

}  // namespace mcsr
