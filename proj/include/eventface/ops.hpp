#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "eventface/tensor.hpp"

// Differentiable primitives. Every op records a node on the tape when one of
// its inputs requires grad; backward closures only touch inputs that do.
namespace eventface::ops {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto& xs = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xs[i]);
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), name, {x}, [xi, deriv](const TensorImpl& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      xi->accumulate(i, o.grad[i] * deriv(xi->data[i], o.data[i]));
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), "add", {a, b}, [ai, bi](const TensorImpl& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (ai->requires_grad) ai->accumulate(i, o.grad[i]);
      if (bi->requires_grad) bi->accumulate(i, o.grad[i]);
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [ai, bi](const TensorImpl& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (ai->requires_grad) ai->accumulate(i, o.grad[i]);
      if (bi->requires_grad) bi->accumulate(i, -o.grad[i]);
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [ai, bi](const TensorImpl& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (ai->requires_grad) ai->accumulate(i, o.grad[i] * bi->data[i]);
      if (bi->requires_grad) bi->accumulate(i, o.grad[i] * ai->data[i]);
    }
  });
}

inline Tensor scale(const Tensor& x, double factor) {
  return detail::unary(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// max(x, 0)^2
inline Tensor relu_squared(const Tensor& x) {
  return detail::unary(
      x, "relu_squared", [](double v) { return v > 0.0 ? v * v : 0.0; },
      [](double v, double) { return v > 0.0 ? 2.0 * v : 0.0; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

// Adds a [C] vector to every token of a [..., C] tensor.
inline Tensor add_last_axis(const Tensor& x, const Tensor& bias) {
  detail::require_rank(bias, 1, "add_last_axis", "bias");
  const std::size_t c = bias.dim(0);
  if (x.rank() == 0 || x.shape().back() != c)
    throw DimensionError("add_last_axis: last axis of " + shape_str(x.shape()) + " is not " + std::to_string(c));
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % c];
  auto xi = x.impl(), bi = bias.impl();
  return make_result(x.shape(), std::move(out), "add_last_axis", {x, bias}, [xi, bi, c](const TensorImpl& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (xi->requires_grad) xi->accumulate(i, o.grad[i]);
      if (bi->requires_grad) bi->accumulate(i % c, o.grad[i]);
    }
  });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto xi = x.impl();
  return make_result({}, {s}, "sum", {x}, [xi](const TensorImpl& o) {
    for (std::size_t i = 0; i < xi->data.size(); ++i) xi->accumulate(i, o.grad[0]);
  });
}

inline Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto xi = x.impl();
  return make_result(std::move(shape), x.values(), "reshape", {x}, [xi](const TensorImpl& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) xi->accumulate(i, o.grad[i]);
  });
}

// Generic axis permutation: out.shape[k] = x.shape[axes[k]].
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw DimensionError("permute: axes do not match rank of " + shape_str(x.shape()));
  Shape out_shape(r);
  for (std::size_t k = 0; k < r; ++k) out_shape[k] = x.dim(axes[k]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t k = r; k-- > 1;) in_strides[k - 1] = in_strides[k] * x.dim(k);
  // source offset for each destination element
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < r; ++k) off += idx[k] * in_strides[axes[k]];
    src[flat] = off;
    for (std::size_t k = r; k-- > 0;) {
      if (++idx[k] < out_shape[k]) break;
      idx[k] = 0;
    }
  }
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[src[i]];
  auto xi = x.impl();
  return make_result(std::move(out_shape), std::move(out), "permute", {x},
                     [xi, src = std::move(src)](const TensorImpl& o) {
                       for (std::size_t i = 0; i < o.grad.size(); ++i) xi->accumulate(src[i], o.grad[i]);
                     });
}

inline Tensor concat_last_axis(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() != b.rank())
    throw DimensionError("concat_last_axis: ranks of " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  for (std::size_t k = 0; k + 1 < a.rank(); ++k)
    if (a.dim(k) != b.dim(k))
      throw DimensionError("concat_last_axis: axis " + std::to_string(k) + " differs (" + std::to_string(a.dim(k)) +
                           " vs " + std::to_string(b.dim(k)) + ")");
  const std::size_t ca = a.shape().back(), cb = b.shape().back(), rows = a.numel() / std::max<std::size_t>(ca, 1);
  Shape shape = a.shape();
  shape.back() = ca + cb;
  std::vector<double> out(rows * (ca + cb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.values().begin() + r * ca, ca, out.begin() + r * (ca + cb));
    std::copy_n(b.values().begin() + r * cb, cb, out.begin() + r * (ca + cb) + ca);
  }
  auto ai = a.impl(), bi = b.impl();
  return make_result(std::move(shape), std::move(out), "concat_last_axis", {a, b},
                     [ai, bi, ca, cb, rows](const TensorImpl& o) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t c = 0; c < ca; ++c)
                           if (ai->requires_grad) ai->accumulate(r * ca + c, o.grad[r * (ca + cb) + c]);
                         for (std::size_t c = 0; c < cb; ++c)
                           if (bi->requires_grad) bi->accumulate(r * cb + c, o.grad[r * (ca + cb) + ca + c]);
                       }
                     });
}

inline Tensor slice_last_axis(const Tensor& x, std::size_t begin, std::size_t count) {
  if (x.rank() == 0 || begin + count > x.shape().back())
    throw DimensionError("slice_last_axis: [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                         ") out of range for " + shape_str(x.shape()));
  const std::size_t c = x.shape().back(), rows = x.numel() / std::max<std::size_t>(c, 1);
  Shape shape = x.shape();
  shape.back() = count;
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.values().begin() + r * c + begin, count, out.begin() + r * count);
  auto xi = x.impl();
  return make_result(std::move(shape), std::move(out), "slice_last_axis", {x},
                     [xi, c, rows, begin, count](const TensorImpl& o) {
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t k = 0; k < count; ++k) xi->accumulate(r * c + begin + k, o.grad[r * count + k]);
                     });
}

inline std::vector<Tensor> split_last_axis(const Tensor& x, const std::vector<std::size_t>& sizes) {
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  if (x.rank() == 0 || total != x.shape().back())
    throw DimensionError("split_last_axis: sizes do not sum to last axis of " + shape_str(x.shape()));
  std::vector<Tensor> parts;
  std::size_t begin = 0;
  for (auto s : sizes) {
    parts.push_back(slice_last_axis(x, begin, s));
    begin += s;
  }
  return parts;
}

// Row views treat a tensor as [shape[0], rest...].
namespace detail {
inline std::size_t row_width(const Tensor& x) { return x.rank() == 0 ? 1 : x.numel() / std::max<std::size_t>(x.dim(0), 1); }
}  // namespace detail

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() != b.rank() || !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1))
    throw DimensionError("concat_rows: trailing axes of " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<double> out(a.values());
  out.insert(out.end(), b.values().begin(), b.values().end());
  auto ai = a.impl(), bi = b.impl();
  const std::size_t na = a.numel();
  return make_result(std::move(shape), std::move(out), "concat_rows", {a, b}, [ai, bi, na](const TensorImpl& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (i < na) {
        if (ai->requires_grad) ai->accumulate(i, o.grad[i]);
      } else if (bi->requires_grad) {
        bi->accumulate(i - na, o.grad[i]);
      }
    }
  });
}

inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  if (x.rank() == 0 || begin + count > x.dim(0))
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                         ") out of range for " + shape_str(x.shape()));
  const std::size_t w = detail::row_width(x);
  Shape shape = x.shape();
  shape[0] = count;
  std::vector<double> out(x.values().begin() + begin * w, x.values().begin() + (begin + count) * w);
  auto xi = x.impl();
  return make_result(std::move(shape), std::move(out), "slice_rows", {x}, [xi, w, begin](const TensorImpl& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) xi->accumulate(begin * w + i, o.grad[i]);
  });
}

// out[j] = x[index[j]] along the first axis.
inline Tensor gather_rows(const Tensor& x, std::vector<std::size_t> index) {
  if (x.rank() == 0) throw DimensionError("gather_rows: scalar input");
  const std::size_t w = detail::row_width(x);
  for (auto r : index)
    if (r >= x.dim(0)) throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range for " + shape_str(x.shape()));
  Shape shape = x.shape();
  shape[0] = index.size();
  std::vector<double> out(index.size() * w);
  for (std::size_t j = 0; j < index.size(); ++j)
    std::copy_n(x.values().begin() + index[j] * w, w, out.begin() + j * w);
  auto xi = x.impl();
  return make_result(std::move(shape), std::move(out), "gather_rows", {x},
                     [xi, w, index = std::move(index)](const TensorImpl& o) {
                       for (std::size_t j = 0; j < index.size(); ++j)
                         for (std::size_t k = 0; k < w; ++k) xi->accumulate(index[j] * w + k, o.grad[j * w + k]);
                     });
}

// Mean over the first axis: [N, ...] -> [...].
inline Tensor mean_rows(const Tensor& x) {
  if (x.rank() == 0 || x.dim(0) == 0) throw DimensionError("mean_rows: empty input " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), w = detail::row_width(x);
  Shape shape(x.shape().begin() + 1, x.shape().end());
  std::vector<double> out(w, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < w; ++k) out[k] += x[r * w + k];
  for (auto& v : out) v /= static_cast<double>(n);
  auto xi = x.impl();
  return make_result(std::move(shape), std::move(out), "mean_rows", {x}, [xi, n, w](const TensorImpl& o) {
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < w; ++k) xi->accumulate(r * w + k, o.grad[k] * inv);
  });
}

// [N,C,H,W] -> [N,C]
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank(x, 4, "global_avg_pool", "input");
  const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(nc, 0.0);
  for (std::size_t i = 0; i < nc; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < hw; ++k) s += x[i * hw + k];
    out[i] = s / static_cast<double>(hw);
  }
  auto xi = x.impl();
  return make_result({x.dim(0), x.dim(1)}, std::move(out), "global_avg_pool", {x}, [xi, nc, hw](const TensorImpl& o) {
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < nc; ++i)
      for (std::size_t k = 0; k < hw; ++k) xi->accumulate(i * hw + k, o.grad[i] * inv);
  });
}

// Cross-correlation, NCHW input and [C_out, C_in, k, k] weight.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t padding) {
  detail::require_rank(input, 4, "conv2d", "input");
  detail::require_rank(weight, 4, "conv2d", "weight");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin)
    throw DimensionError("conv2d: input channels (axis 1) " + std::to_string(cin) + " != weight axis 1 " +
                         std::to_string(weight.dim(1)));
  if (weight.dim(3) != k || k == 0) throw DimensionError("conv2d: weight kernel axes 2,3 must be equal and >= 1");
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  if (h + 2 * padding < k || w + 2 * padding < k)
    throw DimensionError("conv2d: kernel " + std::to_string(k) + " larger than padded input axes 2,3");
  const std::size_t oh = (h + 2 * padding - k) / stride + 1, ow = (w + 2 * padding - k) / stride + 1;
  const auto& x = input.values();
  const auto& wt = weight.values();
  std::vector<double> out(n * cout * oh * ow, 0.0);
  const long pad = static_cast<long>(padding);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < cin; ++i)
        for (std::size_t u = 0; u < k; ++u)
          for (std::size_t v = 0; v < k; ++v) {
            const double wv = wt[((o * cin + i) * k + u) * k + v];
            if (wv == 0.0) continue;
            for (std::size_t y = 0; y < oh; ++y) {
              const long iy = static_cast<long>(y * stride + u) - pad;
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              const double* xrow = &x[((b * cin + i) * h + iy) * w];
              double* orow = &out[((b * cout + o) * oh + y) * ow];
              for (std::size_t xo = 0; xo < ow; ++xo) {
                const long ix = static_cast<long>(xo * stride + v) - pad;
                if (ix < 0 || ix >= static_cast<long>(w)) continue;
                orow[xo] += wv * xrow[ix];
              }
            }
          }
  auto ii = input.impl(), wi = weight.impl();
  return make_result(
      {n, cout, oh, ow}, std::move(out), "conv2d", {input, weight},
      [=](const TensorImpl& o) {
        const auto& g = o.grad;
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t oc = 0; oc < cout; ++oc)
            for (std::size_t i = 0; i < cin; ++i)
              for (std::size_t u = 0; u < k; ++u)
                for (std::size_t v = 0; v < k; ++v) {
                  const std::size_t widx = ((oc * cin + i) * k + u) * k + v;
                  const double wv = wi->data[widx];
                  double gw = 0.0;
                  for (std::size_t y = 0; y < oh; ++y) {
                    const long iy = static_cast<long>(y * stride + u) - pad;
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    const std::size_t xbase = ((b * cin + i) * h + iy) * w;
                    const double* grow = &g[((b * cout + oc) * oh + y) * ow];
                    for (std::size_t xo = 0; xo < ow; ++xo) {
                      const long ix = static_cast<long>(xo * stride + v) - pad;
                      if (ix < 0 || ix >= static_cast<long>(w)) continue;
                      gw += grow[xo] * ii->data[xbase + ix];
                      if (ii->requires_grad) ii->grad[xbase + ix] += grow[xo] * wv;
                    }
                  }
                  if (wi->requires_grad) wi->grad[widx] += gw;
                }
      });
}

// Per-channel convolution, weight [C, 1, k, k], k odd, "same" padding.
inline Tensor depthwise_conv2d(const Tensor& input, const Tensor& weight) {
  detail::require_rank(input, 4, "depthwise_conv2d", "input");
  detail::require_rank(weight, 4, "depthwise_conv2d", "weight");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3), k = weight.dim(2);
  if (weight.dim(0) != c || weight.dim(1) != 1 || weight.dim(3) != k)
    throw DimensionError("depthwise_conv2d: weight " + shape_str(weight.shape()) + " does not match " +
                         std::to_string(c) + " channels (axis 1 of input)");
  if (k % 2 == 0) throw DimensionError("depthwise_conv2d: kernel size must be odd, got " + std::to_string(k));
  const long pad = static_cast<long>((k - 1) / 2);
  const auto& x = input.values();
  const auto& wt = weight.values();
  std::vector<double> out(n * c * h * w, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t u = 0; u < k; ++u)
        for (std::size_t v = 0; v < k; ++v) {
          const double wv = wt[(ch * k + u) * k + v];
          for (std::size_t y = 0; y < h; ++y) {
            const long iy = static_cast<long>(y + u) - pad;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t xo = 0; xo < w; ++xo) {
              const long ix = static_cast<long>(xo + v) - pad;
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              out[((b * c + ch) * h + y) * w + xo] += wv * x[((b * c + ch) * h + iy) * w + ix];
            }
          }
        }
  auto ii = input.impl(), wi = weight.impl();
  return make_result({n, c, h, w}, std::move(out), "depthwise_conv2d", {input, weight}, [=](const TensorImpl& o) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t u = 0; u < k; ++u)
          for (std::size_t v = 0; v < k; ++v) {
            const std::size_t widx = (ch * k + u) * k + v;
            const double wv = wi->data[widx];
            double gw = 0.0;
            for (std::size_t y = 0; y < h; ++y) {
              const long iy = static_cast<long>(y + u) - pad;
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              for (std::size_t xo = 0; xo < w; ++xo) {
                const long ix = static_cast<long>(xo + v) - pad;
                if (ix < 0 || ix >= static_cast<long>(w)) continue;
                const std::size_t xidx = ((b * c + ch) * h + iy) * w + ix;
                const double g = o.grad[((b * c + ch) * h + y) * w + xo];
                gw += g * ii->data[xidx];
                if (ii->requires_grad) ii->grad[xidx] += g * wv;
              }
            }
            if (wi->requires_grad) wi->grad[widx] += gw;
          }
  });
}

// [..., C_in] x [C_in, C_out] -> [..., C_out]
inline Tensor linear(const Tensor& input, const Tensor& weight) {
  detail::require_rank(weight, 2, "linear", "weight");
  if (input.rank() == 0 || input.shape().back() != weight.dim(0))
    throw DimensionError("linear: last input axis of " + shape_str(input.shape()) + " != weight axis 0 (" +
                         std::to_string(weight.dim(0)) + ")");
  const std::size_t cin = weight.dim(0), cout = weight.dim(1), rows = input.numel() / std::max<std::size_t>(cin, 1);
  Shape shape = input.shape();
  shape.back() = cout;
  const auto& x = input.values();
  const auto& wt = weight.values();
  std::vector<double> out(rows * cout, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < cin; ++i) {
      const double xv = x[r * cin + i];
      for (std::size_t o = 0; o < cout; ++o) out[r * cout + o] += xv * wt[i * cout + o];
    }
  auto ii = input.impl(), wi = weight.impl();
  return make_result(std::move(shape), std::move(out), "linear", {input, weight}, [=](const TensorImpl& o) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < cin; ++i) {
        const double xv = ii->data[r * cin + i];
        double gx = 0.0;
        for (std::size_t oc = 0; oc < cout; ++oc) {
          const double g = o.grad[r * cout + oc];
          gx += g * wi->data[i * cout + oc];
          if (wi->requires_grad) wi->grad[i * cout + oc] += g * xv;
        }
        if (ii->requires_grad) ii->grad[r * cin + i] += gx;
      }
  });
}

// Normalizes each token over the last axis, then applies gamma/beta.
inline Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  detail::require_rank(gamma, 1, "layer_norm", "gamma");
  detail::require_rank(beta, 1, "layer_norm", "beta");
  const std::size_t c = gamma.dim(0);
  if (c == 0 || beta.dim(0) != c || input.rank() == 0 || input.shape().back() != c)
    throw DimensionError("layer_norm: last axis of " + shape_str(input.shape()) + " must match gamma/beta length " +
                         std::to_string(c));
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t rows = input.numel() / c;
  std::vector<double> xhat(input.numel()), inv_std(rows), out(input.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &input.values()[r * c];
    double mu = 0.0;
    for (std::size_t i = 0; i < c; ++i) mu += x[i];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t i = 0; i < c; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < c; ++i) {
      xhat[r * c + i] = (x[i] - mu) * inv_std[r];
      out[r * c + i] = gamma[i] * xhat[r * c + i] + beta[i];
    }
  }
  auto ii = input.impl(), gi = gamma.impl(), bi = beta.impl();
  return make_result(input.shape(), std::move(out), "layer_norm", {input, gamma, beta},
                     [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TensorImpl& o) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_g = 0.0, mean_gx = 0.0;
                         for (std::size_t i = 0; i < c; ++i) {
                           const double g = o.grad[r * c + i];
                           const double gxh = g * gi->data[i];
                           mean_g += gxh;
                           mean_gx += gxh * xhat[r * c + i];
                           if (gi->requires_grad) gi->grad[i] += g * xhat[r * c + i];
                           if (bi->requires_grad) bi->grad[i] += g;
                         }
                         if (!ii->requires_grad) continue;
                         mean_g /= static_cast<double>(c);
                         mean_gx /= static_cast<double>(c);
                         for (std::size_t i = 0; i < c; ++i) {
                           const double gxh = o.grad[r * c + i] * gi->data[i];
                           ii->grad[r * c + i] += inv_std[r] * (gxh - mean_g - xhat[r * c + i] * mean_gx);
                         }
                       }
                     });
}

// Scales each row of a [N, D] tensor to unit L2 norm.
inline Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12) {
  detail::require_rank(x, 2, "l2_normalize_rows", "input");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(x.numel()), norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += x[r * d + k] * x[r * d + k];
    norms[r] = std::max(std::sqrt(s), eps);
    for (std::size_t k = 0; k < d; ++k) out[r * d + k] = x[r * d + k] / norms[r];
  }
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), "l2_normalize_rows", {x},
                     [xi, n, d, norms = std::move(norms)](const TensorImpl& o) {
                       for (std::size_t r = 0; r < n; ++r) {
                         double dot = 0.0;
                         for (std::size_t k = 0; k < d; ++k) dot += o.grad[r * d + k] * o.data[r * d + k];
                         for (std::size_t k = 0; k < d; ++k)
                           xi->accumulate(r * d + k, (o.grad[r * d + k] - o.data[r * d + k] * dot) / norms[r]);
                       }
                     });
}

// Mean cross-entropy of [B, N] logits against class indices.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  detail::require_rank(logits, 2, "cross_entropy", "logits");
  const std::size_t b = logits.dim(0), n = logits.dim(1);
  if (b == 0) throw std::invalid_argument("cross_entropy: empty batch");
  if (labels.size() != b) throw DimensionError("cross_entropy: label count does not match batch axis 0");
  std::vector<double> probs(b * n);
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] >= n) throw std::out_of_range("cross_entropy: label " + std::to_string(labels[r]) + " out of range");
    const double* z = &logits.values()[r * n];
    const double zmax = *std::max_element(z, z + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(z[j] - zmax);
    const double lse = zmax + std::log(s);
    loss += lse - z[labels[r]];
    for (std::size_t j = 0; j < n; ++j) probs[r * n + j] = std::exp(z[j] - lse);
  }
  loss /= static_cast<double>(b);
  auto li = logits.impl();
  return make_result({}, {loss}, "cross_entropy", {logits},
                     [li, b, n, labels, probs = std::move(probs)](const TensorImpl& o) {
                       const double scale = o.grad[0] / static_cast<double>(b);
                       for (std::size_t r = 0; r < b; ++r)
                         for (std::size_t j = 0; j < n; ++j)
                           li->accumulate(r * n + j, scale * (probs[r * n + j] - (j == labels[r] ? 1.0 : 0.0)));
                     });
}

}  // namespace eventface::ops
