#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "eventface/ops.hpp"
#include "eventface/tensor.hpp"

// Spatiotemporal modulator: token shifts, bidirectional WKV attention over
// interleaved spatial/motion token sequences, Spatial Mix and Channel Mix.
namespace eventface::stm {

enum class ShiftMode { Octa, Quad };
enum class ScanOrder { RowMajor, ColMajor };
enum class Arrangement { Interleaved, Sequential };
enum class WkvPath { Naive, Scan };

// Token layout of a [F, H, W, C] grid.
struct GridDims {
  std::size_t frames = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 8;

  std::size_t tokens() const { return frames * height * width; }
  static GridDims of(const Tensor& grid) {
    if (grid.rank() != 4) throw DimensionError("token grid must be [F,H,W,C], got " + shape_str(grid.shape()));
    return {grid.dim(0), grid.dim(1), grid.dim(2), grid.dim(3)};
  }
};

struct Offset {
  int dy;
  int dx;
};

// Neighbor order W, E, N, S, NW, NE, SW, SE; group i of the shifted map comes from neighbor i.
inline constexpr std::array<Offset, 8> kOctaNeighbors = {{{0, -1}, {0, 1}, {-1, 0}, {1, 0},
                                                          {-1, -1}, {-1, 1}, {1, -1}, {1, 1}}};
inline constexpr std::array<Offset, 4> kQuadNeighbors = {{{0, -1}, {0, 1}, {-1, 0}, {1, 0}}};

namespace detail {

inline std::vector<std::size_t> shift_sources(const GridDims& g, std::span<const Offset> neighbors) {
  const std::size_t groups = neighbors.size();
  const std::size_t gsize = g.channels / groups;
  std::vector<std::size_t> src(g.tokens() * g.channels);
  auto clip = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1)); };
  for (std::size_t f = 0; f < g.frames; ++f)
    for (std::size_t y = 0; y < g.height; ++y)
      for (std::size_t x = 0; x < g.width; ++x) {
        const std::size_t tok = (f * g.height + y) * g.width + x;
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const std::size_t ny = clip(static_cast<long>(y) + neighbors[gi].dy, g.height);
          const std::size_t nx = clip(static_cast<long>(x) + neighbors[gi].dx, g.width);
          const std::size_t ntok = (f * g.height + ny) * g.width + nx;
          for (std::size_t c = gi * gsize; c < (gi + 1) * gsize; ++c) src[tok * g.channels + c] = ntok * g.channels + c;
        }
      }
  return src;
}

inline Tensor token_shift(const Tensor& x, double mu, std::span<const Offset> neighbors, const char* name) {
  const GridDims g = GridDims::of(x);
  if (g.channels % neighbors.size() != 0)
    throw std::invalid_argument(std::string(name) + ": channel count " + std::to_string(g.channels) +
                                " not divisible by " + std::to_string(neighbors.size()));
  auto src = shift_sources(g, neighbors);
  const double w = 1.0 - mu;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + w * x[src[i]];
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), name, {x}, [xi, w, src = std::move(src)](const TensorImpl& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      xi->grad[i] += o.grad[i];
      xi->grad[src[i]] += w * o.grad[i];
    }
  });
}

}  // namespace detail

// x + (1 - mu) * X_dagger, X_dagger gathering channel group i from neighbor i
// (boundary neighbors clip to the grid). Shifts stay within a frame.
inline Tensor octa_shift(const Tensor& x, double mu) {
  return detail::token_shift(x, mu, kOctaNeighbors, "octa_shift");
}

// Four-neighbor variant (W, E, N, S), groups of C/4.
inline Tensor q_shift(const Tensor& x, double mu) {
  return detail::token_shift(x, mu, kQuadNeighbors, "q_shift");
}

inline Tensor token_shift(const Tensor& x, double mu, ShiftMode mode) {
  return mode == ShiftMode::Octa ? octa_shift(x, mu) : q_shift(x, mu);
}

namespace detail {

inline void check_wkv_inputs(const Tensor& k, const Tensor& v, const Tensor& w, const Tensor& u) {
  if (k.rank() != 2 || k.shape() != v.shape())
    throw DimensionError("bi_wkv: k and v must be equal [L,C], got " + shape_str(k.shape()) + " and " + shape_str(v.shape()));
  if (k.dim(0) == 0) throw DimensionError("bi_wkv: empty sequence");
  const Shape cs{k.dim(1)};
  if (w.shape() != cs || u.shape() != cs) throw DimensionError("bi_wkv: w and u must have shape [C]");
  for (const Tensor* t : {&k, &v, &w, &u})
    for (double x : t->values())
      if (!std::isfinite(x)) throw std::domain_error("bi_wkv: non-finite input");
}

}  // namespace detail

// Bidirectional WKV, evaluated directly in O(L^2 C). For each output token the
// exponents are shifted by their maximum before exponentiation.
inline Tensor bi_wkv(const Tensor& k, const Tensor& v, const Tensor& w, const Tensor& u) {
  detail::check_wkv_inputs(k, v, w, u);
  const std::size_t len = k.dim(0), ch = k.dim(1);
  const double inv_len = 1.0 / static_cast<double>(len);
  std::vector<double> out(len * ch);
  std::vector<double> ex(len);
  for (std::size_t c = 0; c < ch; ++c) {
    const double wc = w[c], uc = u[c];
    for (std::size_t l = 0; l < len; ++l) {
      double m = -INFINITY;
      for (std::size_t i = 0; i < len; ++i) {
        const double dist = static_cast<double>(l > i ? l - i : i - l);
        ex[i] = i == l ? uc + k[l * ch + c] : -(dist - 1.0) * inv_len * wc + k[i * ch + c];
        m = std::max(m, ex[i]);
      }
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double a = std::exp(ex[i] - m);
        num += a * v[i * ch + c];
        den += a;
      }
      out[l * ch + c] = num / den;
    }
  }
  auto ki = k.impl(), vi = v.impl(), wi = w.impl(), ui = u.impl();
  return make_result({len, ch}, std::move(out), "bi_wkv", {k, v, w, u}, [=](const TensorImpl& o) {
    std::vector<double> ex(len), a(len);
    for (std::size_t c = 0; c < ch; ++c) {
      const double wc = wi->data[c], uc = ui->data[c];
      double gw = 0.0, gu = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double g = o.grad[l * ch + c];
        if (g == 0.0) continue;
        double m = -INFINITY;
        for (std::size_t i = 0; i < len; ++i) {
          const double dist = static_cast<double>(l > i ? l - i : i - l);
          ex[i] = i == l ? uc + ki->data[l * ch + c] : -(dist - 1.0) * inv_len * wc + ki->data[i * ch + c];
          m = std::max(m, ex[i]);
        }
        double den = 0.0;
        for (std::size_t i = 0; i < len; ++i) den += (a[i] = std::exp(ex[i] - m));
        const double y = o.data[l * ch + c];
        const double gd = g / den;
        for (std::size_t i = 0; i < len; ++i) {
          const double vv = vi->data[i * ch + c];
          const double ge = a[i] * (vv - y) * gd;  // d out / d exponent_i
          if (vi->requires_grad) vi->grad[i * ch + c] += a[i] * gd;
          if (ki->requires_grad) ki->grad[i * ch + c] += ge;
          if (i == l) {
            gu += ge;
          } else {
            const double dist = static_cast<double>(l > i ? l - i : i - l);
            gw += ge * (-(dist - 1.0) * inv_len);
          }
        }
      }
      if (wi->requires_grad) wi->grad[c] += gw;
      if (ui->requires_grad) ui->grad[c] += gu;
    }
  });
}

// Linear-time Bi-WKV: forward/backward prefix recurrences with decay
// lambda = exp(-w/L) per step. Exponents are shifted by the per-channel
// maximum of k and u + k; the shift cancels in the ratio.
inline Tensor bi_wkv_scan(const Tensor& k, const Tensor& v, const Tensor& w, const Tensor& u) {
  detail::check_wkv_inputs(k, v, w, u);
  const std::size_t len = k.dim(0), ch = k.dim(1);
  const double inv_len = 1.0 / static_cast<double>(len);

  struct ChannelState {
    std::vector<double> ek, bonus, num, den;
  };
  auto prepare = [len, ch](const TensorImpl& kk, double uc, std::size_t c) {
    ChannelState s;
    double m = -INFINITY;
    for (std::size_t i = 0; i < len; ++i) m = std::max({m, kk.data[i * ch + c], uc + kk.data[i * ch + c]});
    s.ek.resize(len);
    s.bonus.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
      s.ek[i] = std::exp(kk.data[i * ch + c] - m);
      s.bonus[i] = std::exp(uc + kk.data[i * ch + c] - m);
    }
    return s;
  };

  std::vector<double> out(len * ch);
  for (std::size_t c = 0; c < ch; ++c) {
    auto s = prepare(*k.impl(), u[c], c);
    const double lam = std::exp(-w[c] * inv_len);
    std::vector<double> num(len), den(len);
    double a = 0.0, b = 0.0;
    for (std::size_t l = 0; l < len; ++l) {
      num[l] = a;
      den[l] = b;
      a = lam * a + s.ek[l] * v[l * ch + c];
      b = lam * b + s.ek[l];
    }
    a = b = 0.0;
    for (std::size_t l = len; l-- > 0;) {
      num[l] += a + s.bonus[l] * v[l * ch + c];
      den[l] += b + s.bonus[l];
      a = lam * a + s.ek[l] * v[l * ch + c];
      b = lam * b + s.ek[l];
    }
    for (std::size_t l = 0; l < len; ++l) out[l * ch + c] = num[l] / den[l];
  }

  auto ki = k.impl(), vi = v.impl(), wi = w.impl(), ui = u.impl();
  return make_result({len, ch}, std::move(out), "bi_wkv_scan", {k, v, w, u}, [=](const TensorImpl& o) {
    for (std::size_t c = 0; c < ch; ++c) {
      auto s = prepare(*ki, ui->data[c], c);
      const double lam = std::exp(-wi->data[c] * inv_len);
      const double dlam = -lam * inv_len;  // d lambda / d w
      auto vv = [&](std::size_t i) { return vi->data[i * ch + c]; };
      // Recompute denominators; carry d/dw of numerator and denominator in forward mode.
      std::vector<double> den(len, 0.0), dnum_dw(len, 0.0), dden_dw(len, 0.0);
      {
        double a = 0, b = 0, da = 0, db = 0;
        for (std::size_t l = 0; l < len; ++l) {
          den[l] = b;
          dnum_dw[l] = da;
          dden_dw[l] = db;
          da = dlam * a + lam * da;
          db = dlam * b + lam * db;
          a = lam * a + s.ek[l] * vv(l);
          b = lam * b + s.ek[l];
        }
        a = b = da = db = 0;
        for (std::size_t l = len; l-- > 0;) {
          den[l] += b + s.bonus[l];
          dnum_dw[l] += da;
          dden_dw[l] += db;
          da = dlam * a + lam * da;
          db = dlam * b + lam * db;
          a = lam * a + s.ek[l] * vv(l);
          b = lam * b + s.ek[l];
        }
      }
      // p = dL/dnum, q = dL/dden per output token
      std::vector<double> p(len), q(len);
      double gw = 0.0, gu = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double g = o.grad[l * ch + c];
        p[l] = g / den[l];
        q[l] = -g * o.data[l * ch + c] / den[l];
        gw += p[l] * dnum_dw[l] + q[l] * dden_dw[l];
      }
      // Decayed sums of p and q seen from each source token, both directions.
      std::vector<double> sp(len, 0.0), sq(len, 0.0);
      {
        double ap = 0, aq = 0;
        for (std::size_t i = 0; i < len; ++i) {
          sp[i] += ap;
          sq[i] += aq;
          ap = lam * ap + p[i];
          aq = lam * aq + q[i];
        }
        ap = aq = 0;
        for (std::size_t i = len; i-- > 0;) {
          sp[i] += ap;
          sq[i] += aq;
          ap = lam * ap + p[i];
          aq = lam * aq + q[i];
        }
      }
      for (std::size_t i = 0; i < len; ++i) {
        const double gv = s.ek[i] * sp[i] + s.bonus[i] * p[i];
        const double gk = s.ek[i] * (vv(i) * sp[i] + sq[i]) + s.bonus[i] * (vv(i) * p[i] + q[i]);
        gu += s.bonus[i] * (vv(i) * p[i] + q[i]);
        if (vi->requires_grad) vi->grad[i * ch + c] += gv;
        if (ki->requires_grad) ki->grad[i * ch + c] += gk;
      }
      if (wi->requires_grad) wi->grad[c] += gw;
      if (ui->requires_grad) ui->grad[c] += gu;
    }
  });
}

inline Tensor bi_wkv(const Tensor& k, const Tensor& v, const Tensor& w, const Tensor& u, WkvPath path) {
  return path == WkvPath::Naive ? bi_wkv(k, v, w, u) : bi_wkv_scan(k, v, w, u);
}

// Grid index visited at each scan position. Frames are the outer loop; within
// a frame rows (row-major) or columns (column-major) are traversed in order.
inline std::vector<std::size_t> scan_order(const GridDims& g, ScanOrder order) {
  std::vector<std::size_t> idx;
  idx.reserve(g.tokens());
  for (std::size_t f = 0; f < g.frames; ++f) {
    if (order == ScanOrder::RowMajor) {
      for (std::size_t y = 0; y < g.height; ++y)
        for (std::size_t x = 0; x < g.width; ++x) idx.push_back((f * g.height + y) * g.width + x);
    } else {
      for (std::size_t x = 0; x < g.width; ++x)
        for (std::size_t y = 0; y < g.height; ++y) idx.push_back((f * g.height + y) * g.width + x);
    }
  }
  return idx;
}

// A [2L, C] token sequence plus the row permutation that produced it from
// concat_rows(spatial, motion).
struct ArrangedTokens {
  Tensor tokens;
  std::vector<std::size_t> perm;
};

inline std::vector<std::size_t> arrangement_perm(const GridDims& g, ScanOrder scan, Arrangement mode) {
  const auto order = scan_order(g, scan);
  const std::size_t len = order.size();
  std::vector<std::size_t> perm(2 * len);
  for (std::size_t j = 0; j < len; ++j) {
    if (mode == Arrangement::Interleaved) {
      perm[2 * j] = order[j];
      perm[2 * j + 1] = len + order[j];
    } else {
      perm[j] = order[j];
      perm[len + j] = len + order[j];
    }
  }
  return perm;
}

// spatial/motion: [L, C] in grid order (L = F*H*W).
inline ArrangedTokens arrange(const Tensor& spatial, const Tensor& motion, const GridDims& g, ScanOrder scan,
                              Arrangement mode) {
  if (spatial.rank() != 2 || spatial.shape() != motion.shape())
    throw DimensionError("arrange: spatial " + shape_str(spatial.shape()) + " and motion " + shape_str(motion.shape()) +
                         " must be equal [L,C]");
  if (spatial.dim(0) != g.tokens()) throw DimensionError("arrange: token count does not match grid");
  auto perm = arrangement_perm(g, scan, mode);
  return {ops::gather_rows(ops::concat_rows(spatial, motion), perm), perm};
}

inline ArrangedTokens interleave(const Tensor& spatial, const Tensor& motion, const GridDims& g, ScanOrder scan) {
  return arrange(spatial, motion, g, scan, Arrangement::Interleaved);
}

inline ArrangedTokens sequential_arrange(const Tensor& spatial, const Tensor& motion, const GridDims& g,
                                         ScanOrder scan = ScanOrder::RowMajor) {
  return arrange(spatial, motion, g, scan, Arrangement::Sequential);
}

// Inverse of arrange: back to (spatial, motion) in grid order.
inline std::pair<Tensor, Tensor> disarrange(const Tensor& sequence, const std::vector<std::size_t>& perm) {
  if (sequence.rank() != 2 || sequence.dim(0) != perm.size() || perm.size() % 2 != 0)
    throw DimensionError("disarrange: sequence " + shape_str(sequence.shape()) + " does not match permutation");
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t j = 0; j < perm.size(); ++j) inverse[perm[j]] = j;
  const Tensor both = ops::gather_rows(sequence, std::move(inverse));
  const std::size_t len = perm.size() / 2;
  return {ops::slice_rows(both, 0, len), ops::slice_rows(both, len, len)};
}

struct WkvParams {
  Tensor w;  // [C] distance decay
  Tensor u;  // [C] current-token bonus
};

struct StWkvOptions {
  std::array<ScanOrder, 2> cascade = {ScanOrder::RowMajor, ScanOrder::ColMajor};
  Arrangement arrangement = Arrangement::Interleaved;
  WkvPath path = WkvPath::Naive;
};

// Two cascaded Bi-WKV passes over the joint spatial/motion sequence. The
// second pass aggregates the first pass's outputs under the second scan order
// with the original keys.
inline std::pair<Tensor, Tensor> st_wkv(const Tensor& k_s, const Tensor& v_s, const Tensor& k_m, const Tensor& v_m,
                                        const GridDims& g, const std::array<WkvParams, 2>& params,
                                        const StWkvOptions& opt = {}) {
  Tensor cur_s = v_s, cur_m = v_m;
  for (std::size_t pass = 0; pass < 2; ++pass) {
    const auto keys = arrange(k_s, k_m, g, opt.cascade[pass], opt.arrangement);
    const auto vals = arrange(cur_s, cur_m, g, opt.cascade[pass], opt.arrangement);
    const Tensor mixed = bi_wkv(keys.tokens, vals.tokens, params[pass].w, params[pass].u, opt.path);
    std::tie(cur_s, cur_m) = disarrange(mixed, vals.perm);
  }
  return {cur_s, cur_m};
}

struct StreamParams {
  Tensor ln_gamma, ln_beta;  // [C]
  Tensor w_r, w_k, w_v, w_o;  // [C, C]
};

struct StmParams {
  std::size_t channels = 8;
  StreamParams spatial, motion;
  std::array<WkvParams, 2> wkv;
  Tensor cm_ln_gamma, cm_ln_beta;        // [2C]
  Tensor cm_w_r, cm_w_k, cm_w_v, cm_w_o;  // [2C, 2C]

  // Handles alias the stored tensors.
  std::vector<std::pair<std::string, Tensor>> named() const {
    return {{"spatial.ln_gamma", spatial.ln_gamma}, {"spatial.ln_beta", spatial.ln_beta},
            {"spatial.w_r", spatial.w_r},           {"spatial.w_k", spatial.w_k},
            {"spatial.w_v", spatial.w_v},           {"spatial.w_o", spatial.w_o},
            {"motion.ln_gamma", motion.ln_gamma},   {"motion.ln_beta", motion.ln_beta},
            {"motion.w_r", motion.w_r},             {"motion.w_k", motion.w_k},
            {"motion.w_v", motion.w_v},             {"motion.w_o", motion.w_o},
            {"wkv0.w", wkv[0].w},                   {"wkv0.u", wkv[0].u},
            {"wkv1.w", wkv[1].w},                   {"wkv1.u", wkv[1].u},
            {"cm.ln_gamma", cm_ln_gamma},           {"cm.ln_beta", cm_ln_beta},
            {"cm.w_r", cm_w_r},                     {"cm.w_k", cm_w_k},
            {"cm.w_v", cm_w_v},                     {"cm.w_o", cm_w_o}};
  }

  // Projections ~ N(0, 1/fan_in), output projections scaled by out_scale,
  // w linearly spaced over [0.3, 1.3], u = 0.
  static StmParams init(std::size_t channels, Rng& rng, double out_scale = 0.1) {
    if (channels == 0 || channels % 8 != 0)
      throw std::invalid_argument("StmParams: channels must be a positive multiple of 8, got " + std::to_string(channels));
    StmParams p;
    p.channels = channels;
    const std::size_t c = channels, c2 = 2 * channels;
    const double sd = 1.0 / std::sqrt(static_cast<double>(c)), sd2 = 1.0 / std::sqrt(static_cast<double>(c2));
    for (StreamParams* s : {&p.spatial, &p.motion}) {
      s->ln_gamma = Tensor::full({c}, 1.0);
      s->ln_beta = Tensor::zeros({c});
      s->w_r = Tensor::randn({c, c}, rng, sd);
      s->w_k = Tensor::randn({c, c}, rng, sd);
      s->w_v = Tensor::randn({c, c}, rng, sd);
      s->w_o = Tensor::randn({c, c}, rng, sd * out_scale);
    }
    for (auto& wk : p.wkv) {
      std::vector<double> w(c);
      for (std::size_t i = 0; i < c; ++i)
        w[i] = c == 1 ? 0.3 : 0.3 + 1.0 * static_cast<double>(i) / static_cast<double>(c - 1);
      wk.w = Tensor::from({c}, std::move(w));
      wk.u = Tensor::zeros({c});
    }
    p.cm_ln_gamma = Tensor::full({c2}, 1.0);
    p.cm_ln_beta = Tensor::zeros({c2});
    p.cm_w_r = Tensor::randn({c2, c2}, rng, sd2);
    p.cm_w_k = Tensor::randn({c2, c2}, rng, sd2);
    p.cm_w_v = Tensor::randn({c2, c2}, rng, sd2);
    p.cm_w_o = Tensor::randn({c2, c2}, rng, sd2 * out_scale);
    return p;
  }

  void set_trainable(bool flag) {
    for (auto& [name, t] : named()) t.set_requires_grad(flag);
  }
};

struct StmOptions {
  double mu_r = 0.5;
  double mu_k = 0.5;
  double mu_v = 0.5;
  double mu_cm = 0.5;
  double ln_eps = 1e-5;
  ShiftMode shift = ShiftMode::Octa;
  StWkvOptions wkv;
};

// Dual-stream Spatial Mix over [F,H,W,C] grids; returns updated (spatial, motion).
inline std::pair<Tensor, Tensor> spatial_mix(const Tensor& x_s, const Tensor& x_m, const StmParams& p,
                                             const StmOptions& opt = {}) {
  if (x_s.shape() != x_m.shape())
    throw DimensionError("spatial_mix: spatial " + shape_str(x_s.shape()) + " and motion " + shape_str(x_m.shape()) +
                         " differ");
  const GridDims g = GridDims::of(x_s);
  if (g.channels != p.channels) throw DimensionError("spatial_mix: grid channels do not match parameters");
  const Shape flat{g.tokens(), g.channels};

  struct Branches {
    Tensor r, k, v;
  };
  auto project = [&](const Tensor& x, const StreamParams& sp) {
    const Tensor normed = ops::layer_norm(x, sp.ln_gamma, sp.ln_beta, opt.ln_eps);
    auto branch = [&](double mu, const Tensor& weight) {
      return ops::reshape(ops::linear(token_shift(normed, mu, opt.shift), weight), flat);
    };
    return Branches{branch(opt.mu_r, sp.w_r), branch(opt.mu_k, sp.w_k), branch(opt.mu_v, sp.w_v)};
  };
  const Branches s = project(x_s, p.spatial);
  const Branches m = project(x_m, p.motion);
  auto [wkv_s, wkv_m] = st_wkv(s.k, s.v, m.k, m.v, g, p.wkv, opt.wkv);
  auto finish = [&](const Branches& b, const Tensor& wkv, const Tensor& x, const StreamParams& sp) {
    const Tensor gated = ops::mul(ops::sigmoid(b.r), wkv);
    return ops::add(ops::reshape(ops::linear(gated, sp.w_o), x.shape()), x);
  };
  return {finish(s, wkv_s, x_s, p.spatial), finish(m, wkv_m, x_m, p.motion)};
}

// Channel Mix over the channel-concatenated streams; returns (spatial, motion).
inline std::pair<Tensor, Tensor> channel_mix(const Tensor& y_s, const Tensor& y_m, const StmParams& p,
                                             const StmOptions& opt = {}) {
  if (y_s.shape() != y_m.shape()) throw DimensionError("channel_mix: stream shapes differ");
  const GridDims g = GridDims::of(y_s);
  if (g.channels != p.channels) throw DimensionError("channel_mix: grid channels do not match parameters");
  const Tensor joined = ops::concat_last_axis(y_s, y_m);
  const Tensor shifted = token_shift(ops::layer_norm(joined, p.cm_ln_gamma, p.cm_ln_beta, opt.ln_eps), opt.mu_cm, opt.shift);
  const Tensor r = ops::linear(shifted, p.cm_w_r);
  const Tensor k = ops::linear(shifted, p.cm_w_k);
  const Tensor v = ops::linear(ops::relu_squared(k), p.cm_w_v);
  const Tensor out = ops::add(ops::linear(ops::mul(ops::sigmoid(r), v), p.cm_w_o), joined);
  auto halves = ops::split_last_axis(out, {g.channels, g.channels});
  return {halves[0], halves[1]};
}

inline std::pair<Tensor, Tensor> stm_block(const Tensor& x_s, const Tensor& x_m, const StmParams& p,
                                           const StmOptions& opt = {}) {
  auto [y_s, y_m] = spatial_mix(x_s, x_m, p, opt);
  return channel_mix(y_s, y_m, p, opt);
}

}  // namespace eventface::stm
