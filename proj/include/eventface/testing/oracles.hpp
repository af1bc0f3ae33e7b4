#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "eventface/events.hpp"
#include "eventface/metrics.hpp"
#include "eventface/ops.hpp"
#include "eventface/tensor.hpp"

// Slow, direct reference implementations used to cross-check the library.
namespace eventface::testing {

// Bi-WKV straight from the definition, no exponent shifting.
inline std::vector<double> bi_wkv_direct(const Tensor& k, const Tensor& v, const Tensor& w, const Tensor& u) {
  const std::size_t len = k.dim(0), ch = k.dim(1);
  std::vector<double> out(len * ch);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < ch; ++c) {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        double e;
        if (i == t) {
          e = std::exp(u[c] + k[i * ch + c]);
        } else {
          const double dist = std::abs(static_cast<double>(t) - static_cast<double>(i));
          e = std::exp(-(dist - 1.0) / static_cast<double>(len) * w[c] + k[i * ch + c]);
        }
        num += e * v[i * ch + c];
        den += e;
      }
      out[t * ch + c] = num / den;
    }
  return out;
}

// Zero-padded cross-correlation, NCHW input and [Cout, Cin, k, k] weights.
inline std::vector<double> conv2d_direct(const Tensor& x, const Tensor& wt, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = wt.dim(0), kh = wt.dim(2), kw = wt.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * co * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t dy = 0; dy < kh; ++dy)
              for (std::size_t dx = 0; dx < kw; ++dx) {
                const long iy = static_cast<long>(y * stride + dy) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx * stride + dx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += x[((b * ci + c) * h + iy) * w + ix] * wt[((o * ci + c) * kh + dy) * kw + dx];
              }
          out[((b * co + o) * oh + y) * ow + xx] = acc;
        }
  return out;
}

// Octa/quad token shift by explicit neighbor lookup on an [F,H,W,C] grid.
inline std::vector<double> token_shift_direct(const Tensor& x, double mu, std::size_t directions) {
  static const int dy[8] = {0, 0, -1, 1, -1, -1, 1, 1};
  static const int dx[8] = {-1, 1, 0, 0, -1, 1, -1, 1};
  const std::size_t f = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3), group = c / directions;
  std::vector<double> out(x.numel());
  for (std::size_t t = 0; t < f; ++t)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t d = std::min(ch / group, directions - 1);
          const long ny = std::clamp<long>(static_cast<long>(y) + dy[d], 0, static_cast<long>(h) - 1);
          const long nx = std::clamp<long>(static_cast<long>(xx) + dx[d], 0, static_cast<long>(w) - 1);
          const std::size_t self = ((t * h + y) * w + xx) * c + ch;
          const std::size_t nb = ((t * h + ny) * w + nx) * c + ch;
          out[self] = x[self] + (1.0 - mu) * x[nb];
        }
  return out;
}

// Per-pixel counts by testing every event against the window.
inline events::PolarityMaps count_events_direct(const events::EventStream& s, std::uint64_t t0, std::uint64_t dt) {
  events::PolarityMaps m{s.width, s.height, t0, t0 + dt,
                         std::vector<std::uint32_t>(std::size_t{s.width} * s.height, 0),
                         std::vector<std::uint32_t>(std::size_t{s.width} * s.height, 0)};
  for (const auto& e : s.events) {
    if (!(e.t >= t0 && e.t < t0 + dt)) continue;
    auto& target = e.p > 0 ? m.pos : m.neg;
    target[std::size_t{e.y} * s.width + e.x] += 1;
  }
  return m;
}

// FAR/FRR at a threshold by counting.
inline std::pair<double, double> far_frr_direct(const metrics::ScoreSet& s, double t) {
  double fa = 0, fr = 0;
  for (double v : s.impostor) fa += v >= t ? 1 : 0;
  for (double v : s.genuine) fr += v < t ? 1 : 0;
  return {fa / static_cast<double>(s.impostor.size()), fr / static_cast<double>(s.genuine.size())};
}

inline std::vector<double> candidate_thresholds(const metrics::ScoreSet& s) {
  std::vector<double> t;
  for (double v : s.genuine) t.push_back(v);
  for (double v : s.impostor) t.push_back(v);
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  t.push_back(std::numeric_limits<double>::infinity());
  return t;
}

inline double eer_direct(const metrics::ScoreSet& s) {
  const auto ts = candidate_thresholds(s);
  std::vector<double> diff, far;
  for (double t : ts) {
    auto [fa, fr] = far_frr_direct(s, t);
    diff.push_back(fa - fr);
    far.push_back(fa);
  }
  for (std::size_t j = 0; j + 1 < ts.size(); ++j) {
    if (diff[j] == 0.0) return far[j];
    if (diff[j] > 0.0 && diff[j + 1] <= 0.0) return far[j] + diff[j] / (diff[j] - diff[j + 1]) * (far[j + 1] - far[j]);
  }
  return far.back();
}

inline double auc_pairwise(const metrics::ScoreSet& s) {
  double acc = 0.0;
  for (double g : s.genuine)
    for (double i : s.impostor) acc += g > i ? 1.0 : (g == i ? 0.5 : 0.0);
  return acc / (static_cast<double>(s.genuine.size()) * static_cast<double>(s.impostor.size()));
}

inline double tar_at_far_direct(const metrics::ScoreSet& s, double far) {
  for (double t : candidate_thresholds(s)) {
    auto [fa, fr] = far_frr_direct(s, t);
    if (fa <= far) return 1.0 - fr;
  }
  return 0.0;
}

// Rank of the first correct gallery entry: entries with a higher score, or an
// equal score earlier in the gallery, come first.
inline std::vector<double> cmc_direct(const std::vector<metrics::LabeledEmbedding>& gallery,
                                      const std::vector<metrics::LabeledEmbedding>& probes, std::size_t max_rank) {
  std::vector<double> acc(max_rank, 0.0);
  for (const auto& p : probes) {
    std::vector<double> sc;
    for (const auto& g : gallery) sc.push_back(metrics::cosine_similarity(p.values, g.values));
    std::size_t best = gallery.size();
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      if (gallery[j].label != p.label) continue;
      std::size_t ahead = 0;
      for (std::size_t i = 0; i < gallery.size(); ++i) ahead += sc[i] > sc[j] || (sc[i] == sc[j] && i < j) ? 1 : 0;
      best = std::min(best, ahead);
    }
    for (std::size_t k = best; k < max_rank; ++k) acc[k] += 1.0;
  }
  for (auto& a : acc) a /= static_cast<double>(probes.size());
  return acc;
}

// Central-difference check of every gradient of a scalar-valued function.
// Error per coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-3).
// With max_coords > 0, large inputs are checked on that many sampled coordinates.
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn, std::vector<Tensor> inputs,
                        double step = 1e-5, std::size_t max_coords = 0) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const Tensor loss = fn(inputs);
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.numel(), 0.0));
    t.zero_grad();
  }
  double worst = 0.0;
  Rng pick(0xC0FFEE);
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    auto d = inputs[a].data();
    std::vector<std::size_t> coords(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) coords[i] = i;
    if (max_coords > 0 && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), pick);
      coords.resize(max_coords);
    }
    for (std::size_t i : coords) {
      const double keep = d[i];
      d[i] = keep + step;
      const double up = fn(inputs).item();
      d[i] = keep - step;
      const double down = fn(inputs).item();
      d[i] = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[a][i] - numeric) /
                         std::max({std::abs(analytic[a][i]), std::abs(numeric), 1e-3});
      worst = std::max(worst, err);
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return worst;
}

// Reduces a tensor to a scalar with fixed random weights so every output
// coordinate contributes a distinct gradient.
inline Tensor weighted_sum(const Tensor& out, const Tensor& weights) { return ops::sum(ops::mul(out, weights)); }

}  // namespace eventface::testing
