#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "eventface/events.hpp"
#include "eventface/tensor.hpp"

// Synthetic stand-in for an event-camera face dataset: each identity is a
// fixed random log-intensity pattern that undergoes a rigid motion per
// sequence; an ideal event sensor records it.
namespace eventface::dataset {

struct Blob {
  double cx, cy, sigma, amp;
};

struct IdentityPattern {
  std::vector<Blob> blobs;

  // Log intensity at pattern coordinates (roughly [-1, 1]^2).
  double log_intensity(double px, double py) const {
    double v = 0.0;
    for (const auto& b : blobs) {
      const double dx = px - b.cx, dy = py - b.cy;
      v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
    }
    return v;
  }
};

struct Pose {
  double tx = 0.0, ty = 0.0, angle = 0.0;
};

struct SyntheticConfig {
  std::size_t train_ids = 6;
  std::size_t test_ids = 2;
  std::size_t sequences_per_id = 16;
  std::size_t sensor_hw = 32;
  std::size_t frames = 4;
  std::uint64_t delta_t_us = 50'000;
  std::size_t target_hw = 16;
  double contrast = 0.15;
  std::uint64_t sim_step_us = 2'000;
  std::size_t blobs_per_id = 5;
  double max_offset = 0.12;       // initial translation, pattern units
  double max_angle = 0.2;         // initial rotation, radians
  double min_travel = 0.15;       // translation over the whole sequence
  double max_travel = 0.35;
  double max_spin = 0.35;         // rotation over the whole sequence
  double direction_spread = 3.141592653589793;  // travel direction within +-spread of +x
  std::uint64_t seed = 7;
};

namespace detail {

inline Rng stream_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(b)};
  return Rng(seq);
}

// Mean squared spatial gradient of the pattern over [-1, 1]^2.
inline double gradient_energy(const IdentityPattern& p, std::size_t n = 48) {
  const double step = 2.0 / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double px = -1.0 + (static_cast<double>(x) + 0.5) * step, py = -1.0 + (static_cast<double>(y) + 0.5) * step;
      const double gx = (p.log_intensity(px + 1e-4, py) - p.log_intensity(px - 1e-4, py)) / 2e-4;
      const double gy = (p.log_intensity(px, py + 1e-4) - p.log_intensity(px, py - 1e-4)) / 2e-4;
      acc += gx * gx + gy * gy;
    }
  return acc / static_cast<double>(n * n);
}

}  // namespace detail

// Target mean squared log-intensity gradient of every identity pattern.
inline constexpr double kGradientEnergy = 4.0;

// Identity k's pattern depends only on (seed, k).
inline IdentityPattern make_identity(std::uint64_t seed, std::uint64_t identity, std::size_t blobs) {
  Rng rng = detail::stream_rng(seed, 0x1D, identity);
  std::uniform_real_distribution<double> pos(-0.7, 0.7), sig(0.1, 0.25), mag(0.6, 1.6), sign(0.0, 1.0);
  IdentityPattern p;
  for (std::size_t i = 0; i < blobs; ++i) {
    Blob b{};
    b.cx = pos(rng);
    b.cy = pos(rng);
    b.sigma = sig(rng);
    b.amp = mag(rng) * (sign(rng) < 0.3 ? -1.0 : 1.0);
    p.blobs.push_back(b);
  }
  // Equalize gradient energy so the event rate of a sequence depends on its
  // motion, not on which identity is moving.
  const double energy = detail::gradient_energy(p);
  if (energy > 0.0)
    for (auto& b : p.blobs) b.amp *= std::sqrt(kGradientEnergy / energy);
  return p;
}

// Log intensity sampled on an n x n pixel grid for the given pose.
inline std::vector<double> render_log_intensity(const IdentityPattern& pattern, const Pose& pose, std::size_t n) {
  std::vector<double> out(n * n);
  const double half = static_cast<double>(n) / 2.0;
  const double ca = std::cos(pose.angle), sa = std::sin(pose.angle);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      // pixel -> world coordinates in [-1, 1], then into the pattern frame
      const double wx = (static_cast<double>(x) + 0.5 - half) / half - pose.tx;
      const double wy = (static_cast<double>(y) + 0.5 - half) / half - pose.ty;
      const double px = ca * wx + sa * wy, py = -sa * wx + ca * wy;
      out[y * n + x] = 0.5 + pattern.log_intensity(px, py);
    }
  return out;
}

// Grayscale "RGB-style" image of the pattern, scaled into [-1, 1] per image.
inline events::Frame render_intensity_frame(const IdentityPattern& pattern, const Pose& pose, std::size_t n) {
  const auto logi = render_log_intensity(pattern, pose, n);
  double lo = INFINITY, hi = -INFINITY;
  std::vector<double> inten(logi.size());
  for (std::size_t i = 0; i < logi.size(); ++i) {
    inten[i] = std::exp(logi[i]);
    lo = std::min(lo, inten[i]);
    hi = std::max(hi, inten[i]);
  }
  events::Frame f{n, n, std::vector<double>(n * n * 3)};
  const double span = std::max(hi - lo, 1e-12);
  for (std::size_t i = 0; i < inten.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) f.values[i * 3 + c] = 2.0 * (inten[i] - lo) / span - 1.0;
  return f;
}

struct MotionPlan {
  Pose start;
  Pose end;
};

inline MotionPlan random_motion(const SyntheticConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0), dir(-cfg.direction_spread, cfg.direction_spread),
      travel(cfg.min_travel, cfg.max_travel);
  MotionPlan m;
  m.start = {cfg.max_offset * unit(rng), cfg.max_offset * unit(rng), cfg.max_angle * unit(rng)};
  const double d = dir(rng), len = travel(rng);
  m.end = {m.start.tx + len * std::cos(d), m.start.ty + len * std::sin(d), m.start.angle + cfg.max_spin * unit(rng)};
  return m;
}

// Intensity video of a pattern moving linearly from plan.start to plan.end
// over [0, duration_us].
inline events::IntensityVideo render_video(const IdentityPattern& pattern, const MotionPlan& plan, std::size_t n,
                                           std::uint64_t duration_us, std::uint64_t step_us) {
  if (step_us == 0) throw std::invalid_argument("render_video: step must be positive");
  events::IntensityVideo video;
  video.width = video.height = static_cast<std::uint32_t>(n);
  for (std::uint64_t t = 0; t <= duration_us; t += step_us) {
    const double a = static_cast<double>(t) / static_cast<double>(duration_us);
    const Pose p{plan.start.tx + a * (plan.end.tx - plan.start.tx), plan.start.ty + a * (plan.end.ty - plan.start.ty),
                 plan.start.angle + a * (plan.end.angle - plan.start.angle)};
    auto logi = render_log_intensity(pattern, p, n);
    for (auto& v : logi) v = std::exp(v);
    video.frames.push_back({t, std::move(logi)});
  }
  return video;
}

struct Sample {
  std::string sample_id;
  std::size_t identity = 0;
  events::EventStream stream;
};

struct SyntheticDataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

inline std::string sample_name(std::size_t identity, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "id%03zu_seq%03zu", identity, index);
  return buf;
}

inline Sample make_sample(const SyntheticConfig& cfg, std::size_t identity, std::size_t index) {
  const auto pattern = make_identity(cfg.seed, identity, cfg.blobs_per_id);
  Rng rng = detail::stream_rng(cfg.seed, 0x5E0 + identity, index);
  const auto plan = random_motion(cfg, rng);
  const auto video = render_video(pattern, plan, cfg.sensor_hw, cfg.frames * cfg.delta_t_us, cfg.sim_step_us);
  return {sample_name(identity, index), identity, events::simulate_events(video, cfg.contrast)};
}

// Identities [0, train_ids) form the training split and
// [train_ids, train_ids + test_ids) the test split.
inline SyntheticDataset make_synthetic_dataset(const SyntheticConfig& cfg) {
  if (cfg.train_ids + cfg.test_ids < 2) throw std::invalid_argument("make_synthetic_dataset: need at least 2 identities");
  SyntheticDataset ds;
  for (std::size_t id = 0; id < cfg.train_ids + cfg.test_ids; ++id)
    for (std::size_t s = 0; s < cfg.sequences_per_id; ++s)
      (id < cfg.train_ids ? ds.train : ds.test).push_back(make_sample(cfg, id, s));
  return ds;
}

inline events::EventFrameSequence encode_sample(const Sample& s, const SyntheticConfig& cfg) {
  return events::build_sequence(s.stream, 0, cfg.frames, cfg.delta_t_us, cfg.target_hw);
}

// Single-image samples of identities disjoint from the event dataset, used to
// emulate a frame-pretrained backbone.
struct ImageSample {
  std::size_t identity;
  events::Frame frame;
};

inline std::vector<ImageSample> make_pretrain_images(const SyntheticConfig& cfg, std::size_t num_ids,
                                                     std::size_t per_id) {
  std::vector<ImageSample> out;
  const std::uint64_t base = 1'000'000;  // identity index space not used by the event splits
  for (std::size_t id = 0; id < num_ids; ++id) {
    const auto pattern = make_identity(cfg.seed, base + id, cfg.blobs_per_id);
    for (std::size_t k = 0; k < per_id; ++k) {
      Rng rng = detail::stream_rng(cfg.seed, 0xF00 + id, k);
      const auto plan = random_motion(cfg, rng);
      std::uniform_real_distribution<double> a(0.0, 1.0);
      const double t = a(rng);
      const Pose p{plan.start.tx + t * (plan.end.tx - plan.start.tx), plan.start.ty + t * (plan.end.ty - plan.start.ty),
                   plan.start.angle + t * (plan.end.angle - plan.start.angle)};
      out.push_back({id, render_intensity_frame(pattern, p, cfg.target_hw)});
    }
  }
  return out;
}

}  // namespace eventface::dataset
