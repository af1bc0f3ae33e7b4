#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "eventface/tensor.hpp"

namespace eventface::events {

class EventDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EventParseError : public EventDataError {
 public:
  EventParseError(std::size_t line, const std::string& what)
      : EventDataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class EventOrderError : public EventDataError {
 public:
  using EventDataError::EventDataError;
};

class EventGeometryError : public EventDataError {
 public:
  using EventDataError::EventDataError;
};

struct EventRecord {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint64_t t = 0;  // microseconds
  std::int8_t p = 1;    // -1 or +1

  bool operator==(const EventRecord&) const = default;
};

struct EventStream {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<EventRecord> events;

  bool operator==(const EventStream&) const = default;
};

// Throws EventOrderError / EventGeometryError when the stream breaks its invariants.
inline void validate(const EventStream& stream) {
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const auto& e = stream.events[i];
    if (e.x >= stream.width || e.y >= stream.height)
      throw EventGeometryError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + "," +
                               std::to_string(e.y) + ") outside " + std::to_string(stream.width) + "x" +
                               std::to_string(stream.height));
    if (e.p != 1 && e.p != -1) throw EventDataError("event " + std::to_string(i) + " has polarity " + std::to_string(e.p));
    if (i > 0 && e.t < stream.events[i - 1].t)
      throw EventOrderError("event " + std::to_string(i) + " timestamp " + std::to_string(e.t) + " precedes " +
                            std::to_string(stream.events[i - 1].t));
  }
}

namespace detail {

template <typename T>
T parse_int(std::string_view field, std::size_t line) {
  T value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
    throw EventParseError(line, "expected integer, got '" + std::string(field) + "'");
  return value;
}

inline std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = s.find(',', start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

// Event CSV: "width,height" line, "t_us,x,y,p" header, then one row per event.
inline EventStream parse_event_file(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto pos = text.find('\n', start);
    if (pos == std::string_view::npos) pos = text.size();
    lines.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  if (lines.empty()) throw EventParseError(1, "missing geometry line");
  EventStream stream;
  {
    auto fields = detail::split_commas(lines[0]);
    if (fields.size() != 2) throw EventParseError(1, "geometry line must be 'width,height'");
    stream.width = detail::parse_int<std::uint32_t>(fields[0], 1);
    stream.height = detail::parse_int<std::uint32_t>(fields[1], 1);
    if (stream.width == 0 || stream.height == 0 || stream.width > 65536 || stream.height > 65536)
      throw EventParseError(1, "sensor geometry out of range");
  }
  if (lines.size() < 2 || lines[1] != "t_us,x,y,p") throw EventParseError(2, "expected header 't_us,x,y,p'");
  for (std::size_t i = 2; i < lines.size(); ++i) {
    const std::size_t line = i + 1;
    auto fields = detail::split_commas(lines[i]);
    if (fields.size() != 4) throw EventParseError(line, "expected 4 fields, got " + std::to_string(fields.size()));
    EventRecord e;
    e.t = detail::parse_int<std::uint64_t>(fields[0], line);
    const auto x = detail::parse_int<std::uint32_t>(fields[1], line);
    const auto y = detail::parse_int<std::uint32_t>(fields[2], line);
    const auto p = detail::parse_int<int>(fields[3], line);
    if (p != 1 && p != -1) throw EventParseError(line, "polarity must be -1 or 1");
    if (x >= stream.width || y >= stream.height)
      throw EventGeometryError("line " + std::to_string(line) + ": coordinate (" + std::to_string(x) + "," +
                               std::to_string(y) + ") outside sensor");
    if (!stream.events.empty() && e.t < stream.events.back().t)
      throw EventOrderError("line " + std::to_string(line) + ": timestamp " + std::to_string(e.t) + " precedes " +
                            std::to_string(stream.events.back().t));
    e.x = static_cast<std::uint16_t>(x);
    e.y = static_cast<std::uint16_t>(y);
    e.p = static_cast<std::int8_t>(p);
    stream.events.push_back(e);
  }
  return stream;
}

inline std::string write_event_file(const EventStream& stream) {
  validate(stream);
  std::string out = std::to_string(stream.width) + "," + std::to_string(stream.height) + "\nt_us,x,y,p\n";
  out.reserve(out.size() + stream.events.size() * 20);
  for (const auto& e : stream.events) {
    out += std::to_string(e.t);
    out += ',';
    out += std::to_string(e.x);
    out += ',';
    out += std::to_string(e.y);
    out += ',';
    out += e.p > 0 ? "1" : "-1";
    out += '\n';
  }
  return out;
}

// Row-major H x W intensity image sampled at t_us.
struct IntensityFrame {
  std::uint64_t t_us = 0;
  std::vector<double> values;
};

struct IntensityVideo {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<IntensityFrame> frames;
};

// Ideal event sensor with a per-pixel log-intensity reference. A change of
// n*C (n >= 1) against the reference emits n events and advances the
// reference by n*C; timestamps are interpolated on the linear log-intensity
// path between the two frames.
inline EventStream simulate_events(const IntensityVideo& video, double contrast) {
  if (!(contrast > 0.0)) throw std::invalid_argument("simulate_events: contrast threshold must be positive");
  const std::size_t npix = static_cast<std::size_t>(video.width) * video.height;
  if (video.width > 65536 || video.height > 65536) throw EventGeometryError("simulate_events: sensor too large");
  for (std::size_t f = 0; f < video.frames.size(); ++f) {
    const auto& fr = video.frames[f];
    if (fr.values.size() != npix) throw DimensionError("simulate_events: frame " + std::to_string(f) + " size mismatch");
    if (f > 0 && fr.t_us <= video.frames[f - 1].t_us)
      throw EventOrderError("simulate_events: frame timestamps must be strictly increasing");
    for (double v : fr.values)
      if (!(v > 0.0)) throw std::invalid_argument("simulate_events: intensities must be positive");
  }
  EventStream stream{video.width, video.height, {}};
  if (video.frames.empty()) return stream;

  std::vector<double> ref(npix), prev(npix);
  for (std::size_t i = 0; i < npix; ++i) ref[i] = prev[i] = std::log(video.frames[0].values[i]);
  constexpr double kTol = 1e-9;  // exact multiples of C still fire
  for (std::size_t f = 1; f < video.frames.size(); ++f) {
    const auto t0 = video.frames[f - 1].t_us, t1 = video.frames[f].t_us;
    const double span = static_cast<double>(t1 - t0);
    for (std::size_t i = 0; i < npix; ++i) {
      const double cur = std::log(video.frames[f].values[i]);
      const double delta = cur - ref[i];
      const auto n = static_cast<std::uint64_t>(std::floor(std::abs(delta) / contrast + kTol));
      const double sign = delta >= 0.0 ? 1.0 : -1.0;
      for (std::uint64_t j = 1; j <= n; ++j) {
        const double level = ref[i] + sign * contrast * static_cast<double>(j);
        double tau = cur != prev[i] ? (level - prev[i]) / (cur - prev[i]) : 1.0;
        tau = std::clamp(tau, 0.0, 1.0);
        EventRecord e;
        e.x = static_cast<std::uint16_t>(i % video.width);
        e.y = static_cast<std::uint16_t>(i / video.width);
        e.t = t0 + static_cast<std::uint64_t>(std::llround(tau * span));
        e.p = sign > 0 ? 1 : -1;
        stream.events.push_back(e);
      }
      ref[i] += sign * contrast * static_cast<double>(n);
      prev[i] = cur;
    }
  }
  std::stable_sort(stream.events.begin(), stream.events.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.t < b.t; });
  return stream;
}

// Per-polarity event counts over the half-open window [t_start, t_end).
struct PolarityMaps {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint64_t t_start = 0;
  std::uint64_t t_end = 0;
  std::vector<std::uint32_t> pos;  // row-major H x W
  std::vector<std::uint32_t> neg;

  bool operator==(const PolarityMaps&) const = default;
};

inline PolarityMaps accumulate_window(const EventStream& stream, std::uint64_t t_start, std::uint64_t delta_t) {
  if (delta_t == 0) throw std::invalid_argument("accumulate_window: delta_t must be positive");
  PolarityMaps maps;
  maps.width = stream.width;
  maps.height = stream.height;
  maps.t_start = t_start;
  maps.t_end = t_start + delta_t;
  const std::size_t npix = static_cast<std::size_t>(stream.width) * stream.height;
  maps.pos.assign(npix, 0);
  maps.neg.assign(npix, 0);
  for (const auto& e : stream.events) {
    if (e.t < maps.t_start || e.t >= maps.t_end) continue;
    if (e.x >= stream.width || e.y >= stream.height) throw EventGeometryError("accumulate_window: event outside sensor");
    const std::size_t idx = static_cast<std::size_t>(e.y) * stream.width + e.x;
    (e.p > 0 ? maps.pos : maps.neg)[idx] += 1;
  }
  return maps;
}

// H x W x 3 image, channel-last, values in [-1, 1].
struct Frame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  double at(std::size_t y, std::size_t x, std::size_t c) const { return values[(y * width + x) * 3 + c]; }
};

namespace detail {

// Counts scaled by the frame maximum into [0, 1]; positive -> channel 0, negative -> channel 2.
inline Frame normalized_counts(const PolarityMaps& maps) {
  Frame f{maps.height, maps.width, std::vector<double>(maps.pos.size() * 3, 0.0)};
  std::uint32_t peak = 0;
  for (auto v : maps.pos) peak = std::max(peak, v);
  for (auto v : maps.neg) peak = std::max(peak, v);
  if (peak == 0) return f;
  const double inv = 1.0 / static_cast<double>(peak);
  for (std::size_t i = 0; i < maps.pos.size(); ++i) {
    f.values[i * 3 + 0] = static_cast<double>(maps.pos[i]) * inv;
    f.values[i * 3 + 2] = static_cast<double>(maps.neg[i]) * inv;
  }
  return f;
}

inline void to_signed_range(Frame& f) {
  for (auto& v : f.values) v = 2.0 * v - 1.0;
}

}  // namespace detail

inline Frame render_frame(const PolarityMaps& maps) {
  Frame f = detail::normalized_counts(maps);
  detail::to_signed_range(f);
  return f;
}

// Bilinear resampling with pixel-center alignment and edge clamping.
inline Frame resize_bilinear(const Frame& src, std::size_t out_h, std::size_t out_w) {
  if (src.height == 0 || src.width == 0) throw DimensionError("resize_bilinear: empty frame");
  Frame dst{out_h, out_w, std::vector<double>(out_h * out_w * 3)};
  const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
  auto axis = [](double pos, std::size_t n, std::size_t& i0, std::size_t& i1, double& frac) {
    pos = std::clamp(pos, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::size_t>(std::floor(pos));
    i1 = std::min(i0 + 1, n - 1);
    frac = pos - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    axis((static_cast<double>(y) + 0.5) * sy - 0.5, src.height, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      axis((static_cast<double>(x) + 0.5) * sx - 0.5, src.width, x0, x1, fx);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = src.at(y0, x0, c) * (1.0 - fx) + src.at(y0, x1, c) * fx;
        const double bot = src.at(y1, x0, c) * (1.0 - fx) + src.at(y1, x1, c) * fx;
        dst.values[(y * out_w + x) * 3 + c] = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return dst;
}

struct EventFrameSequence {
  std::vector<Frame> frames;
  std::uint64_t delta_t_us = 0;

  // [F, H, W, 3]
  Tensor to_tensor() const {
    if (frames.empty()) return Tensor::zeros({0, 0, 0, 3});
    std::vector<double> data;
    data.reserve(frames.size() * frames[0].values.size());
    for (const auto& f : frames) data.insert(data.end(), f.values.begin(), f.values.end());
    return Tensor::from({frames.size(), frames[0].height, frames[0].width, 3}, std::move(data));
  }

  static EventFrameSequence from_tensor(const Tensor& t, std::uint64_t delta_t_us) {
    if (t.rank() != 4 || t.dim(3) != 3) throw DimensionError("frames tensor must be [F,H,W,3], got " + shape_str(t.shape()));
    EventFrameSequence seq;
    seq.delta_t_us = delta_t_us;
    const std::size_t per = t.dim(1) * t.dim(2) * 3;
    for (std::size_t f = 0; f < t.dim(0); ++f)
      seq.frames.push_back(Frame{t.dim(1), t.dim(2),
                                 std::vector<double>(t.values().begin() + f * per, t.values().begin() + (f + 1) * per)});
    return seq;
  }
};

// F consecutive windows of length delta_t from t_start, each rendered and
// resized to target_hw x target_hw.
inline EventFrameSequence build_sequence(const EventStream& stream, std::uint64_t t_start, std::size_t num_frames,
                                         std::uint64_t delta_t, std::size_t target_hw) {
  if (num_frames == 0) throw std::invalid_argument("build_sequence: need at least one frame");
  if (target_hw == 0) throw std::invalid_argument("build_sequence: target size must be positive");
  EventFrameSequence seq;
  seq.delta_t_us = delta_t;
  for (std::size_t f = 0; f < num_frames; ++f) {
    const auto maps = accumulate_window(stream, t_start + f * delta_t, delta_t);
    Frame frame = resize_bilinear(detail::normalized_counts(maps), target_hw, target_hw);
    detail::to_signed_range(frame);
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

}  // namespace eventface::events
