#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "eventface/events.hpp"
#include "eventface/testing/oracles.hpp"

using namespace eventface;
using namespace eventface::events;

namespace {

EventStream random_stream(Rng& rng, std::size_t n, std::uint32_t w, std::uint32_t h, std::uint64_t t_max) {
  EventStream s{w, h, {}};
  std::uniform_int_distribution<std::uint32_t> px(0, w - 1), py(0, h - 1);
  std::uniform_int_distribution<std::uint64_t> pt(0, t_max);
  std::bernoulli_distribution pol(0.5);
  for (std::size_t i = 0; i < n; ++i)
    s.events.push_back({static_cast<std::uint16_t>(px(rng)), static_cast<std::uint16_t>(py(rng)), pt(rng),
                        static_cast<std::int8_t>(pol(rng) ? 1 : -1)});
  std::stable_sort(s.events.begin(), s.events.end(), [](auto& a, auto& b) { return a.t < b.t; });
  return s;
}

IntensityVideo two_frame_video(double before, double after) {
  IntensityVideo v;
  v.width = 1;
  v.height = 1;
  v.frames.push_back({0, {before}});
  v.frames.push_back({1000, {after}});
  return v;
}

}  // namespace

TEST(EventFile, RoundTripIsBitIdentical) {
  Rng rng(11);
  const auto s = random_stream(rng, 1000, 40, 30, 1'000'000);
  const auto text = write_event_file(s);
  const auto back = parse_event_file(text);
  ASSERT_EQ(back.events.size(), s.events.size());
  EXPECT_EQ(back.width, 40u);
  EXPECT_EQ(back.height, 30u);
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    EXPECT_EQ(back.events[i].x, s.events[i].x);
    EXPECT_EQ(back.events[i].y, s.events[i].y);
    EXPECT_EQ(back.events[i].t, s.events[i].t);
    EXPECT_EQ(back.events[i].p, s.events[i].p);
  }
  EXPECT_EQ(write_event_file(back), text);
}

TEST(EventFile, RejectsMalformedInput) {
  EXPECT_THROW(parse_event_file("4,4\nt_us,x,y,p\n10,1,1,2\n"), EventParseError);
  EXPECT_THROW(parse_event_file("4,4\nt_us,x,y,p\n10,1,1\n"), EventParseError);
  EXPECT_THROW(parse_event_file("4,4\nt_us,x,y,p\n20,1,1,1\n10,1,1,1\n"), EventOrderError);
  EXPECT_THROW(parse_event_file("4,4\nt_us,x,y,p\n10,4,1,1\n"), EventGeometryError);
}

TEST(EventFile, ParseErrorReportsLine) {
  try {
    parse_event_file("4,4\nt_us,x,y,p\n10,1,1,1\n11,1,x,1\n");
    FAIL();
  } catch (const EventParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
}

TEST(Simulator, StepOfTwoAndAHalfThresholdsEmitsTwoEvents) {
  const double c = 0.2;
  const auto s = simulate_events(two_frame_video(1.0, std::exp(2.5 * c)), c);
  ASSERT_EQ(s.events.size(), 2u);
  for (const auto& e : s.events) EXPECT_EQ(e.p, 1);
}

TEST(Simulator, NegativeStepEmitsNegativeEvents) {
  const double c = 0.25;
  const auto s = simulate_events(two_frame_video(1.0, std::exp(-3.0 * c)), c);
  ASSERT_EQ(s.events.size(), 3u);
  for (const auto& e : s.events) EXPECT_EQ(e.p, -1);
}

TEST(Simulator, SignedCountsReconstructLogChange) {
  Rng rng(12);
  std::normal_distribution<double> step(0.0, 0.3);
  const double c = 0.15;
  IntensityVideo v;
  v.width = 5;
  v.height = 4;
  std::vector<double> logi(20, 0.0);
  for (std::uint64_t t = 0; t <= 20'000; t += 1000) {
    if (t > 0)
      for (auto& l : logi) l += step(rng);
    std::vector<double> frame(20);
    for (std::size_t i = 0; i < 20; ++i) frame[i] = std::exp(logi[i]);
    v.frames.push_back({t, frame});
  }
  const auto s = simulate_events(v, c);
  std::vector<int> net(20, 0);
  for (const auto& e : s.events) net[e.y * 5 + e.x] += e.p;
  for (std::size_t i = 0; i < 20; ++i) EXPECT_LE(std::abs(net[i] * c - logi[i]), c + 1e-12);
  for (std::size_t i = 1; i < s.events.size(); ++i) EXPECT_LE(s.events[i - 1].t, s.events[i].t);
}

TEST(Accumulate, MatchesCountingOracle) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_stream(rng, 500, 17, 9, 100'000);
    const std::uint64_t t0 = rng() % 50'000, dt = 1 + rng() % 50'000;
    EXPECT_EQ(accumulate_window(s, t0, dt), eventface::testing::count_events_direct(s, t0, dt));
  }
}

TEST(Accumulate, WindowIsHalfOpen) {
  EventStream s{2, 1, {{0, 0, 100, 1}, {1, 0, 150, -1}, {0, 0, 200, 1}}};
  const auto m = accumulate_window(s, 100, 100);
  EXPECT_EQ(m.pos[0], 1u);  // t=100 counted, t=200 excluded
  EXPECT_EQ(m.neg[1], 1u);
  const auto next = accumulate_window(s, 200, 100);
  EXPECT_EQ(next.pos[0], 1u);
}

TEST(Render, RangeAndUnusedChannel) {
  Rng rng(14);
  const auto s = random_stream(rng, 300, 8, 6, 1000);
  const auto f = render_frame(accumulate_window(s, 0, 1001));
  double lo = 1, hi = -1;
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      EXPECT_EQ(f.at(y, x, 1), -1.0);
      for (std::size_t c = 0; c < 3; ++c) {
        lo = std::min(lo, f.at(y, x, c));
        hi = std::max(hi, f.at(y, x, c));
      }
    }
  EXPECT_GE(lo, -1.0);
  EXPECT_EQ(hi, 1.0);
}

TEST(Render, EmptyWindowIsAllMinusOne) {
  EventStream s{3, 3, {}};
  for (double v : render_frame(accumulate_window(s, 0, 10)).values) EXPECT_EQ(v, -1.0);
}

TEST(Sequence, ShapeAndReceptiveField) {
  Rng rng(15);
  const auto s = random_stream(rng, 2000, 32, 32, 200'000);
  const auto seq = build_sequence(s, 0, 4, 50'000, 16);
  const Tensor t = seq.to_tensor();
  EXPECT_EQ(t.shape(), (Shape{4, 16, 16, 3}));
  EXPECT_EQ(seq.delta_t_us * seq.frames.size(), 200'000u);
  for (double v : t.values()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Sequence, IdentityResizeKeepsRenderedFrame) {
  Rng rng(16);
  const auto s = random_stream(rng, 400, 12, 12, 10'000);
  const auto seq = build_sequence(s, 0, 1, 10'001, 12);
  EXPECT_EQ(seq.frames[0].values, render_frame(accumulate_window(s, 0, 10'001)).values);
}
