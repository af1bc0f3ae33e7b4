#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "eventface/adaface.hpp"
#include "eventface/backbone.hpp"
#include "eventface/events.hpp"
#include "eventface/metrics.hpp"
#include "eventface/model.hpp"
#include "eventface/motion_prompt.hpp"
#include "eventface/ops.hpp"
#include "eventface/stm.hpp"
#include "eventface/testing/oracles.hpp"
#include "eventface/training.hpp"

// Oracle and invariant suites shared by the `verify` command and the
// acceptance binary. Each suite is deterministic and self-contained.
namespace eventface::testing {

struct SuiteResult {
  std::string name;
  bool passed = true;
  std::size_t checks = 0;
  double worst = 0.0;  // largest observed error, in the suite's own metric
  double tolerance = 0.0;
  double seconds = 0.0;
  std::string detail;
};

struct SuiteOptions {
  bool corrupt_merge = false;  // perturbs one merged weight to prove the merge suite can fail
};

namespace detail {

template <typename Body>
SuiteResult timed(std::string name, double tolerance, Body&& body) {
  SuiteResult r;
  r.name = std::move(name);
  r.tolerance = tolerance;
  const auto start = std::chrono::steady_clock::now();
  body(r);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (r.worst > tolerance) r.passed = false;
  return r;
}

inline void fail(SuiteResult& r, const std::string& why) {
  if (r.passed) r.detail = why;
  r.passed = false;
}

inline std::vector<Tensor> handles(const stm::StmParams& p) {
  std::vector<Tensor> out;
  for (const auto& [n, t] : p.named()) out.push_back(t);
  return out;
}

inline events::EventStream random_stream(Rng& rng, std::size_t n, std::uint32_t w, std::uint32_t h,
                                         std::uint64_t t_max) {
  events::EventStream s{w, h, {}};
  std::uniform_int_distribution<std::uint32_t> px(0, w - 1), py(0, h - 1);
  std::uniform_int_distribution<std::uint64_t> pt(0, t_max);
  std::bernoulli_distribution pol(0.5);
  for (std::size_t i = 0; i < n; ++i)
    s.events.push_back({static_cast<std::uint16_t>(px(rng)), static_cast<std::uint16_t>(py(rng)), pt(rng),
                        static_cast<std::int8_t>(pol(rng) ? 1 : -1)});
  std::stable_sort(s.events.begin(), s.events.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  return s;
}

// Scores on a coarse grid when `ties` is set, so threshold ties are exercised.
inline metrics::ScoreSet random_scores(Rng& rng, std::size_t ng, std::size_t ni, bool ties) {
  std::normal_distribution<double> g(0.6, 0.25), i(0.3, 0.25);
  auto q = [&](double v) { return ties ? std::round(v * 20.0) / 20.0 : v; };
  metrics::ScoreSet s;
  for (std::size_t k = 0; k < ng; ++k) s.genuine.push_back(q(g(rng)));
  for (std::size_t k = 0; k < ni; ++k) s.impostor.push_back(q(i(rng)));
  return s;
}

}  // namespace detail

// Stabilized Bi-WKV (both execution paths) against the unshifted double loop.
inline SuiteResult suite_bi_wkv_oracle(std::size_t instances = 100) {
  return detail::timed("bi_wkv_oracle", 1e-10, [&](SuiteResult& r) {
    Rng rng(0xB1'3C);
    for (std::size_t trial = 0; trial < instances; ++trial) {
      const std::size_t len = 1 + rng() % 64, ch = 1 + rng() % 16;
      const Tensor k = Tensor::randn({len, ch}, rng, 2.0), v = Tensor::randn({len, ch}, rng);
      const Tensor w = Tensor::uniform({ch}, rng, -1.0, 3.0), u = Tensor::randn({ch}, rng);
      const auto ref = bi_wkv_direct(k, v, w, u);
      for (auto path : {stm::WkvPath::Naive, stm::WkvPath::Scan}) {
        const Tensor got = stm::bi_wkv(k, v, w, u, path);
        for (std::size_t i = 0; i < ref.size(); ++i) r.worst = std::max(r.worst, std::abs(got[i] - ref[i]));
        ++r.checks;
      }
    }
    r.detail = std::to_string(instances) + " instances, L<=64, C<=16, naive and scan paths";
  });
}

// Central finite differences on every differentiable operation, five random
// instances each.
inline SuiteResult suite_gradients(std::size_t instances = 5) {
  return detail::timed("gradients", 1e-4, [&](SuiteResult& r) {
    using Fn = std::function<Tensor(const std::vector<Tensor>&)>;
    std::vector<std::pair<std::string, double>> per_op;
    auto check = [&](const std::string& op, const Fn& fn, std::vector<Tensor> inputs, std::size_t max_coords = 0) {
      const double err = gradcheck(fn, std::move(inputs), 1e-5, max_coords);
      ++r.checks;
      r.worst = std::max(r.worst, err);
      auto it = std::find_if(per_op.begin(), per_op.end(), [&](const auto& p) { return p.first == op; });
      if (it == per_op.end()) {
        per_op.push_back({op, err});
      } else {
        it->second = std::max(it->second, err);
      }
      if (err > 1e-4) detail::fail(r, op + " relative error " + std::to_string(err));
    };
    for (std::size_t i = 0; i < instances; ++i) {
      Rng rng(0x6AD0 + i);
      {
        const std::size_t stride = 1 + i % 2;
        Tensor x = Tensor::randn({2, 2, 5, 5}, rng), w = Tensor::randn({3, 2, 3, 3}, rng);
        Tensor pw = Tensor::randn(ops::conv2d(x, w, stride, 1).shape(), rng);
        check("conv2d", [=](const auto& in) { return weighted_sum(ops::conv2d(in[0], in[1], stride, 1), pw); }, {x, w});
      }
      {
        const std::size_t k = i % 2 ? 3 : 5;
        Tensor x = Tensor::randn({2, 3, 5, 4}, rng), w = Tensor::randn({3, 1, k, k}, rng);
        Tensor pw = Tensor::randn(x.shape(), rng);
        check("depthwise_conv2d", [=](const auto& in) { return weighted_sum(ops::depthwise_conv2d(in[0], in[1]), pw); },
              {x, w});
      }
      {
        Tensor x = Tensor::randn({2, 3, 4}, rng), w = Tensor::randn({4, 5}, rng), pw = Tensor::randn({2, 3, 5}, rng);
        check("linear", [=](const auto& in) { return weighted_sum(ops::linear(in[0], in[1]), pw); }, {x, w});
      }
      {
        Tensor x = Tensor::randn({3, 6}, rng), g = Tensor::randn({6}, rng), b = Tensor::randn({6}, rng);
        Tensor pw = Tensor::randn({3, 6}, rng);
        check("layer_norm", [=](const auto& in) { return weighted_sum(ops::layer_norm(in[0], in[1], in[2]), pw); },
              {x, g, b});
      }
      {
        Tensor x = Tensor::randn({4, 5}, rng), pw = Tensor::randn({4, 5}, rng);
        check("sigmoid", [=](const auto& in) { return weighted_sum(ops::sigmoid(in[0]), pw); }, {x});
        check("relu_squared", [=](const auto& in) { return weighted_sum(ops::relu_squared(in[0]), pw); }, {x});
      }
      {
        const std::size_t len = 3 + i * 3;
        Tensor k = Tensor::randn({len, 3}, rng), v = Tensor::randn({len, 3}, rng);
        Tensor w = Tensor::uniform({3}, rng, 0.0, 2.0), u = Tensor::randn({3}, rng), pw = Tensor::randn({len, 3}, rng);
        for (auto path : {stm::WkvPath::Naive, stm::WkvPath::Scan})
          check("bi_wkv", [=](const auto& in) { return weighted_sum(stm::bi_wkv(in[0], in[1], in[2], in[3], path), pw); },
                {k, v, w, u});
      }
      {
        Tensor x = Tensor::randn({2, 3, 3, 8}, rng), pw = Tensor::randn({2, 3, 3, 8}, rng);
        check("octa_shift", [=](const auto& in) { return weighted_sum(stm::octa_shift(in[0], 0.3), pw); }, {x});
      }
      {
        auto p = stm::StmParams::init(8, rng, 1.0);
        Tensor xs = Tensor::randn({2, 4, 4, 8}, rng), xm = Tensor::randn({2, 4, 4, 8}, rng);
        Tensor pws = Tensor::randn(xs.shape(), rng), pwm = Tensor::randn(xs.shape(), rng);
        stm::StmOptions opt;
        opt.wkv.path = i % 2 ? stm::WkvPath::Scan : stm::WkvPath::Naive;
        auto inputs = detail::handles(p);
        inputs.push_back(xs);
        inputs.push_back(xm);
        check("spatial_mix", [=](const auto&) {
          auto [ys, ym] = stm::spatial_mix(xs, xm, p, opt);
          return ops::add(weighted_sum(ys, pws), weighted_sum(ym, pwm));
        }, inputs, 12);
      }
      {
        auto p = stm::StmParams::init(8, rng, 1.0);
        Tensor xs = Tensor::randn({2, 3, 3, 8}, rng), xm = Tensor::randn({2, 3, 3, 8}, rng);
        Tensor pws = Tensor::randn(xs.shape(), rng), pwm = Tensor::randn(xs.shape(), rng);
        check("channel_mix", [=](const auto&) {
          auto [ys, ym] = stm::channel_mix(xs, xm, p);
          return ops::add(weighted_sum(ys, pws), weighted_sum(ym, pwm));
        }, {p.cm_ln_gamma, p.cm_ln_beta, p.cm_w_r, p.cm_w_k, p.cm_w_v, p.cm_w_o, xs, xm}, 16);
      }
      {
        auto p = motion::MpeParams::init(8, 3, 5, 3, rng);
        Tensor feats = Tensor::randn({3, 8, 4, 4}, rng), pw = Tensor::randn({2, 8, 4, 4}, rng);
        std::vector<Tensor> inputs{feats};
        for (const auto& [n, t] : p.named()) inputs.push_back(t);
        check("mpe", [=](const auto&) { return weighted_sum(motion::mpe_sequence(feats, p), pw); }, inputs, 24);
      }
      {
        auto head = adaface::AdaFaceHead::init(6, 4, rng);
        Tensor emb = Tensor::randn({5, 6}, rng, 3.0);
        const std::vector<std::size_t> labels{0, 1, 3, 2, 1};
        const double proxy = -0.6 + 0.3 * static_cast<double>(i);
        check("adaface_loss", [head, labels, proxy](const auto& in) mutable { return head.loss(in[0], labels, false, &proxy); },
              {emb, head.weight()});
      }
    }
    if (r.passed) {
      char buf[64];
      for (const auto& [op, err] : per_op) {
        std::snprintf(buf, sizeof buf, "%s%s %.1e", r.detail.empty() ? "" : ", ", op.c_str(), err);
        r.detail += buf;
      }
    }
  });
}

// Merged weights against the adapter forward on random layers, plus the
// freeze invariant across a real optimizer step in both training stages.
inline SuiteResult suite_lora_merge(const SuiteOptions& opt = {}, std::size_t layers = 50) {
  return detail::timed("lora_merge", 1e-10, [&](SuiteResult& r) {
    Rng rng(0x10BA);
    for (std::size_t trial = 0; trial < layers; ++trial) {
      const std::size_t cin = 7 + rng() % 10, cout = 1 + rng() % 12, stride = 1 + rng() % 2;
      auto layer = backbone::LoraConvLayer::attach(Tensor::randn({cout, cin, 3, 3}, rng), 6, rng);
      for (auto& v : layer.w_b.data()) v = std::normal_distribution<double>(0.0, 0.5)(rng);
      Tensor merged = backbone::lora_merge(layer);
      if (opt.corrupt_merge && trial == 0) merged.data()[0] += 1e-3;
      const Tensor x = Tensor::randn({2, cin, 6, 5}, rng);
      const Tensor a = ops::conv2d(x, merged, stride, 1), b = backbone::lora_forward(x, layer, stride, 1);
      for (std::size_t i = 0; i < a.numel(); ++i) r.worst = std::max(r.worst, std::abs(a[i] - b[i]));
      ++r.checks;
    }

    // Freeze invariant on a small model: one optimizer step per stage.
    ModelConfig mc;
    mc.backbone.stage_channels = {8, 16};
    mc.backbone.input_hw = 8;
    mc.backbone.embed_dim = 8;
    mc.frames = 2;
    mc.stm_out_scale = 0.1;
    auto model = EventFaceModel::init(mc, rng);
    auto head = adaface::AdaFaceHead::init(8, 3, rng);
    std::vector<training::LabeledSequence> data;
    for (std::size_t i = 0; i < 3; ++i) data.push_back({"s" + std::to_string(i), i, Tensor::uniform({2, 8, 8, 3}, rng, -1.0, 1.0)});
    auto snapshot = [&] {
      std::vector<std::vector<double>> w;
      for (const auto* s : model.backbone().slots()) w.emplace_back(s->weight.values());
      w.emplace_back(model.backbone().embed_weight().values());
      return w;
    };
    training::TrainConfig tc;
    tc.epochs_stage1 = 1;
    tc.epochs_stage2 = 1;
    tc.batch_size = 3;
    model.backbone().attach_adapters(rng);
    const auto before1 = snapshot();
    std::vector<std::vector<double>> adapters_before;
    for (const auto* s : model.backbone().slots())
      if (s->lora) {
        adapters_before.emplace_back(s->lora->w_a.values());
        adapters_before.emplace_back(s->lora->w_b.values());
      }
    auto params = model.backbone().set_stage(backbone::TrainStage::Stage1);
    params.push_back(head.weight());
    const Tensor loss = head.loss(training::detail::batch_embeddings(model, {&data[0], &data[1], &data[2]}, Pipeline::Spatial),
                                  {0, 1, 2});
    backward(loss);
    training::sgd_step(params, 0.05);
    ++r.checks;
    if (snapshot() != before1) detail::fail(r, "stage 1 step changed a frozen backbone weight");
    std::vector<std::vector<double>> adapters_after;
    for (const auto* s : model.backbone().slots())
      if (s->lora) {
        adapters_after.emplace_back(s->lora->w_a.values());
        adapters_after.emplace_back(s->lora->w_b.values());
      }
    if (adapters_after == adapters_before) detail::fail(r, "stage 1 step left every adapter unchanged");
    model.backbone().merge_adapters();
    const auto before2 = snapshot();
    training::train_stage2(model, head, data, tc);
    ++r.checks;
    if (snapshot() != before2) detail::fail(r, "stage 2 step changed a backbone weight");
    if (r.passed)
      r.detail = std::to_string(layers) + " layers; frozen weights bit-identical across stage 1 and stage 2 steps";
    if (r.worst > 1e-10) detail::fail(r, "merged conv differs from adapter forward by " + std::to_string(r.worst));
  });
}

// Window accumulation against per-event counting, plus the half-open window.
inline SuiteResult suite_accumulation(std::size_t streams = 100) {
  return detail::timed("accumulation", 0.0, [&](SuiteResult& r) {
    Rng rng(0xACC);
    for (std::size_t trial = 0; trial < streams; ++trial) {
      const auto s = detail::random_stream(rng, 50 + rng() % 800, 1 + rng() % 24, 1 + rng() % 24, 100'000);
      const std::uint64_t t0 = rng() % 60'000, dt = 1 + rng() % 50'000;
      ++r.checks;
      if (!(events::accumulate_window(s, t0, dt) == count_events_direct(s, t0, dt)))
        detail::fail(r, "stream " + std::to_string(trial) + " differs from the counting oracle");
    }
    // events at exactly t_start count, events at t_start + dt belong to the next window
    const events::EventStream edge{2, 1, {{0, 0, 100, 1}, {1, 0, 150, -1}, {0, 0, 200, 1}, {1, 0, 299, -1}}};
    const auto first = events::accumulate_window(edge, 100, 100), second = events::accumulate_window(edge, 200, 100);
    r.checks += 2;
    if (first.pos[0] != 1 || first.neg[1] != 1 || second.pos[0] != 1 || second.neg[1] != 1)
      detail::fail(r, "window boundary is not half-open");
    if (r.passed) r.detail = std::to_string(streams) + " streams exact; half-open boundary verified";
  });
}

// arrange/disarrange round trips, compared bitwise.
inline SuiteResult suite_arrangement(std::size_t instances = 100) {
  return detail::timed("arrangement_inverse", 0.0, [&](SuiteResult& r) {
    Rng rng(0xA77);
    for (std::size_t trial = 0; trial < instances; ++trial) {
      const stm::GridDims g{1 + rng() % 4, 1 + rng() % 6, 1 + rng() % 6, 8};
      const std::size_t ch = 1 + rng() % 5;
      const Tensor s = Tensor::randn({g.tokens(), ch}, rng), m = Tensor::randn({g.tokens(), ch}, rng);
      for (auto scan : {stm::ScanOrder::RowMajor, stm::ScanOrder::ColMajor}) {
        const auto inter = stm::interleave(s, m, g, scan);
        const auto seq = stm::sequential_arrange(s, m, g, scan);
        for (const auto* arr : {&inter, &seq}) {
          auto [s2, m2] = stm::disarrange(arr->tokens, arr->perm);
          ++r.checks;
          if (s2.values() != s.values() || m2.values() != m.values())
            detail::fail(r, "instance " + std::to_string(trial) + " does not round-trip");
        }
      }
    }
    if (r.passed) r.detail = std::to_string(instances) + " instances, both arrangements and scan orders, bitwise";
  });
}

// EER/AUC/TAR@FAR/CMC against exhaustive sweeps, plus monotone invariance.
inline SuiteResult suite_metrics(std::size_t sets = 50) {
  return detail::timed("metric_oracles", 1e-12, [&](SuiteResult& r) {
    Rng rng(0x3E7);
    auto note = [&](double a, double b) {
      r.worst = std::max(r.worst, std::abs(a - b));
      ++r.checks;
    };
    for (std::size_t trial = 0; trial < sets; ++trial) {
      const auto s = detail::random_scores(rng, 5 + trial % 17, 7 + trial % 23, trial % 2 == 0);
      note(metrics::compute_eer(s), eer_direct(s));
      note(metrics::compute_roc_auc(s), auc_pairwise(s));
      for (double far : {1e-3, 1e-2, 0.1, 0.3}) note(metrics::compute_tar_at_far(s, far), tar_at_far_direct(s, far));

      std::normal_distribution<double> n(0.0, 1.0);
      std::vector<metrics::LabeledEmbedding> gallery, probes;
      for (std::size_t i = 0; i < 8; ++i) {
        metrics::LabeledEmbedding e{i % 4, {}}, q{(i * 3 + trial) % 4, {}};
        for (int d = 0; d < 5; ++d) {
          e.values.push_back(std::round(n(rng) * 2) / 2);
          q.values.push_back(std::round(n(rng) * 2) / 2);
        }
        if (e.values == std::vector<double>(5, 0.0)) e.values[0] = 1;
        if (q.values == std::vector<double>(5, 0.0)) q.values[0] = 1;
        gallery.push_back(e);
        probes.push_back(q);
      }
      const auto a = metrics::compute_cmc(gallery, probes, 8), b = cmc_direct(gallery, probes, 8);
      for (std::size_t k = 0; k < 8; ++k) note(a[k], b[k]);

      metrics::ScoreSet t = s;
      for (auto* side : {&t.genuine, &t.impostor})
        for (auto& v : *side) v = std::exp(3.0 * v) - 7.0;
      ++r.checks;
      if (metrics::compute_roc_auc(t) != metrics::compute_roc_auc(s) || metrics::compute_eer(t) != metrics::compute_eer(s))
        detail::fail(r, "set " + std::to_string(trial) + " is not invariant under a monotone transform");
    }
    if (r.passed) r.detail = std::to_string(sets) + " score sets; AUC/EER invariant under exp(3s)-7";
  });
}

inline std::vector<SuiteResult> run_property_suites(const SuiteOptions& opt = {}) {
  return {suite_bi_wkv_oracle(), suite_gradients(), suite_lora_merge(opt), suite_accumulation(), suite_arrangement(),
          suite_metrics()};
}

inline std::string suite_table(const std::vector<SuiteResult>& results) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-20s %-6s %7s %10s %10s %8s\n", "suite", "status", "checks", "worst", "tolerance",
                "seconds");
  out += buf;
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-20s %-6s %7zu %10.2e %10.1e %8.2f  ", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                  r.checks, r.worst, r.tolerance, r.seconds);
    out += buf;
    out += r.detail + "\n";
  }
  return out;
}

}  // namespace eventface::testing
