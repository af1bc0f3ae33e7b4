#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "eventface/adaface.hpp"
#include "eventface/checkpoint.hpp"
#include "eventface/model.hpp"
#include "eventface/ops.hpp"

namespace eventface::training {

struct TrainConfig {
  double lr = 0.05;
  double lr_stage2 = 0.0;  // 0 reuses lr
  std::size_t batch_size = 8;
  std::size_t epochs_stage1 = 5;
  std::size_t epochs_stage2 = 5;
  std::size_t pretrain_epochs = 10;
  double pretrain_lr = 0.05;
  double grad_clip = 5.0;  // global gradient-norm cap per step; 0 disables
  std::uint64_t seed = 7;
  adaface::AdaFaceOptions adaface;
};

struct LabeledSequence {
  std::string sample_id;
  std::size_t label = 0;
  Tensor frames;  // [F, H, W, 3]
};

struct LossRecord {
  std::size_t epoch;
  std::size_t step;
  double loss;
};

struct TrainResult {
  std::vector<LossRecord> log;
};

class StageOrderError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Plain SGD with optional global-norm gradient clipping; clears the
// gradients it consumed. Returns the pre-clip gradient norm.
inline double sgd_step(std::span<Tensor> params, double lr, double max_norm = 0.0) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double factor = max_norm > 0.0 && norm > max_norm ? max_norm / norm : 1.0;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    auto d = p.data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * factor * g[i];
    p.zero_grad();
  }
  return norm;
}

inline std::string loss_log_csv(const TrainResult& r) {
  std::string out = "epoch,step,loss\n";
  char buf[96];
  for (const auto& row : r.log) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g\n", row.epoch, row.step, row.loss);
    out += buf;
  }
  return out;
}

namespace detail {

// Stacks per-sequence embeddings into [B, D].
inline Tensor batch_embeddings(const EventFaceModel& model, const std::vector<const LabeledSequence*>& batch,
                               Pipeline pipeline) {
  Tensor stacked;
  for (const auto* s : batch) {
    const Tensor e = model.forward(s->frames, pipeline);
    const Tensor row = ops::reshape(e, {1, e.numel()});
    stacked = stacked.defined() ? ops::concat_rows(stacked, row) : row;
  }
  return stacked;
}

template <typename Item, typename StepFn>
TrainResult run_epochs(const std::vector<Item>& data, std::size_t epochs, std::size_t batch_size, Rng& rng,
                       StepFn&& step) {
  if (data.empty()) throw std::invalid_argument("training: empty dataset");
  if (batch_size == 0) throw std::invalid_argument("training: batch size must be positive");
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::vector<const Item*> batch;
      for (std::size_t i = start; i < std::min(start + batch_size, order.size()); ++i) batch.push_back(&data[order[i]]);
      result.log.push_back({epoch, global_step++, step(batch)});
    }
  }
  return result;
}

}  // namespace detail

// Mean AdaFace loss over a dataset with the head's statistics held fixed.
inline double dataset_loss(const EventFaceModel& model, adaface::AdaFaceHead& head,
                           const std::vector<LabeledSequence>& data, Pipeline pipeline, std::size_t batch_size = 8) {
  if (data.empty()) throw std::invalid_argument("dataset_loss: empty dataset");
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<const LabeledSequence*> batch;
    std::vector<std::size_t> labels;
    for (std::size_t i = start; i < std::min(start + batch_size, data.size()); ++i) {
      batch.push_back(&data[i]);
      labels.push_back(data[i].label);
    }
    std::vector<Tensor> frozen;
    const Tensor emb = detail::batch_embeddings(model, batch, pipeline).detach();
    total += head.loss(emb, labels, false).item() * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(data.size());
}

// Trains the plain backbone and a throwaway head on single intensity images.
struct ImageItem {
  std::size_t label;
  Tensor frame;  // [1, H, W, 3]
};

inline TrainResult pretrain_backbone(EventFaceModel& model, const std::vector<ImageItem>& images, std::size_t num_ids,
                                     const TrainConfig& cfg) {
  Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  auto head = adaface::AdaFaceHead::init(model.config().backbone.embed_dim, num_ids, rng, cfg.adaface);
  auto params = model.backbone().set_stage(backbone::TrainStage::Pretrain);
  params.push_back(head.weight());
  auto result = detail::run_epochs(images, cfg.pretrain_epochs, cfg.batch_size, rng, [&](const auto& batch) {
    Tensor stacked;
    std::vector<std::size_t> labels;
    for (const auto* item : batch) {
      const Tensor e = model.backbone().forward(item->frame, backbone::Mode::Plain).second;
      stacked = stacked.defined() ? ops::concat_rows(stacked, e) : e;
      labels.push_back(item->label);
    }
    const Tensor loss = head.loss(stacked, labels);
    backward(loss);
    sgd_step(params, cfg.pretrain_lr, cfg.grad_clip);
    head.renormalize();
    return loss.item();
  });
  model.backbone().set_stage(backbone::TrainStage::Stage2);  // freeze everything
  return result;
}

// Stage I: frozen backbone, trainable low-rank adapters + head. Adapters are
// merged into the base weights when training finishes.
inline TrainResult train_stage1(EventFaceModel& model, adaface::AdaFaceHead& head,
                                const std::vector<LabeledSequence>& data, const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("train_stage1: empty dataset");
  Rng rng(cfg.seed ^ 0x51A6E1ULL);
  if (!model.backbone().has_adapters()) model.backbone().attach_adapters(rng);
  model.set_modulators_trainable(false);
  auto params = model.backbone().set_stage(backbone::TrainStage::Stage1);
  params.push_back(head.weight());
  auto result = detail::run_epochs(data, cfg.epochs_stage1, cfg.batch_size, rng, [&](const auto& batch) {
    std::vector<std::size_t> labels;
    for (const auto* s : batch) labels.push_back(s->label);
    const Tensor loss = head.loss(detail::batch_embeddings(model, batch, Pipeline::Spatial), labels);
    backward(loss);
    sgd_step(params, cfg.lr, cfg.grad_clip);
    head.renormalize();
    return loss.item();
  });
  model.backbone().merge_adapters();
  model.backbone().set_stage(backbone::TrainStage::Stage2);
  return result;
}

// Stage II: merged backbone frozen; MPE, STM and head trainable.
inline TrainResult train_stage2(EventFaceModel& model, adaface::AdaFaceHead& head,
                                const std::vector<LabeledSequence>& data, const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("train_stage2: empty dataset");
  if (model.backbone().has_adapters())
    throw StageOrderError("train_stage2: backbone still carries unmerged adapters; finish stage 1 first");
  Rng rng(cfg.seed ^ 0x57A6E2ULL);
  model.backbone().set_stage(backbone::TrainStage::Stage2);
  model.set_modulators_trainable(true);
  auto params = model.modulator_parameters();
  params.push_back(head.weight());
  const double lr = cfg.lr_stage2 > 0.0 ? cfg.lr_stage2 : cfg.lr;
  auto result = detail::run_epochs(data, cfg.epochs_stage2, cfg.batch_size, rng, [&](const auto& batch) {
    std::vector<std::size_t> labels;
    for (const auto* s : batch) labels.push_back(s->label);
    const Tensor loss = head.loss(detail::batch_embeddings(model, batch, Pipeline::Spatiotemporal), labels);
    backward(loss);
    sgd_step(params, lr, cfg.grad_clip);
    head.renormalize();
    return loss.item();
  });
  model.set_modulators_trainable(false);
  return result;
}

inline void save_head(Checkpoint& ck, const adaface::AdaFaceHead& head) {
  ck.put("head.weight", head.weight());
  ck.put("head.norm_stats", Tensor::from({2}, {head.norm_mean(), head.norm_std()}));
}

inline void load_head(const Checkpoint& ck, adaface::AdaFaceHead& head) {
  const Tensor& w = ck.get("head.weight");
  if (w.shape() != head.weight().shape()) throw CheckpointError("checkpoint: head.weight shape mismatch");
  std::copy(w.values().begin(), w.values().end(), head.weight().data().begin());
  const Tensor& st = ck.get("head.norm_stats");
  head.set_norm_stats(st[0], st[1]);
}

}  // namespace eventface::training
