#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eventface/checkpoint.hpp"
#include "eventface/ops.hpp"
#include "eventface/tensor.hpp"

namespace eventface::backbone {

struct BackboneConfig {
  std::vector<std::size_t> stage_channels{8, 16, 32};
  std::size_t blocks_per_stage = 2;
  std::size_t input_hw = 16;
  std::size_t embed_dim = 32;
  std::size_t lora_rank = 6;
  // Conv layer names that receive adapters; empty means every 3x3 conv whose
  // input width exceeds the rank.
  std::vector<std::string> lora_layers;

  void validate() const {
    if (stage_channels.size() < 2) throw std::invalid_argument("BackboneConfig: need at least 2 stages");
    for (auto c : stage_channels)
      if (c == 0 || c % 8 != 0)
        throw std::invalid_argument("BackboneConfig: stage channels must be positive multiples of 8, got " + std::to_string(c));
    if (blocks_per_stage == 0) throw std::invalid_argument("BackboneConfig: blocks_per_stage must be >= 1");
    if (embed_dim == 0) throw std::invalid_argument("BackboneConfig: embed_dim must be >= 1");
    if (lora_rank == 0) throw std::invalid_argument("BackboneConfig: lora_rank must be >= 1");
    std::size_t hw = input_hw;
    for (std::size_t s = 0; s < stage_channels.size(); ++s) hw = (hw + 1) / 2;
    if (input_hw == 0 || hw == 0) throw std::invalid_argument("BackboneConfig: input too small for stage count");
  }

  std::size_t stage_hw(std::size_t stage) const {
    std::size_t hw = input_hw;
    for (std::size_t s = 0; s <= stage; ++s) hw = (hw - 1) / 2 + 1;  // 3x3, stride 2, pad 1
    return hw;
  }
};

// Frozen base weight plus trainable low-rank factors:
//   forward(x) = w0 * x + w_b * (w_a * x)
struct LoraConvLayer {
  Tensor w0;   // [C_out, C_in, k, k]
  Tensor w_a;  // [r, C_in, k, k]
  Tensor w_b;  // [C_out, r, 1, 1]
  std::size_t rank = 0;

  static LoraConvLayer attach(const Tensor& w0, std::size_t rank, Rng& rng, double a_std = 0.02) {
    const std::size_t cout = w0.dim(0), cin = w0.dim(1), k = w0.dim(2);
    if (rank == 0 || rank >= cin)
      throw std::invalid_argument("LoraConvLayer: rank " + std::to_string(rank) + " must be below C_in " + std::to_string(cin));
    LoraConvLayer l;
    l.w0 = w0;
    l.w0.set_requires_grad(false);
    l.w_a = Tensor::randn({rank, cin, k, k}, rng, a_std, true);
    l.w_b = Tensor::zeros({cout, rank, 1, 1}, true);
    l.rank = rank;
    return l;
  }

  std::size_t adapter_parameter_count() const { return w_a.numel() + w_b.numel(); }
};

inline Tensor lora_forward(const Tensor& x, const LoraConvLayer& layer, std::size_t stride, std::size_t padding) {
  if (layer.w_a.dim(0) != layer.w_b.dim(1) || layer.w_b.dim(0) != layer.w0.dim(0) || layer.w_a.dim(1) != layer.w0.dim(1) ||
      layer.w_a.dim(2) != layer.w0.dim(2))
    throw DimensionError("lora_forward: adapter shapes " + shape_str(layer.w_a.shape()) + "/" +
                         shape_str(layer.w_b.shape()) + " inconsistent with base " + shape_str(layer.w0.shape()));
  const Tensor base = ops::conv2d(x, layer.w0, stride, padding);
  const Tensor low = ops::conv2d(x, layer.w_a, stride, padding);
  return ops::add(base, ops::conv2d(low, layer.w_b, 1, 0));
}

// w0'[o,i,u,v] = w0[o,i,u,v] + sum_r w_b[o,r] * w_a[r,i,u,v]
inline Tensor lora_merge(const LoraConvLayer& layer) {
  const std::size_t cout = layer.w0.dim(0), cin = layer.w0.dim(1), k = layer.w0.dim(2), r = layer.w_a.dim(0);
  const std::size_t per_out = cin * k * k;
  std::vector<double> merged(layer.w0.values());
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t rr = 0; rr < r; ++rr) {
      const double b = layer.w_b[o * r + rr];
      if (b == 0.0) continue;
      for (std::size_t j = 0; j < per_out; ++j) merged[o * per_out + j] += b * layer.w_a[rr * per_out + j];
    }
  return Tensor::from(layer.w0.shape(), std::move(merged));
}

enum class Mode { Plain, Lora };
enum class TrainStage { Pretrain, Stage1, Stage2 };

struct ConvSlot {
  std::string name;
  Tensor weight;  // w0 (plain or merged)
  std::size_t stride = 1;
  std::size_t padding = 1;
  std::optional<LoraConvLayer> lora;
};

struct StageOutput {
  Tensor features;  // [F, C, H, W]
};

// Multi-stage conv backbone: each stage is `blocks_per_stage` 3x3 convs with
// ReLU, the first one strided by 2. A global-average-pool + linear head maps
// the last stage to embed_dim.
class Backbone {
 public:
  Backbone() = default;

  static Backbone init(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    Backbone b;
    b.cfg_ = cfg;
    std::size_t cin = 3;
    for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
      std::vector<ConvSlot> stage;
      for (std::size_t blk = 0; blk < cfg.blocks_per_stage; ++blk) {
        const std::size_t cout = cfg.stage_channels[s];
        ConvSlot slot;
        slot.name = "s" + std::to_string(s) + ".c" + std::to_string(blk);
        slot.weight = Tensor::randn({cout, cin, 3, 3}, rng, std::sqrt(2.0 / static_cast<double>(cin * 9)));
        slot.stride = blk == 0 ? 2 : 1;
        stage.push_back(std::move(slot));
        cin = cout;
      }
      b.stages_.push_back(std::move(stage));
    }
    b.embed_ = Tensor::randn({cin, cfg.embed_dim}, rng, std::sqrt(1.0 / static_cast<double>(cin)));
    return b;
  }

  const BackboneConfig& config() const { return cfg_; }
  std::size_t num_stages() const { return stages_.size(); }
  std::vector<ConvSlot>& stage(std::size_t s) { return stages_.at(s); }
  const std::vector<ConvSlot>& stage(std::size_t s) const { return stages_.at(s); }
  Tensor& embed_weight() { return embed_; }
  const Tensor& embed_weight() const { return embed_; }

  std::vector<ConvSlot*> slots() {
    std::vector<ConvSlot*> out;
    for (auto& st : stages_)
      for (auto& slot : st) out.push_back(&slot);
    return out;
  }
  std::vector<const ConvSlot*> slots() const {
    std::vector<const ConvSlot*> out;
    for (const auto& st : stages_)
      for (const auto& slot : st) out.push_back(&slot);
    return out;
  }

  bool has_adapters() const {
    for (const auto* s : slots())
      if (s->lora) return true;
    return false;
  }

  // Layers selected for adaptation under the current config.
  std::vector<std::string> lora_targets() const {
    std::vector<std::string> out;
    for (const auto* s : slots()) {
      const bool listed = cfg_.lora_layers.empty()
                              ? s->weight.dim(1) > cfg_.lora_rank
                              : std::find(cfg_.lora_layers.begin(), cfg_.lora_layers.end(), s->name) != cfg_.lora_layers.end();
      if (listed && s->weight.dim(2) == 3) out.push_back(s->name);
    }
    return out;
  }

  void attach_adapters(Rng& rng) {
    const auto targets = lora_targets();
    for (auto* s : slots())
      if (std::find(targets.begin(), targets.end(), s->name) != targets.end())
        s->lora = LoraConvLayer::attach(s->weight, cfg_.lora_rank, rng);
  }

  // Folds every adapter into its base weight and drops the adapters.
  void merge_adapters() {
    for (auto* s : slots()) {
      if (!s->lora) continue;
      s->weight = lora_merge(*s->lora);
      s->lora.reset();
    }
  }

  // Sets requires_grad flags for the given training stage and returns the
  // backbone tensors that are trainable in it.
  std::vector<Tensor> set_stage(TrainStage stage) {
    std::vector<Tensor> trainable;
    const bool full = stage == TrainStage::Pretrain;
    for (auto* s : slots()) {
      s->weight.set_requires_grad(full);
      if (full) trainable.push_back(s->weight);
      if (s->lora) {
        const bool on = stage == TrainStage::Stage1;
        s->lora->w0 = s->weight;
        s->lora->w_a.set_requires_grad(on);
        s->lora->w_b.set_requires_grad(on);
        if (on) {
          trainable.push_back(s->lora->w_a);
          trainable.push_back(s->lora->w_b);
        }
      }
    }
    embed_.set_requires_grad(full);
    if (full) trainable.push_back(embed_);
    return trainable;
  }

  // x: [F, C, H, W] -> [F, C_s, H', W']
  Tensor stage_forward(std::size_t s, Tensor x, Mode mode) const {
    for (const auto& slot : stages_.at(s)) {
      if (mode == Mode::Lora && slot.lora) {
        x = lora_forward(x, *slot.lora, slot.stride, slot.padding);
      } else {
        x = ops::conv2d(x, slot.weight, slot.stride, slot.padding);
      }
      x = ops::relu(x);
    }
    return x;
  }

  // [F, C, H, W] -> [F, embed_dim]
  Tensor head(const Tensor& features) const { return ops::linear(ops::global_avg_pool(features), embed_); }

  // frames: [F, H, W, 3]. Returns per-stage features and per-frame embeddings.
  std::pair<std::vector<Tensor>, Tensor> forward(const Tensor& frames, Mode mode) const {
    Tensor x = to_nchw(frames);
    std::vector<Tensor> outs;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      x = stage_forward(s, x, mode);
      outs.push_back(x);
    }
    return {outs, head(x)};
  }

  Tensor to_nchw(const Tensor& frames) const {
    if (frames.rank() != 4 || frames.dim(3) != 3 || frames.dim(1) != cfg_.input_hw || frames.dim(2) != cfg_.input_hw)
      throw DimensionError("backbone: frames must be [F," + std::to_string(cfg_.input_hw) + "," +
                           std::to_string(cfg_.input_hw) + ",3], got " + shape_str(frames.shape()));
    return ops::permute(frames, {0, 3, 1, 2});
  }

  std::size_t adapter_parameter_count() const {
    std::size_t n = 0;
    for (const auto* s : slots())
      if (s->lora) n += s->lora->adapter_parameter_count();
    return n;
  }

  void save(Checkpoint& ck) const {
    for (const auto* s : slots()) {
      ck.put("backbone." + s->name + ".weight", s->weight);
      if (s->lora) {
        ck.put("lora." + s->name + ".A", s->lora->w_a);
        ck.put("lora." + s->name + ".B", s->lora->w_b);
      }
    }
    ck.put("backbone.embed.weight", embed_);
  }

  void load(const Checkpoint& ck) {
    auto copy_into = [&](Tensor& dst, const std::string& key) {
      const Tensor& src = ck.get(key);
      if (src.shape() != dst.shape())
        throw CheckpointError("checkpoint: entry '" + key + "' has shape " + shape_str(src.shape()) + ", expected " +
                              shape_str(dst.shape()));
      std::copy(src.values().begin(), src.values().end(), dst.data().begin());
    };
    for (auto* s : slots()) {
      copy_into(s->weight, "backbone." + s->name + ".weight");
      const std::string a = "lora." + s->name + ".A", b = "lora." + s->name + ".B";
      if (ck.contains(a)) {
        if (!s->lora) {
          LoraConvLayer l;
          l.w0 = s->weight;
          l.w_a = ck.get(a).detach();
          l.w_b = ck.get(b).detach();
          l.rank = l.w_a.dim(0);
          s->lora = std::move(l);
        } else {
          copy_into(s->lora->w_a, a);
          copy_into(s->lora->w_b, b);
        }
      } else {
        s->lora.reset();
      }
    }
    copy_into(embed_, "backbone.embed.weight");
  }

 private:
  BackboneConfig cfg_;
  std::vector<std::vector<ConvSlot>> stages_;
  Tensor embed_;
};

}  // namespace eventface::backbone
