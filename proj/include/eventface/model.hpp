#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "eventface/backbone.hpp"
#include "eventface/checkpoint.hpp"
#include "eventface/motion_prompt.hpp"
#include "eventface/ops.hpp"
#include "eventface/stm.hpp"

namespace eventface {

struct ModelConfig {
  backbone::BackboneConfig backbone;
  std::size_t frames = 4;
  std::size_t mpe_k_large = 7;
  std::size_t mpe_k_small = 3;
  double stm_out_scale = 0.0;  // modulator output projections at init; 0 starts stage 2 from the stage-1 function
  stm::StmOptions stm;
};

// Which part of the network produces the embedding.
enum class Pipeline {
  Spatial,         // backbone per frame, frame-averaged
  Spatiotemporal,  // backbone with MPE + STM after every stage
};

class EventFaceModel {
 public:
  static EventFaceModel init(const ModelConfig& cfg, Rng& rng) {
    if (cfg.frames < 2) throw std::invalid_argument("EventFaceModel: need at least 2 frames");
    EventFaceModel m;
    m.cfg_ = cfg;
    m.backbone_ = backbone::Backbone::init(cfg.backbone, rng);
    for (std::size_t s = 0; s < cfg.backbone.stage_channels.size(); ++s) {
      const std::size_t c = cfg.backbone.stage_channels[s];
      m.mpe_.push_back(motion::MpeParams::init(c, cfg.frames, cfg.mpe_k_large, cfg.mpe_k_small, rng));
      m.stm_.push_back(stm::StmParams::init(c, rng, cfg.stm_out_scale));
    }
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  backbone::Backbone& backbone() { return backbone_; }
  const backbone::Backbone& backbone() const { return backbone_; }
  std::vector<motion::MpeParams>& mpe() { return mpe_; }
  std::vector<stm::StmParams>& stm() { return stm_; }
  const std::vector<stm::StmParams>& stm() const { return stm_; }
  const std::vector<motion::MpeParams>& mpe() const { return mpe_; }

  backbone::Mode backbone_mode() const {
    return backbone_.has_adapters() ? backbone::Mode::Lora : backbone::Mode::Plain;
  }

  // frames: [F, H, W, 3] -> unnormalized embedding [D]
  Tensor forward(const Tensor& frames, Pipeline pipeline) const {
    if (pipeline == Pipeline::Spatial) return ops::mean_rows(backbone_.forward(frames, backbone_mode()).second);
    if (frames.dim(0) != cfg_.frames)
      throw DimensionError("EventFaceModel: expected " + std::to_string(cfg_.frames) + " frames, got " +
                           std::to_string(frames.dim(0)));
    Tensor x = backbone_.to_nchw(frames);
    for (std::size_t s = 0; s < backbone_.num_stages(); ++s) {
      x = backbone_.stage_forward(s, x, backbone_mode());
      x = modulate(s, x);
    }
    return ops::mean_rows(backbone_.head(x));
  }

  // MPE + STM on one stage's [F, C, H, W] features; returns the refined
  // spatial stream in the same layout.
  Tensor modulate(std::size_t s, const Tensor& x) const {
    const std::size_t f = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const Tensor motion = motion::mpe_sequence(x, mpe_.at(s));
    // the first frame has no predecessor; its motion tokens are zero
    const Tensor motion_full = ops::concat_rows(Tensor::zeros({1, c, h, w}), motion);
    const Tensor spatial_tokens = ops::permute(x, {0, 2, 3, 1});
    const Tensor motion_tokens = ops::permute(motion_full, {0, 2, 3, 1});
    auto [ys, ym] = stm::stm_block(spatial_tokens, motion_tokens, stm_.at(s), cfg_.stm);
    (void)f;
    return ops::permute(ys, {0, 3, 1, 2});
  }

  // Unit-norm embedding, computed without recording a tape.
  std::vector<double> extract_embedding(const Tensor& frames, Pipeline pipeline) const {
    const Tensor e = forward(frames.detach(), pipeline);
    std::vector<double> v(e.values());
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n == 0.0) throw std::domain_error("extract_embedding: zero embedding");
    for (auto& x : v) x /= n;
    return v;
  }

  void set_modulators_trainable(bool flag) {
    for (auto& p : mpe_) p.set_trainable(flag);
    for (auto& p : stm_) p.set_trainable(flag);
  }

  std::vector<Tensor> modulator_parameters() {
    std::vector<Tensor> out;
    for (auto& p : mpe_)
      for (auto& [n, t] : p.named()) out.push_back(t);
    for (auto& p : stm_)
      for (auto& [n, t] : p.named()) out.push_back(t);
    return out;
  }

  void save(Checkpoint& ck) const {
    backbone_.save(ck);
    for (std::size_t s = 0; s < mpe_.size(); ++s) {
      for (const auto& [n, t] : mpe_[s].named()) ck.put("mpe." + std::to_string(s) + "." + n, t);
    }
    for (std::size_t s = 0; s < stm_.size(); ++s) {
      for (const auto& [n, t] : stm_[s].named()) ck.put("stm." + std::to_string(s) + "." + n, t);
    }
  }

  // Loads every entry the checkpoint has for this architecture. Modulator
  // entries are optional (a stage-1 checkpoint has none).
  void load(const Checkpoint& ck) {
    backbone_.load(ck);
    auto copy_if_present = [&](Tensor& dst, const std::string& key) {
      if (!ck.contains(key)) return;
      const Tensor& src = ck.get(key);
      if (src.shape() != dst.shape())
        throw CheckpointError("checkpoint: entry '" + key + "' has shape " + shape_str(src.shape()) + ", expected " +
                              shape_str(dst.shape()));
      std::copy(src.values().begin(), src.values().end(), dst.data().begin());
    };
    for (std::size_t s = 0; s < mpe_.size(); ++s)
      for (auto [n, t] : mpe_[s].named()) copy_if_present(t, "mpe." + std::to_string(s) + "." + n);
    for (std::size_t s = 0; s < stm_.size(); ++s)
      for (auto [n, t] : stm_[s].named()) copy_if_present(t, "stm." + std::to_string(s) + "." + n);
  }

 private:
  ModelConfig cfg_;
  backbone::Backbone backbone_;
  std::vector<motion::MpeParams> mpe_;
  std::vector<stm::StmParams> stm_;
};

}  // namespace eventface
