#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eventface/ops.hpp"
#include "eventface/tensor.hpp"

// Motion prompt encoder: differences of large- and small-kernel depthwise
// responses between adjacent frames, fused across pairs by a 1x1 convolution.
namespace eventface::motion {

class InsufficientFramesError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MpeParams {
  Tensor reduce;        // [C_r, C, 1, 1]
  Tensor dw_large;      // [C_r, 1, k_L, k_L]
  Tensor dw_small;      // [C_r, 1, k_S, k_S]
  Tensor temporal_agg;  // [(F-1)*C, (F-1)*C_r, 1, 1]

  std::size_t channels() const { return reduce.dim(1); }
  std::size_t reduced() const { return reduce.dim(0); }
  std::size_t pairs() const { return temporal_agg.dim(1) / reduced(); }

  std::vector<std::pair<std::string, Tensor>> named() const {
    return {{"reduce", reduce}, {"dw_large", dw_large}, {"dw_small", dw_small}, {"temporal_agg", temporal_agg}};
  }

  void set_trainable(bool flag) {
    for (auto& [name, t] : named()) t.set_requires_grad(flag);
  }

  void validate() const {
    const std::size_t kl = dw_large.dim(2), ks = dw_small.dim(2);
    if (!(kl > ks) || kl % 2 == 0 || ks % 2 == 0)
      throw std::invalid_argument("MpeParams: need odd kernels with large > small, got " + std::to_string(kl) + "/" +
                                  std::to_string(ks));
    if (reduced() > channels()) throw std::invalid_argument("MpeParams: reduced channels exceed input channels");
  }

  // Reduction C_r = C/2; He-style init for the 1x1 convs, box-like
  // depthwise kernels plus noise.
  static MpeParams init(std::size_t channels, std::size_t frames, std::size_t k_large, std::size_t k_small, Rng& rng) {
    if (frames < 2) throw InsufficientFramesError("MpeParams: need at least 2 frames");
    const std::size_t cr = std::max<std::size_t>(channels / 2, 1), pairs = frames - 1;
    MpeParams p;
    p.reduce = Tensor::randn({cr, channels, 1, 1}, rng, std::sqrt(1.0 / static_cast<double>(channels)));
    auto box = [&](std::size_t k) {
      Tensor t = Tensor::randn({cr, 1, k, k}, rng, 0.1 / static_cast<double>(k));
      for (auto& v : t.data()) v += 1.0 / static_cast<double>(k * k);
      return t;
    };
    p.dw_large = box(k_large);
    p.dw_small = box(k_small);
    p.temporal_agg =
        Tensor::randn({pairs * channels, pairs * cr, 1, 1}, rng, std::sqrt(1.0 / static_cast<double>(pairs * cr)));
    p.validate();
    return p;
  }
};

// M_f = dw_large(reduce(x_next)) - dw_small(reduce(x_prev)); inputs [N, C, H, W].
inline Tensor mpe_pairwise(const Tensor& x_prev, const Tensor& x_next, const MpeParams& p) {
  if (x_prev.shape() != x_next.shape())
    throw DimensionError("mpe_pairwise: frame shapes " + shape_str(x_prev.shape()) + " and " +
                         shape_str(x_next.shape()) + " differ");
  const Tensor large = ops::depthwise_conv2d(ops::conv2d(x_next, p.reduce, 1, 0), p.dw_large);
  const Tensor small = ops::depthwise_conv2d(ops::conv2d(x_prev, p.reduce, 1, 0), p.dw_small);
  return ops::sub(large, small);
}

// features: [F, C, H, W] stage output for each frame.
// Returns the fused motion prompts, [F-1, C, H, W], one per adjacent pair.
inline Tensor mpe_sequence(const Tensor& features, const MpeParams& p) {
  if (features.rank() != 4) throw DimensionError("mpe_sequence: features must be [F,C,H,W], got " + shape_str(features.shape()));
  const std::size_t frames = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
  if (frames < 2) throw InsufficientFramesError("mpe_sequence: need at least 2 frames, got " + std::to_string(frames));
  if (c != p.channels()) throw DimensionError("mpe_sequence: feature channels (axis 1) do not match parameters");
  const std::size_t pairs = frames - 1;
  if (pairs != p.pairs()) throw DimensionError("mpe_sequence: parameters were built for a different frame count");
  // all pairs at once: frames [0, F-1) as predecessors, [1, F) as successors
  const Tensor motion = mpe_pairwise(ops::slice_rows(features, 0, pairs), ops::slice_rows(features, 1, pairs), p);
  const Tensor stacked = ops::reshape(motion, {1, pairs * p.reduced(), h, w});
  const Tensor fused = ops::conv2d(stacked, p.temporal_agg, 1, 0);
  return ops::reshape(fused, {pairs, c, h, w});
}

}  // namespace eventface::motion
