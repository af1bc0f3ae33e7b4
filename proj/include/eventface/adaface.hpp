#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "eventface/ops.hpp"
#include "eventface/tensor.hpp"

// Quality-adaptive margin softmax: the target-class margin depends on the
// feature norm relative to running batch statistics.
namespace eventface::adaface {

struct AdaFaceOptions {
  double margin = 0.5;
  double scale = 32.0;
  double h = 0.333;
  double momentum = 0.01;
  double eps = 1e-3;
};

// Target entries become cos(clip(acos(c) + g_angle, eps, pi - eps)) - g_add;
// other entries pass through. cos: [B, N].
inline Tensor margin_logits(const Tensor& cos, const std::vector<std::size_t>& labels, const std::vector<double>& g_angle,
                            const std::vector<double>& g_add, double eps) {
  if (cos.rank() != 2 || labels.size() != cos.dim(0) || g_angle.size() != labels.size() || g_add.size() != labels.size())
    throw DimensionError("margin_logits: expected [B,N] cosines with B labels/margins, got " + shape_str(cos.shape()));
  const std::size_t b = cos.dim(0), n = cos.dim(1);
  std::vector<double> out(cos.values());
  std::vector<double> deriv(b, 1.0);
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] >= n) throw std::out_of_range("margin_logits: label out of range");
    const std::size_t idx = r * n + labels[r];
    if (g_angle[r] != 0.0) {
      const double c = std::clamp(out[idx], -1.0 + eps, 1.0 - eps);
      const double theta = std::acos(c);
      const double shifted = theta + g_angle[r];
      const double clipped = std::clamp(shifted, eps, std::numbers::pi - eps);
      const bool inside = clipped == shifted && c == out[idx];
      out[idx] = std::cos(clipped);
      // d cos(acos c + g) / dc = sin(acos c + g) / sqrt(1 - c^2)
      deriv[r] = inside ? std::sin(clipped) / std::sqrt(1.0 - c * c) : 0.0;
    }
    out[idx] -= g_add[r];
  }
  auto ci = cos.impl();
  return make_result(cos.shape(), std::move(out), "margin_logits", {cos},
                     [ci, b, n, labels, deriv = std::move(deriv)](const TensorImpl& o) {
                       for (std::size_t i = 0; i < o.grad.size(); ++i) {
                         const std::size_t r = i / n;
                         ci->accumulate(i, i == r * n + labels[r] ? o.grad[i] * deriv[r] : o.grad[i]);
                       }
                       (void)b;
                     });
}

class AdaFaceHead {
 public:
  AdaFaceHead() = default;

  static AdaFaceHead init(std::size_t embed_dim, std::size_t num_ids, Rng& rng, AdaFaceOptions opt = {}) {
    if (!(opt.scale > 0.0) || opt.margin < 0.0 || opt.margin >= 1.0)
      throw std::invalid_argument("AdaFaceHead: need s > 0 and 0 <= m < 1");
    AdaFaceHead head;
    head.opt_ = opt;
    head.weight_ = Tensor::uniform({embed_dim, num_ids}, rng, -1.0, 1.0, true);
    head.renormalize();
    return head;
  }

  Tensor& weight() { return weight_; }
  const Tensor& weight() const { return weight_; }
  const AdaFaceOptions& options() const { return opt_; }
  std::size_t num_ids() const { return weight_.dim(1); }
  double norm_mean() const { return norm_mean_; }
  double norm_std() const { return norm_std_; }
  void set_norm_stats(double mean, double stddev) {
    norm_mean_ = mean;
    norm_std_ = stddev;
  }

  // Projects every class column back onto the unit sphere.
  void renormalize() {
    const std::size_t d = weight_.dim(0), n = weight_.dim(1);
    auto w = weight_.data();
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += w[i * n + j] * w[i * n + j];
      const double inv = 1.0 / std::max(std::sqrt(s), 1e-12);
      for (std::size_t i = 0; i < d; ++i) w[i * n + j] *= inv;
    }
  }

  // Clipped, h-scaled z-score of each embedding norm under the running stats.
  std::vector<double> norm_proxies(const std::vector<double>& norms) const {
    std::vector<double> z(norms.size());
    for (std::size_t i = 0; i < norms.size(); ++i)
      z[i] = std::clamp((norms[i] - norm_mean_) / (norm_std_ + opt_.eps) * opt_.h, -1.0, 1.0);
    return z;
  }

  // Cosine logits [B, N] between normalized embeddings and class centers.
  Tensor cosines(const Tensor& embeddings) const {
    const Tensor unit = ops::l2_normalize_rows(embeddings);
    const Tensor centers = ops::permute(ops::l2_normalize_rows(ops::permute(weight_, {1, 0})), {1, 0});
    return ops::linear(unit, centers);
  }

  // embeddings: [B, D] unnormalized. When update_stats is set the running
  // norm statistics absorb this batch before the margins are computed.
  // `pinned_proxy` overrides the norm proxy for every sample.
  Tensor loss(const Tensor& embeddings, const std::vector<std::size_t>& labels, bool update_stats = true,
              const double* pinned_proxy = nullptr) {
    if (embeddings.rank() != 2 || embeddings.dim(0) == 0) throw std::invalid_argument("adaface_loss: empty batch");
    if (labels.size() != embeddings.dim(0)) throw DimensionError("adaface_loss: label count does not match batch");
    for (auto l : labels)
      if (l >= num_ids()) throw std::out_of_range("adaface_loss: label " + std::to_string(l) + " out of range");
    const std::size_t b = embeddings.dim(0), d = embeddings.dim(1);
    std::vector<double> norms(b);
    for (std::size_t r = 0; r < b; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += embeddings[r * d + k] * embeddings[r * d + k];
      norms[r] = std::clamp(std::sqrt(s), 0.001, 100.0);
    }
    if (update_stats) {
      double mean = 0.0;
      for (double v : norms) mean += v;
      mean /= static_cast<double>(b);
      double var = 0.0;
      for (double v : norms) var += (v - mean) * (v - mean);
      const double stddev = b > 1 ? std::sqrt(var / static_cast<double>(b - 1)) : norm_std_;
      norm_mean_ = opt_.momentum * mean + (1.0 - opt_.momentum) * norm_mean_;
      norm_std_ = opt_.momentum * stddev + (1.0 - opt_.momentum) * norm_std_;
    }
    std::vector<double> z = pinned_proxy ? std::vector<double>(b, *pinned_proxy) : norm_proxies(norms);
    std::vector<double> g_angle(b), g_add(b);
    for (std::size_t r = 0; r < b; ++r) {
      g_angle[r] = -opt_.margin * z[r];
      g_add[r] = opt_.margin * z[r] + opt_.margin;
    }
    const Tensor logits = ops::scale(margin_logits(cosines(embeddings), labels, g_angle, g_add, opt_.eps), opt_.scale);
    return ops::cross_entropy(logits, labels);
  }

 private:
  AdaFaceOptions opt_;
  Tensor weight_;  // [D, num_ids]
  double norm_mean_ = 20.0;
  double norm_std_ = 100.0;
};

}  // namespace eventface::adaface
