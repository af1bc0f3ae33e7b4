#include <gtest/gtest.h>

#include <cmath>

#include "eventface/backbone.hpp"
#include "eventface/testing/oracles.hpp"
#include "eventface/training.hpp"

using namespace eventface;
using namespace eventface::backbone;
namespace oracle = eventface::testing;

namespace {

LoraConvLayer trained_layer(Rng& rng, std::size_t cout, std::size_t cin, std::size_t rank) {
  auto l = LoraConvLayer::attach(Tensor::randn({cout, cin, 3, 3}, rng), rank, rng);
  for (auto& v : l.w_b.data()) v = std::normal_distribution<double>(0.0, 0.5)(rng);
  return l;
}

}  // namespace

TEST(Lora, FreshAdapterIsIdentity) {
  Rng rng(61);
  const auto l = LoraConvLayer::attach(Tensor::randn({8, 8, 3, 3}, rng), 6, rng);
  const Tensor x = Tensor::randn({1, 8, 5, 5}, rng);
  EXPECT_EQ(lora_forward(x, l, 1, 1).values(), ops::conv2d(x, l.w0, 1, 1).values());
}

TEST(Lora, MergeMatchesAdapterForward) {
  Rng rng(62);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t cin = 7 + rng() % 10, cout = 1 + rng() % 12, stride = 1 + rng() % 2;
    const auto l = trained_layer(rng, cout, cin, 6);
    const Tensor x = Tensor::randn({2, cin, 6, 5}, rng);
    const Tensor a = ops::conv2d(x, lora_merge(l), stride, 1), b = lora_forward(x, l, stride, 1);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
  }
}

TEST(Lora, RankMustBeBelowInputWidth) {
  Rng rng(63);
  EXPECT_THROW(LoraConvLayer::attach(Tensor::randn({8, 3, 3, 3}, rng), 6, rng), std::invalid_argument);
}

TEST(Lora, GradientsReachOnlyAdapters) {
  Rng rng(64);
  auto l = trained_layer(rng, 4, 8, 6);
  const Tensor x = Tensor::randn({1, 8, 4, 4}, rng);
  Tensor pw = Tensor::randn({1, 4, 4, 4}, rng);
  auto f = [&](const std::vector<Tensor>&) { return oracle::weighted_sum(lora_forward(x, l, 1, 1), pw); };
  EXPECT_LE(oracle::gradcheck(f, {l.w_a, l.w_b}), 1e-4);
  l.w0.set_requires_grad(false);
  backward(f({}));
  EXPECT_FALSE(l.w0.has_grad());
}

TEST(Backbone, StageShapesAndTargets) {
  Rng rng(65);
  const auto b = Backbone::init(BackboneConfig{}, rng);
  const auto [feats, emb] = b.forward(Tensor::randn({4, 16, 16, 3}, rng), Mode::Plain);
  ASSERT_EQ(feats.size(), 3u);
  EXPECT_EQ(feats[0].shape(), (Shape{4, 8, 8, 8}));
  EXPECT_EQ(feats[1].shape(), (Shape{4, 16, 4, 4}));
  EXPECT_EQ(feats[2].shape(), (Shape{4, 32, 2, 2}));
  EXPECT_EQ(emb.shape(), (Shape{4, 32}));
  const auto targets = b.lora_targets();
  EXPECT_EQ(targets.size(), 5u);
  EXPECT_EQ(std::find(targets.begin(), targets.end(), "s0.c0"), targets.end());
  EXPECT_THROW(b.forward(Tensor::randn({4, 12, 12, 3}, rng), Mode::Plain), DimensionError);
}

TEST(Backbone, AdapterParameterCountFromConfig) {
  Rng rng(66);
  auto b = Backbone::init(BackboneConfig{}, rng);
  b.attach_adapters(rng);
  std::size_t expected = 0;
  for (const auto* s : b.slots())
    if (s->lora) expected += 6 * s->weight.dim(1) * 9 + s->weight.dim(0) * 6;
  // s0.c1: 8->8, s1.c0: 8->16, s1.c1: 16->16, s2.c0: 16->32, s2.c1: 32->32
  EXPECT_EQ(expected, 6 * 9 * (8 + 8 + 16 + 16 + 32) + 6 * (8 + 16 + 16 + 32 + 32));
  const auto trainable = b.set_stage(TrainStage::Stage1);
  std::size_t count = 0;
  for (const auto& t : trainable) count += t.numel();
  EXPECT_EQ(count, expected);
  EXPECT_EQ(b.adapter_parameter_count(), expected);
}

TEST(Backbone, MergedPlainEqualsLoraForward) {
  Rng rng(67);
  auto b = Backbone::init(BackboneConfig{}, rng);
  b.attach_adapters(rng);
  for (auto* s : b.slots())
    if (s->lora)
      for (auto& v : s->lora->w_b.data()) v = std::normal_distribution<double>(0.0, 0.3)(rng);
  const Tensor frames = Tensor::uniform({2, 16, 16, 3}, rng, -1.0, 1.0);
  const Tensor before = b.forward(frames, Mode::Lora).second;
  b.merge_adapters();
  EXPECT_FALSE(b.has_adapters());
  const Tensor after = b.forward(frames, Mode::Plain).second;
  for (std::size_t i = 0; i < before.numel(); ++i) EXPECT_NEAR(before[i], after[i], 1e-10);
}

TEST(Backbone, FrozenWeightsUnchangedByOptimizerStep) {
  Rng rng(68);
  auto b = Backbone::init(BackboneConfig{}, rng);
  b.attach_adapters(rng);
  auto trainable = b.set_stage(TrainStage::Stage1);
  std::vector<std::vector<double>> frozen;
  for (const auto* s : b.slots()) frozen.push_back(s->weight.values());
  const auto embed = b.embed_weight().values();
  const Tensor out = b.forward(Tensor::uniform({2, 16, 16, 3}, rng, -1, 1), Mode::Lora).second;
  backward(ops::sum(ops::mul(out, out)));
  training::sgd_step(trainable, 0.1);
  std::size_t i = 0;
  for (const auto* s : b.slots()) {
    EXPECT_EQ(s->weight.values(), frozen[i++]);
    EXPECT_FALSE(s->weight.has_grad());
  }
  EXPECT_EQ(b.embed_weight().values(), embed);
}

TEST(Backbone, CheckpointRoundTripWithAdapters) {
  Rng rng(69);
  auto b = Backbone::init(BackboneConfig{}, rng);
  b.attach_adapters(rng);
  Checkpoint ck;
  b.save(ck);
  EXPECT_TRUE(ck.has_prefix("lora."));
  Rng other(70);
  auto c = Backbone::init(BackboneConfig{}, other);
  c.load(ck);
  EXPECT_TRUE(c.has_adapters());
  const Tensor frames = Tensor::uniform({1, 16, 16, 3}, rng, -1, 1);
  EXPECT_EQ(b.forward(frames, Mode::Lora).second.values(), c.forward(frames, Mode::Lora).second.values());
}
