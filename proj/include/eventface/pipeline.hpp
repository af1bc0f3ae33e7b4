#pragma once

#include <chrono>
#include <cstdio>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "eventface/checkpoint.hpp"
#include "eventface/dataset.hpp"
#include "eventface/metrics.hpp"
#include "eventface/model.hpp"
#include "eventface/training.hpp"

// Encoding, embedding, scoring and the full two-stage run.
namespace eventface::pipeline {

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalReport {
  double eer = 0.0;
  double auc = 0.0;
  double tar_at_far_1e2 = 0.0;
  double tar_at_far_1e3 = 0.0;
  double rank1 = 0.0;
};

inline std::string report_text(const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "eer: %.17g\nauc: %.17g\ntar_at_far_1e2: %.17g\ntar_at_far_1e3: %.17g\nrank1: %.17g\n",
                r.eer, r.auc, r.tar_at_far_1e2, r.tar_at_far_1e3, r.rank1);
  return buf;
}

struct Embedded {
  std::string sample_id;
  std::size_t label;
  std::vector<double> values;
};

inline std::vector<training::LabeledSequence> encode_samples(const std::vector<dataset::Sample>& samples,
                                                             const dataset::SyntheticConfig& cfg) {
  std::vector<training::LabeledSequence> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.sample_id, s.identity, dataset::encode_sample(s, cfg).to_tensor()});
  return out;
}

// Maps arbitrary identity numbers onto dense class indices in first-seen order.
inline std::vector<training::LabeledSequence> relabel_dense(std::vector<training::LabeledSequence> data,
                                                            std::size_t* num_classes = nullptr) {
  std::vector<std::size_t> seen;
  for (auto& d : data) {
    auto it = std::find(seen.begin(), seen.end(), d.label);
    if (it == seen.end()) {
      seen.push_back(d.label);
      it = seen.end() - 1;
    }
    d.label = static_cast<std::size_t>(it - seen.begin());
  }
  if (num_classes) *num_classes = seen.size();
  return data;
}

inline std::vector<Embedded> embed_all(const EventFaceModel& model, const std::vector<training::LabeledSequence>& data,
                                       Pipeline pipeline) {
  std::vector<Embedded> out;
  out.reserve(data.size());
  for (const auto& d : data) out.push_back({d.sample_id, d.label, model.extract_embedding(d.frames, pipeline)});
  return out;
}

// Every unordered pair once, in index order.
inline metrics::ScoreSet all_pair_scores(const std::vector<Embedded>& e) {
  metrics::ScoreSet s;
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = i + 1; j < e.size(); ++j) {
      const double c = metrics::cosine_similarity(e[i].values, e[j].values);
      (e[i].label == e[j].label ? s.genuine : s.impostor).push_back(c);
    }
  return s;
}

// Gallery: first sample of each identity; probes: the rest. In self-gallery
// mode every sample is both gallery and probe.
inline double rank1_accuracy(const std::vector<Embedded>& e, bool self_gallery) {
  std::vector<metrics::LabeledEmbedding> gallery, probes;
  std::set<std::size_t> enrolled;
  for (const auto& x : e) {
    if (self_gallery) {
      gallery.push_back({x.label, x.values});
      probes.push_back({x.label, x.values});
    } else if (enrolled.insert(x.label).second) {
      gallery.push_back({x.label, x.values});
    } else {
      probes.push_back({x.label, x.values});
    }
  }
  if (probes.empty()) throw ProtocolError("rank1: every identity has a single sample; nothing to probe");
  return metrics::compute_cmc(gallery, probes, 1)[0];
}

inline EvalReport evaluate(const std::vector<Embedded>& e, bool self_gallery = false,
                           metrics::ScoreSet* scores_out = nullptr) {
  const auto scores = all_pair_scores(e);
  EvalReport r;
  r.eer = metrics::compute_eer(scores);
  r.auc = metrics::compute_roc_auc(scores);
  r.tar_at_far_1e2 = metrics::compute_tar_at_far(scores, 1e-2);
  r.tar_at_far_1e3 = metrics::compute_tar_at_far(scores, 1e-3);
  r.rank1 = rank1_accuracy(e, self_gallery);
  if (scores_out) *scores_out = scores;
  return r;
}

inline Checkpoint embeddings_checkpoint(const std::vector<Embedded>& e) {
  Checkpoint ck;
  for (const auto& x : e) ck.put("emb." + x.sample_id, Tensor::from({x.values.size()}, x.values));
  return ck;
}

inline void require_disjoint(const std::vector<training::LabeledSequence>& train,
                             const std::vector<training::LabeledSequence>& test) {
  std::set<std::size_t> ids;
  for (const auto& t : train) ids.insert(t.label);
  for (const auto& t : test)
    if (ids.count(t.label))
      throw ProtocolError("identity " + std::to_string(t.label) + " appears in both train and test splits");
}

inline ModelConfig default_model_config() {
  ModelConfig m;
  m.stm.wkv.path = stm::WkvPath::Scan;
  return m;
}

struct RunConfig {
  dataset::SyntheticConfig data;
  ModelConfig model = default_model_config();
  training::TrainConfig train;
  std::size_t pretrain_ids = 96;
  std::size_t pretrain_images_per_id = 8;
  bool run_stage2 = true;
};

struct RunResult {
  EvalReport untrained;
  EvalReport stage1;
  EvalReport final_report;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  training::TrainResult pretrain_log, stage1_log, stage2_log;
  Checkpoint checkpoint;
  metrics::ScoreSet scores;
  std::vector<Embedded> embeddings;
  double seconds = 0.0;
};

inline ModelConfig model_config(const RunConfig& cfg) {
  ModelConfig mc = cfg.model;
  mc.frames = cfg.data.frames;
  mc.backbone.input_hw = cfg.data.target_hw;
  return mc;
}

// Trains the plain backbone on intensity images of identities disjoint from
// the event splits, then freezes it.
inline training::TrainResult pretrain(EventFaceModel& model, const RunConfig& cfg) {
  if (cfg.train.pretrain_epochs == 0) return {};
  std::vector<training::ImageItem> images;
  for (auto& im : dataset::make_pretrain_images(cfg.data, cfg.pretrain_ids, cfg.pretrain_images_per_id))
    images.push_back({im.identity, events::EventFrameSequence{{im.frame}, 0}.to_tensor()});
  return training::pretrain_backbone(model, images, cfg.pretrain_ids, cfg.train);
}

// Pretrain, stage 1, stage 2, evaluation on the disjoint test identities.
// The model and head draw their initial values from Rng(seed) in that order.
inline RunResult run_full(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  RunResult r;
  const auto ds = dataset::make_synthetic_dataset(cfg.data);
  std::size_t num_train_ids = 0;
  const auto train_raw = encode_samples(ds.train, cfg.data);
  const auto test = encode_samples(ds.test, cfg.data);
  require_disjoint(train_raw, test);
  const auto train = relabel_dense(train_raw, &num_train_ids);

  Rng rng(cfg.train.seed);
  const ModelConfig mc = model_config(cfg);
  EventFaceModel model = EventFaceModel::init(mc, rng);
  r.untrained = evaluate(embed_all(model, test, Pipeline::Spatial));
  r.pretrain_log = pretrain(model, cfg);

  auto head = adaface::AdaFaceHead::init(mc.backbone.embed_dim, num_train_ids, rng, cfg.train.adaface);
  r.initial_loss = training::dataset_loss(model, head, train, Pipeline::Spatial, cfg.train.batch_size);
  r.stage1_log = training::train_stage1(model, head, train, cfg.train);
  r.stage1 = evaluate(embed_all(model, test, Pipeline::Spatial));
  Pipeline final_pipeline = Pipeline::Spatial;
  if (cfg.run_stage2) {
    r.stage2_log = training::train_stage2(model, head, train, cfg.train);
    final_pipeline = Pipeline::Spatiotemporal;
  }
  r.final_loss = training::dataset_loss(model, head, train, final_pipeline, cfg.train.batch_size);
  r.embeddings = embed_all(model, test, final_pipeline);
  r.final_report = evaluate(r.embeddings, false, &r.scores);
  model.save(r.checkpoint);
  training::save_head(r.checkpoint, head);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace eventface::pipeline
