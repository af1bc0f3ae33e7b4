#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "eventface/checkpoint.hpp"
#include "eventface/config.hpp"
#include "eventface/dataset.hpp"
#include "eventface/events.hpp"
#include "eventface/manifest.hpp"
#include "eventface/metrics.hpp"
#include "eventface/model.hpp"
#include "eventface/pipeline.hpp"
#include "eventface/testing/suites.hpp"
#include "eventface/training.hpp"

// The file-level steps behind the command-line tool. Every step is a pure
// function of (settings, input files): outputs depend on nothing else.
namespace eventface::commands {

namespace fs = std::filesystem;

// Maps to exit status 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Maps to exit status 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { Train, Test };

inline const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  try {
    ck.save(path);
  } catch (const CheckpointError& e) {
    throw DataError(e.what());
  }
}

// Refuses to clobber any existing target unless overwriting was requested.
inline void guard_outputs(const std::vector<fs::path>& targets, bool overwrite) {
  if (overwrite) return;
  for (const auto& t : targets)
    if (fs::exists(t)) throw UsageError("refusing to overwrite " + t.string() + " (pass --overwrite)");
}

inline fs::path manifest_path(const config::Settings& s, Split split) {
  return fs::path(s.events_dir) / (std::string("manifest_") + split_name(split) + ".csv");
}

inline fs::path encoded_path(const config::Settings& s, const std::string& sample_id) {
  return fs::path(s.encoded_dir) / (sample_id + ".efck");
}

inline fs::path config_echo_path(const config::Settings& s, const std::string& command) {
  return fs::path(s.output_dir) / ("config_" + command + ".json");
}

inline void echo_config(const config::Settings& s, const std::string& command) {
  write_text(config_echo_path(s, command), config::effective(s).dump(2) + "\n");
}

inline std::vector<manifest::Row> read_manifest(const config::Settings& s, Split split) {
  try {
    return manifest::parse_manifest(read_text(manifest_path(s, split)));
  } catch (const events::EventDataError& e) {
    throw DataError(manifest_path(s, split).string() + ": " + e.what());
  }
}

// --- simulate --------------------------------------------------------------

struct SimulateSummary {
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
};

inline SimulateSummary simulate(const config::Settings& s, bool overwrite) {
  const auto ds = dataset::make_synthetic_dataset(s.run.data);
  const fs::path dir(s.events_dir);
  std::vector<fs::path> targets{manifest_path(s, Split::Train), manifest_path(s, Split::Test),
                                config_echo_path(s, "simulate")};
  for (const auto* part : {&ds.train, &ds.test})
    for (const auto& smp : *part) targets.push_back(dir / (smp.sample_id + ".csv"));
  guard_outputs(targets, overwrite);

  SimulateSummary summary;
  auto emit = [&](const std::vector<dataset::Sample>& samples, Split split) {
    std::vector<manifest::Row> rows;
    for (const auto& smp : samples) {
      const std::string file = smp.sample_id + ".csv";
      write_text(dir / file, events::write_event_file(smp.stream));
      rows.push_back({smp.sample_id, smp.identity, file});
    }
    write_text(manifest_path(s, split), manifest::write_manifest(rows));
    return rows.size();
  };
  summary.train_rows = emit(ds.train, Split::Train);
  summary.test_rows = emit(ds.test, Split::Test);
  echo_config(s, "simulate");
  return summary;
}

// --- encode ----------------------------------------------------------------

inline std::size_t encode(const config::Settings& s, bool overwrite) {
  std::vector<std::pair<manifest::Row, Split>> rows;
  for (Split split : {Split::Train, Split::Test})
    for (auto& r : read_manifest(s, split)) rows.push_back({r, split});
  std::vector<fs::path> targets{config_echo_path(s, "encode")};
  for (const auto& [r, split] : rows) targets.push_back(encoded_path(s, r.sample_id));
  guard_outputs(targets, overwrite);

  const auto& d = s.run.data;
  for (const auto& [r, split] : rows) {
    const fs::path src = fs::path(s.events_dir) / r.file;
    events::EventStream stream;
    try {
      stream = events::parse_event_file(read_text(src));
    } catch (const events::EventDataError& e) {
      throw DataError(src.string() + ": " + e.what());
    }
    const auto seq = events::build_sequence(stream, 0, d.frames, d.delta_t_us, d.target_hw);
    Checkpoint ck;
    ck.put("frames", seq.to_tensor());
    save_checkpoint(encoded_path(s, r.sample_id), ck);
  }
  echo_config(s, "encode");
  return rows.size();
}

// Encoded sequences of one split, labelled with their manifest identities.
inline std::vector<training::LabeledSequence> load_split(const config::Settings& s, Split split) {
  const auto& d = s.run.data;
  const Shape want{d.frames, d.target_hw, d.target_hw, 3};
  std::vector<training::LabeledSequence> out;
  for (const auto& r : read_manifest(s, split)) {
    const fs::path path = encoded_path(s, r.sample_id);
    if (!fs::exists(path)) throw DataError("missing encoded sequence " + path.string() + " (run encode first)");
    Checkpoint ck;
    try {
      ck = Checkpoint::load(path);
    } catch (const CheckpointError& e) {
      throw DataError(path.string() + ": " + e.what());
    }
    if (!ck.contains("frames")) throw DataError(path.string() + ": no 'frames' entry");
    const Tensor& frames = ck.get("frames");
    if (frames.shape() != want)
      throw DataError(path.string() + ": frames have shape " + shape_str(frames.shape()) + ", config expects " +
                      shape_str(want));
    out.push_back({r.sample_id, r.identity, frames});
  }
  if (out.empty()) throw DataError(std::string("the ") + split_name(split) + " manifest lists no sequences");
  return out;
}

// --- train -----------------------------------------------------------------

inline fs::path stage_checkpoint_path(const config::Settings& s, int stage) {
  return fs::path(s.output_dir) / ("stage" + std::to_string(stage) + ".efck");
}

struct TrainSummary {
  fs::path checkpoint;
  double first_loss = 0.0;
  double last_loss = 0.0;
};

// Stage 1 pretrains the backbone, trains adapters + head and writes a merged
// checkpoint. Stage 2 requires that checkpoint and trains the modulators.
inline TrainSummary train(const config::Settings& s, int stage, const std::string& checkpoint_in, bool overwrite) {
  if (stage != 1 && stage != 2) throw UsageError("--stage must be 1 or 2");
  const std::string tag = "train" + std::to_string(stage);
  const fs::path out_ck = stage_checkpoint_path(s, stage);
  const fs::path out_log = fs::path(s.output_dir) / ("stage" + std::to_string(stage) + "_loss.csv");
  std::vector<fs::path> targets{out_ck, out_log, config_echo_path(s, tag)};
  if (stage == 1) targets.push_back(fs::path(s.output_dir) / "pretrain_loss.csv");

  Checkpoint previous;
  if (stage == 2) {
    const fs::path in = checkpoint_in.empty() ? stage_checkpoint_path(s, 1) : fs::path(checkpoint_in);
    if (!fs::exists(in))
      throw training::StageOrderError("stage 2 needs the merged stage-1 checkpoint " + in.string() +
                                      "; run `train --stage 1` first");
    try {
      previous = Checkpoint::load(in);
    } catch (const CheckpointError& e) {
      throw DataError(in.string() + ": " + e.what());
    }
    if (previous.has_prefix("lora."))
      throw training::StageOrderError(in.string() + " still carries unmerged adapters; finish stage 1 first");
    if (previous.has_prefix("mpe.") || previous.has_prefix("stm."))
      throw training::StageOrderError(in.string() + " is already a stage-2 checkpoint");
  }
  guard_outputs(targets, overwrite);

  std::size_t num_ids = 0;
  const auto data = pipeline::relabel_dense(load_split(s, Split::Train), &num_ids);
  const auto& cfg = s.run;
  Rng rng(cfg.train.seed);
  const ModelConfig mc = pipeline::model_config(cfg);
  EventFaceModel model = EventFaceModel::init(mc, rng);
  training::TrainResult log;
  if (stage == 1) {
    const auto pre = pipeline::pretrain(model, cfg);
    write_text(fs::path(s.output_dir) / "pretrain_loss.csv", training::loss_log_csv(pre));
  }
  auto head = adaface::AdaFaceHead::init(mc.backbone.embed_dim, num_ids, rng, cfg.train.adaface);
  if (stage == 1) {
    log = training::train_stage1(model, head, data, cfg.train);
  } else {
    try {
      model.load(previous);
      training::load_head(previous, head);
    } catch (const CheckpointError& e) {
      throw DataError(std::string("stage-1 checkpoint does not match the config: ") + e.what());
    }
    log = training::train_stage2(model, head, data, cfg.train);
  }
  Checkpoint ck;
  model.save(ck);
  if (stage == 1) {
    // the modulators are untouched by stage 1; keep the checkpoint backbone-only
    for (auto it = ck.entries.begin(); it != ck.entries.end();)
      it = it->first.rfind("mpe.", 0) == 0 || it->first.rfind("stm.", 0) == 0 ? ck.entries.erase(it) : std::next(it);
  }
  training::save_head(ck, head);
  save_checkpoint(out_ck, ck);
  write_text(out_log, training::loss_log_csv(log));
  echo_config(s, tag);
  TrainSummary summary{out_ck, 0.0, 0.0};
  if (!log.log.empty()) {
    summary.first_loss = log.log.front().loss;
    summary.last_loss = log.log.back().loss;
  }
  return summary;
}

// --- eval ------------------------------------------------------------------

enum class PipelineChoice { Auto, Spatial, Spatiotemporal };

struct EvalOptions {
  std::string checkpoint;  // empty: stage2.efck if present, else stage1.efck
  Split split = Split::Test;
  bool self_gallery = false;
  PipelineChoice pipeline = PipelineChoice::Auto;
};

struct EvalOutputs {
  pipeline::EvalReport report;
  fs::path scores, report_file, embeddings;
};

inline void require_disjoint_manifests(const config::Settings& s) {
  std::set<std::size_t> train_ids;
  for (const auto& r : read_manifest(s, Split::Train)) train_ids.insert(r.identity);
  for (const auto& r : read_manifest(s, Split::Test))
    if (train_ids.count(r.identity))
      throw pipeline::ProtocolError("identity " + std::to_string(r.identity) +
                                    " appears in both the train and test manifests");
}

inline EvalOutputs eval(const config::Settings& s, const EvalOptions& opt, bool overwrite) {
  require_disjoint_manifests(s);
  fs::path in = opt.checkpoint;
  if (in.empty()) in = fs::exists(stage_checkpoint_path(s, 2)) ? stage_checkpoint_path(s, 2) : stage_checkpoint_path(s, 1);
  if (!fs::exists(in)) throw DataError("checkpoint " + in.string() + " not found (run train first)");
  const std::string suffix = std::string(split_name(opt.split)) + (opt.self_gallery ? "_self" : "");
  EvalOutputs out;
  out.scores = fs::path(s.output_dir) / ("scores_" + suffix + ".csv");
  out.report_file = fs::path(s.output_dir) / ("report_" + suffix + ".txt");
  out.embeddings = fs::path(s.output_dir) / ("embeddings_" + suffix + ".efck");
  guard_outputs({out.scores, out.report_file, out.embeddings, config_echo_path(s, "eval")}, overwrite);

  Checkpoint ck;
  try {
    ck = Checkpoint::load(in);
  } catch (const CheckpointError& e) {
    throw DataError(in.string() + ": " + e.what());
  }
  Rng rng(s.run.train.seed);
  EventFaceModel model = EventFaceModel::init(pipeline::model_config(s.run), rng);
  try {
    model.load(ck);
  } catch (const CheckpointError& e) {
    throw DataError(in.string() + " does not match the config: " + e.what());
  }
  Pipeline p = Pipeline::Spatial;
  if (opt.pipeline == PipelineChoice::Spatiotemporal ||
      (opt.pipeline == PipelineChoice::Auto && ck.has_prefix("mpe.")))
    p = Pipeline::Spatiotemporal;

  const auto embedded = pipeline::embed_all(model, load_split(s, opt.split), p);
  metrics::ScoreSet scores;
  try {
    out.report = pipeline::evaluate(embedded, opt.self_gallery, &scores);
  } catch (const metrics::MetricError& e) {
    throw DataError(std::string("evaluation: ") + e.what());
  }
  write_text(out.scores, metrics::write_score_csv(scores));
  write_text(out.report_file, pipeline::report_text(out.report));
  save_checkpoint(out.embeddings, pipeline::embeddings_checkpoint(embedded));
  echo_config(s, "eval");
  return out;
}

// --- verify ----------------------------------------------------------------

inline std::vector<testing::SuiteResult> verify(const testing::SuiteOptions& opt) {
  return testing::run_property_suites(opt);
}

}  // namespace eventface::commands
