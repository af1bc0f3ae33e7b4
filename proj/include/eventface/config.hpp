#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "eventface/pipeline.hpp"

// Flat-key run configuration: a JSON object whose keys are listed in
// config_schema(). Unknown keys and ill-typed values are rejected before any
// work starts.
namespace eventface::config {

using json = nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Settings {
  pipeline::RunConfig run;
  std::string output_dir = "out";
  std::string events_dir = "out/events";
  std::string encoded_dir = "out/encoded";
  std::uint64_t seed = 7;
};

struct Field {
  std::string key;
  std::string doc;
  std::function<void(Settings&, const json&)> set;
  std::function<json(const Settings&)> get;
};

namespace detail {

template <typename T>
T as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad value " + v.dump());
  }
}

template <typename T>
Field scalar(std::string key, std::string doc, std::function<T&(Settings&)> ref) {
  return Field{key, std::move(doc),
               [key, ref](Settings& s, const json& v) { ref(s) = as<T>(v, key); },
               [ref](const Settings& s) { return json(ref(const_cast<Settings&>(s))); }};
}

template <typename E>
Field choice(std::string key, std::string doc, std::vector<std::pair<std::string, E>> options,
             std::function<E&(Settings&)> ref) {
  return Field{key, std::move(doc),
               [key, options, ref](Settings& s, const json& v) {
                 const auto name = as<std::string>(v, key);
                 for (const auto& [n, e] : options)
                   if (n == name) {
                     ref(s) = e;
                     return;
                   }
                 throw ConfigError("config key '" + key + "': unknown option '" + name + "'");
               },
               [options, ref](const Settings& s) {
                 const E cur = ref(const_cast<Settings&>(s));
                 for (const auto& [n, e] : options)
                   if (e == cur) return json(n);
                 return json(nullptr);
               }};
}

}  // namespace detail

inline const std::vector<Field>& config_schema() {
  using detail::choice;
  using detail::scalar;
  using Sz = std::size_t;
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    f.push_back(scalar<std::uint64_t>("seed", "master seed for data generation and training",
                                      [](Settings& s) -> std::uint64_t& { return s.seed; }));
    f.push_back(scalar<std::string>("output_dir", "directory for checkpoints, logs, scores and reports",
                                    [](Settings& s) -> std::string& { return s.output_dir; }));
    f.push_back(scalar<std::string>("events_dir", "event CSV files and manifests",
                                    [](Settings& s) -> std::string& { return s.events_dir; }));
    f.push_back(scalar<std::string>("encoded_dir", "encoded frame tensors",
                                    [](Settings& s) -> std::string& { return s.encoded_dir; }));

    f.push_back(scalar<Sz>("data.train_ids", "identities in the training split",
                           [](Settings& s) -> Sz& { return s.run.data.train_ids; }));
    f.push_back(scalar<Sz>("data.test_ids", "identities in the disjoint test split",
                           [](Settings& s) -> Sz& { return s.run.data.test_ids; }));
    f.push_back(scalar<Sz>("data.sequences_per_id", "sequences recorded per identity",
                           [](Settings& s) -> Sz& { return s.run.data.sequences_per_id; }));
    f.push_back(scalar<Sz>("data.sensor_hw", "sensor width and height in pixels",
                           [](Settings& s) -> Sz& { return s.run.data.sensor_hw; }));
    f.push_back(scalar<Sz>("data.frames", "event frames per sequence",
                           [](Settings& s) -> Sz& { return s.run.data.frames; }));
    f.push_back(scalar<std::uint64_t>("data.delta_t_us", "accumulation window per frame, microseconds",
                                      [](Settings& s) -> std::uint64_t& { return s.run.data.delta_t_us; }));
    f.push_back(scalar<Sz>("data.target_hw", "encoded frame size (also the backbone input size)",
                           [](Settings& s) -> Sz& { return s.run.data.target_hw; }));
    f.push_back(scalar<double>("data.contrast", "event contrast threshold on log intensity",
                               [](Settings& s) -> double& { return s.run.data.contrast; }));
    f.push_back(scalar<std::uint64_t>("data.sim_step_us", "intensity video sampling step, microseconds",
                                      [](Settings& s) -> std::uint64_t& { return s.run.data.sim_step_us; }));
    f.push_back(scalar<Sz>("data.blobs_per_id", "Gaussian blobs per identity pattern",
                           [](Settings& s) -> Sz& { return s.run.data.blobs_per_id; }));
    f.push_back(scalar<double>("data.max_offset", "initial translation range, pattern units",
                               [](Settings& s) -> double& { return s.run.data.max_offset; }));
    f.push_back(scalar<double>("data.max_angle", "initial rotation range, radians",
                               [](Settings& s) -> double& { return s.run.data.max_angle; }));
    f.push_back(scalar<double>("data.min_travel", "minimum translation over a sequence",
                               [](Settings& s) -> double& { return s.run.data.min_travel; }));
    f.push_back(scalar<double>("data.max_travel", "maximum translation over a sequence",
                               [](Settings& s) -> double& { return s.run.data.max_travel; }));
    f.push_back(scalar<double>("data.max_spin", "maximum rotation over a sequence, radians",
                               [](Settings& s) -> double& { return s.run.data.max_spin; }));
    f.push_back(scalar<double>("data.direction_spread", "travel direction drawn within +-spread radians of +x",
                               [](Settings& s) -> double& { return s.run.data.direction_spread; }));

    f.push_back(Field{"model.stage_channels", "channel width of each backbone stage (multiples of 8)",
                      [](Settings& s, const json& v) {
                        if (!v.is_array() || v.empty()) throw ConfigError("config key 'model.stage_channels': need a list");
                        std::vector<std::size_t> c;
                        for (const auto& x : v) c.push_back(detail::as<std::size_t>(x, "model.stage_channels"));
                        s.run.model.backbone.stage_channels = c;
                      },
                      [](const Settings& s) { return json(s.run.model.backbone.stage_channels); }});
    f.push_back(scalar<Sz>("model.blocks_per_stage", "3x3 conv layers per stage",
                           [](Settings& s) -> Sz& { return s.run.model.backbone.blocks_per_stage; }));
    f.push_back(scalar<Sz>("model.embed_dim", "identity embedding size",
                           [](Settings& s) -> Sz& { return s.run.model.backbone.embed_dim; }));
    f.push_back(scalar<Sz>("model.lora_rank", "low-rank adapter rank",
                           [](Settings& s) -> Sz& { return s.run.model.backbone.lora_rank; }));
    f.push_back(Field{"model.lora_layers", "conv layers that receive adapters, e.g. [\"s1.c0\"]; empty selects all eligible",
                      [](Settings& s, const json& v) {
                        if (!v.is_array()) throw ConfigError("config key 'model.lora_layers': need a list");
                        std::vector<std::string> names;
                        for (const auto& x : v) names.push_back(detail::as<std::string>(x, "model.lora_layers"));
                        s.run.model.backbone.lora_layers = names;
                      },
                      [](const Settings& s) { return json(s.run.model.backbone.lora_layers); }});
    f.push_back(scalar<Sz>("model.mpe_k_large", "large depthwise kernel of the motion encoder",
                           [](Settings& s) -> Sz& { return s.run.model.mpe_k_large; }));
    f.push_back(scalar<Sz>("model.mpe_k_small", "small depthwise kernel of the motion encoder",
                           [](Settings& s) -> Sz& { return s.run.model.mpe_k_small; }));
    f.push_back(choice<stm::ShiftMode>("model.shift", "token shift: octa or quad",
                                       {{"octa", stm::ShiftMode::Octa}, {"quad", stm::ShiftMode::Quad}},
                                       [](Settings& s) -> stm::ShiftMode& { return s.run.model.stm.shift; }));
    f.push_back(choice<stm::Arrangement>(
        "model.arrangement", "spatial/motion token arrangement: interleaved or sequential",
        {{"interleaved", stm::Arrangement::Interleaved}, {"sequential", stm::Arrangement::Sequential}},
        [](Settings& s) -> stm::Arrangement& { return s.run.model.stm.wkv.arrangement; }));
    f.push_back(choice<stm::WkvPath>("model.wkv_path", "Bi-WKV evaluation: scan (linear) or naive (quadratic)",
                                     {{"scan", stm::WkvPath::Scan}, {"naive", stm::WkvPath::Naive}},
                                     [](Settings& s) -> stm::WkvPath& { return s.run.model.stm.wkv.path; }));
    f.push_back(scalar<double>("model.stm_out_scale", "init scale of the modulator output projections",
                               [](Settings& s) -> double& { return s.run.model.stm_out_scale; }));
    f.push_back(scalar<double>("model.mu_r", "shift mixing weight, receptance branch",
                               [](Settings& s) -> double& { return s.run.model.stm.mu_r; }));
    f.push_back(scalar<double>("model.mu_k", "shift mixing weight, key branch",
                               [](Settings& s) -> double& { return s.run.model.stm.mu_k; }));
    f.push_back(scalar<double>("model.mu_v", "shift mixing weight, value branch",
                               [](Settings& s) -> double& { return s.run.model.stm.mu_v; }));
    f.push_back(scalar<double>("model.mu_cm", "shift mixing weight, channel mix",
                               [](Settings& s) -> double& { return s.run.model.stm.mu_cm; }));

    f.push_back(scalar<double>("train.lr", "SGD learning rate for both stages",
                               [](Settings& s) -> double& { return s.run.train.lr; }));
    f.push_back(scalar<Sz>("train.batch_size", "sequences per step",
                           [](Settings& s) -> Sz& { return s.run.train.batch_size; }));
    f.push_back(scalar<Sz>("train.epochs_stage1", "epochs of adapter training",
                           [](Settings& s) -> Sz& { return s.run.train.epochs_stage1; }));
    f.push_back(scalar<Sz>("train.epochs_stage2", "epochs of motion/spatiotemporal module training",
                           [](Settings& s) -> Sz& { return s.run.train.epochs_stage2; }));
    f.push_back(scalar<double>("train.grad_clip", "global gradient-norm cap per step (0 disables)",
                               [](Settings& s) -> double& { return s.run.train.grad_clip; }));
    f.push_back(scalar<Sz>("train.pretrain_epochs", "epochs of backbone pretraining on intensity images (0 skips)",
                           [](Settings& s) -> Sz& { return s.run.train.pretrain_epochs; }));
    f.push_back(scalar<double>("train.pretrain_lr", "learning rate of backbone pretraining",
                               [](Settings& s) -> double& { return s.run.train.pretrain_lr; }));
    f.push_back(scalar<Sz>("train.pretrain_ids", "identities in the pretraining image set",
                           [](Settings& s) -> Sz& { return s.run.pretrain_ids; }));
    f.push_back(scalar<Sz>("train.pretrain_images_per_id", "pretraining images per identity",
                           [](Settings& s) -> Sz& { return s.run.pretrain_images_per_id; }));
    f.push_back(scalar<double>("train.lr_stage2", "stage-2 learning rate; 0 reuses train.lr",
                               [](Settings& s) -> double& { return s.run.train.lr_stage2; }));
    f.push_back(scalar<double>("train.margin", "AdaFace margin m",
                               [](Settings& s) -> double& { return s.run.train.adaface.margin; }));
    f.push_back(scalar<double>("train.scale", "AdaFace logit scale s",
                               [](Settings& s) -> double& { return s.run.train.adaface.scale; }));
    f.push_back(scalar<double>("train.h", "AdaFace norm-proxy concentration h",
                               [](Settings& s) -> double& { return s.run.train.adaface.h; }));
    f.push_back(scalar<double>("train.momentum", "AdaFace running norm-statistics momentum",
                               [](Settings& s) -> double& { return s.run.train.adaface.momentum; }));
    return f;
  }();
  return fields;
}

inline const Field* find_field(const std::string& key) {
  for (const auto& f : config_schema())
    if (f.key == key) return &f;
  return nullptr;
}

// Applies the derived couplings and checks cross-field constraints.
inline void finalize(Settings& s) {
  auto& r = s.run;
  r.data.seed = s.seed;
  r.train.seed = s.seed;
  r.model.frames = r.data.frames;
  r.model.backbone.input_hw = r.data.target_hw;
  if (r.data.frames < 2) throw ConfigError("data.frames must be >= 2");
  if (r.data.delta_t_us == 0 || r.data.sim_step_us == 0) throw ConfigError("time steps must be positive");
  if (r.data.train_ids < 2 || r.data.test_ids < 2) throw ConfigError("need at least 2 train and 2 test identities");
  if (r.data.sequences_per_id < 2) throw ConfigError("data.sequences_per_id must be >= 2");
  if (!(r.data.contrast > 0.0)) throw ConfigError("data.contrast must be positive");
  if (r.data.min_travel > r.data.max_travel) throw ConfigError("data.min_travel exceeds data.max_travel");
  if (r.train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(r.train.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (r.train.adaface.margin < 0.0 || r.train.adaface.margin >= 1.0) throw ConfigError("train.margin must lie in [0, 1)");
  if (r.model.mpe_k_large <= r.model.mpe_k_small || r.model.mpe_k_large % 2 == 0 || r.model.mpe_k_small % 2 == 0)
    throw ConfigError("motion encoder kernels must be odd with large > small");
  try {
    r.model.backbone.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline void apply_object(Settings& s, const json& obj) {
  if (!obj.is_object()) throw ConfigError("config must be a JSON object of flat keys");
  for (const auto& [key, value] : obj.items()) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    f->set(s, value);
  }
}

// "key=value"; the value is read as JSON when it parses, else as a string.
inline void apply_override(Settings& s, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json v = json::parse(raw, nullptr, false);
  if (v.is_discarded()) v = raw;
  json obj = json::object();
  obj[key] = std::move(v);
  apply_object(s, obj);
}

inline Settings load(const std::string& path, const std::vector<std::string>& overrides) {
  Settings s;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    json obj = json::parse(in, nullptr, false, true);
    if (obj.is_discarded()) throw ConfigError("config file " + path + " is not valid JSON");
    apply_object(s, obj);
  }
  for (const auto& o : overrides) apply_override(s, o);
  finalize(s);
  return s;
}

inline json effective(const Settings& s) {
  json out = json::object();
  for (const auto& f : config_schema()) out[f.key] = f.get(s);
  return out;
}

}  // namespace eventface::config
