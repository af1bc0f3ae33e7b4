#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "eventface/commands.hpp"

namespace {

using namespace eventface;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kSuiteFailure = 3 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  bool overwrite = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "JSON config file of flat keys (see `eventface keys`)");
  cmd->add_option("-s,--set", c.overrides, "override a config key, key=value (repeatable)")->take_all();
  cmd->add_flag("--overwrite", c.overwrite, "allow replacing existing output files");
}

void print_report(const pipeline::EvalReport& r) { std::fputs(pipeline::report_text(r).c_str(), stdout); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-based face recognition: simulation, encoding, two-stage training, evaluation and verification"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "expand help for every subcommand");

  Common common;
  auto* simulate = app.add_subcommand("simulate", "generate the synthetic event dataset as CSV files plus manifests");
  add_common(simulate, common);

  auto* encode = app.add_subcommand("encode", "accumulate every event file into an EFCK tensor of event frames");
  add_common(encode, common);

  int stage = 0;
  std::string train_checkpoint;
  auto* train = app.add_subcommand("train", "run training stage 1 (adapters) or stage 2 (motion modules)");
  add_common(train, common);
  train->add_option("--stage", stage, "training stage")->required()->check(CLI::IsMember({1, 2}));
  train->add_option("--checkpoint", train_checkpoint, "stage-1 checkpoint for stage 2 (default <output_dir>/stage1.efck)");

  commands::EvalOptions eval_opt;
  std::string split = "test", pipeline_name = "auto";
  auto* eval = app.add_subcommand("eval", "score all pairs of a split and write the metric report");
  add_common(eval, common);
  eval->add_option("--checkpoint", eval_opt.checkpoint, "checkpoint to evaluate (default: latest stage in output_dir)");
  eval->add_option("--split", split, "split to evaluate")->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--pipeline", pipeline_name, "embedding pipeline")
      ->check(CLI::IsMember({"auto", "spatial", "spatiotemporal"}));
  eval->add_flag("--self-gallery", eval_opt.self_gallery, "use every sample as both gallery and probe (sanity mode)");

  bool inject_fault = false;
  auto* verify = app.add_subcommand("verify", "run the oracle and invariant suites and print a per-suite table");
  verify->add_flag("--inject-merge-fault", inject_fault, "corrupt one merged weight (the merge suite must fail)");

  auto* keys = app.add_subcommand("keys", "list every config key with its default value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*keys) {
      const auto defaults = config::effective(config::load("", {}));
      for (const auto& f : config::config_schema())
        std::printf("%-28s %-24s %s\n", f.key.c_str(), defaults[f.key].dump().c_str(), f.doc.c_str());
      return kOk;
    }
    if (*verify) {
      testing::SuiteOptions opt;
      opt.corrupt_merge = inject_fault;
      const auto results = commands::verify(opt);
      std::fputs(testing::suite_table(results).c_str(), stdout);
      for (const auto& r : results)
        if (!r.passed) return kSuiteFailure;
      return kOk;
    }

    const config::Settings settings = config::load(common.config_path, common.overrides);
    if (*simulate) {
      const auto s = commands::simulate(settings, common.overwrite);
      std::printf("wrote %zu train and %zu test event files to %s\n", s.train_rows, s.test_rows,
                  settings.events_dir.c_str());
    } else if (*encode) {
      const auto n = commands::encode(settings, common.overwrite);
      std::printf("encoded %zu sequences into %s\n", n, settings.encoded_dir.c_str());
    } else if (*train) {
      const auto s = commands::train(settings, stage, train_checkpoint, common.overwrite);
      std::printf("stage %d: loss %.6f -> %.6f, checkpoint %s\n", stage, s.first_loss, s.last_loss,
                  s.checkpoint.string().c_str());
    } else if (*eval) {
      eval_opt.split = split == "train" ? commands::Split::Train : commands::Split::Test;
      eval_opt.pipeline = pipeline_name == "spatial"          ? commands::PipelineChoice::Spatial
                          : pipeline_name == "spatiotemporal" ? commands::PipelineChoice::Spatiotemporal
                                                              : commands::PipelineChoice::Auto;
      const auto out = commands::eval(settings, eval_opt, common.overwrite);
      print_report(out.report);
      std::printf("scores: %s\nreport: %s\n", out.scores.string().c_str(), out.report_file.string().c_str());
    }
    return kOk;
  } catch (const config::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const commands::UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const training::StageOrderError& e) {
    std::fprintf(stderr, "stage order error: %s\n", e.what());
    return kUsage;
  } catch (const pipeline::ProtocolError& e) {
    std::fprintf(stderr, "protocol error: %s\n", e.what());
    return kData;
  } catch (const commands::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const events::EventDataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
}
