#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mergecast/cf.hpp"
#include "mergecast/error.hpp"
#include "mergecast/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model;
  std::optional<double> horizon;
  std::optional<std::string> out;
};

mergecast::PipelineConfig effective_config(const Options& o) {
  auto cfg = mergecast::load_pipeline_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.output_dir = *o.out;
  if (o.model) {
    auto fam = mergecast::cf::family_from_name(*o.model);
    if (!fam) throw mergecast::ParameterError("unknown model family '" + *o.model + "' (idm, gipps, ghr)");
    cfg.families = {*fam};
  }
  if (o.horizon) {
    if (!(*o.horizon >= 0.0) || *o.horizon > 15.0) throw mergecast::ParameterError("--horizon must lie in [0, 15]");
    cfg.horizon = *o.horizon;
  }
  return cfg;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--config", o.config, "pipeline configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("-s,--seed", o.seed, "top-level seed (overrides the config)");
  cmd->add_option("-m,--model", o.model, "restrict to one car-following family: idm, gipps or ghr");
  cmd->add_option("--horizon", o.horizon, "forecast horizon in seconds (0-15)");
  cmd->add_option("-o,--out", o.out, "bundle directory (overrides the config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mergecast: on-ramp trajectory forecasting and lane-change classification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mergecast::kVersion));

  Options opts;
  struct Entry {
    const char* name;
    const char* help;
  };
  const std::vector<Entry> entries{
      {"synth", "generate synthetic window files from the config's synthetic section"},
      {"ingest", "parse, repair, smooth and resample every window file"},
      {"scenes", "extract 19 s scenes around on-ramp vehicles of the test window"},
      {"pretrain", "train the lane LSTMs and predict every scene's neighbors"},
      {"fit", "calibrate the car-following models on each scene's 4 s input"},
      {"forecast", "roll out 15 s forecasts with the fitted models"},
      {"classify-train", "train the cumulative and exact lane-change forests"},
      {"evaluate", "classify the test window and score every output"},
      {"report", "recompute metrics from raw outputs and write the manifest"},
      {"run", "run every stage in order"},
  };
  std::vector<CLI::App*> cmds;
  for (const auto& e : entries) {
    auto* cmd = app.add_subcommand(e.name, e.help);
    add_common(cmd, opts);
    cmds.push_back(cmd);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = effective_config(opts);
    for (auto* cmd : cmds) {
      if (!cmd->parsed()) continue;
      if (cmd->get_name() == "run") {
        mergecast::run_pipeline(cfg);
      } else {
        mergecast::run_stage(*mergecast::stage_from_name(cmd->get_name()), cfg);
      }
      std::cout << cmd->get_name() << ": ok (" << cfg.output_dir.string() << ")\n";
    }
  } catch (const mergecast::StageError& e) {
    std::cerr << "error " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
