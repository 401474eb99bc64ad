// Command-line front end: runs the experiment pipeline stage by stage, or
// end to end with `all`.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "salbench/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"saliency interpretation benchmark for tiny language models"};
  app.require_subcommand(1);

  std::string config_path;
  bool force = false;
  std::optional<uint64_t> seed_override;
  std::optional<int> threads_override;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file")->required();
    cmd->add_flag("--force", force, "re-run even when artifacts are up to date");
    cmd->add_option("--seed", seed_override, "override the master seed");
    cmd->add_option("--threads", threads_override, "override the worker thread count");
  };

  struct Sub {
    const char* name;
    const char* help;
    std::vector<salbench::Stage> stages;
  };
  const std::vector<Sub> subs = {
      {"generate-data", "generate synthetic datasets, pairs and probe sets",
       {salbench::Stage::kGenerate}},
      {"train", "train the language models", {salbench::Stage::kTrain}},
      {"probe", "fine-tune agreement probes", {salbench::Stage::kProbe}},
      {"distill", "distill student models and their probes", {salbench::Stage::kDistill}},
      {"evaluate", "run the plausibility and faithfulness tests", {salbench::Stage::kEvaluate}},
      {"render", "write per-token interpretation pages", {salbench::Stage::kRender}},
      {"all", "run every stage in order", salbench::all_stages()},
  };

  std::map<std::string, std::vector<salbench::Stage>> stage_map;
  for (const auto& sub : subs) {
    add_common(app.add_subcommand(sub.name, sub.help));
    stage_map[sub.name] = sub.stages;
  }

  CLI11_PARSE(app, argc, argv);

  try {
    salbench::RunConfig config = salbench::load_config(config_path);
    if (seed_override) config.seed = *seed_override;
    if (threads_override) config.threads = *threads_override;
    const std::string chosen = app.get_subcommands().front()->get_name();
    salbench::run_pipeline(config, stage_map.at(chosen), force);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
