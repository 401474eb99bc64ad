#pragma once

#include <string>
#include <vector>

#include "salbench/models.hpp"
#include "salbench/saliency.hpp"
#include "salbench/training.hpp"

namespace salbench {

/// Full pipeline configuration, read from a flat key = value file with
/// dotted sections and # comments.
struct RunConfig {
  std::string data_dir = "runs/data";
  std::string checkpoint_dir = "runs/checkpoints";
  std::string results_dir = "runs/results";

  std::vector<ArchKind> archs = {ArchKind::kRecurrent, ArchKind::kAttention};
  ModelConfig model;

  bool use_number = true;
  bool use_gender = true;
  size_t number_count = 600;
  size_t gender_count = 600;
  size_t corpus_sentences = 3000;
  size_t probe_count = 800;
  double probe_holdout = 0.2;
  std::vector<std::string> tagged_corpora;  // user-supplied pre-tagged JSONL files

  std::vector<SaliencyMethod> methods = {SaliencyMethod::kVanilla, SaliencyMethod::kSmoothGrad,
                                         SaliencyMethod::kIntegratedGradients};
  std::vector<Composition> compositions = {Composition::kGradientInput, Composition::kVectorNorm};
  bool baselines = true;
  SaliencyConfig saliency;  // sg/ig knobs; method/composition fields unused here

  TrainConfig train;
  TrainConfig probe_train;
  DistillConfig distill;
  size_t distill_epochs = 0;  // 0: reuse train.epochs

  bool eval_plausibility = true;
  bool eval_input_consistency = true;
  bool eval_model_consistency = true;

  size_t render_count = 10;
  uint64_t seed = 42;
  int threads = 0;  // 0: library default

  void validate() const;  // at least one method and one dataset
};

RunConfig parse_config_text(const std::string& text, const std::string& filename);
RunConfig load_config(const std::string& path);

/// A commented configuration with the default values, suitable as a
/// starting point.
std::string example_config_text();

}  // namespace salbench
