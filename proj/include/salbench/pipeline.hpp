#pragma once

#include <string>
#include <vector>

#include "salbench/config.hpp"

namespace salbench {

enum class Stage { kGenerate, kTrain, kProbe, kDistill, kEvaluate, kRender };

std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);
std::vector<Stage> all_stages();

/// Executes the selected stages in order. Stages whose artifacts already
/// exist are skipped unless `force` is set. Throws with a precise
/// missing-artifact message when a stage's inputs are absent; partial
/// artifacts from earlier stages are left on disk.
///
/// The SALBENCH_RESULTS_DIR environment variable overrides the configured
/// results directory.
void run_pipeline(const RunConfig& config, const std::vector<Stage>& stages, bool force);

}  // namespace salbench
