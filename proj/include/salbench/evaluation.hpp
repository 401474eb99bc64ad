#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "salbench/datasets.hpp"
#include "salbench/saliency.hpp"

namespace salbench {

enum class Scenario { kExpected, kAlternative };

std::string scenario_name(Scenario s);

/// Expected iff the probe prediction matches the gold tag.
Scenario classify_scenario(int predicted_tag, int gold_tag);

/// Strict max comparison between cue and attractor scores; equal maxima fail
/// in both scenarios.
bool plausibility_test(const std::vector<double>& scores, const std::vector<size_t>& cues,
                       const std::vector<size_t>& attractors, Scenario scenario);

struct PlausibilityRecord {
  size_t instance = 0;
  Scenario scenario = Scenario::kExpected;
  bool pass = false;
  double max_cue = 0.0;
  double max_attractor = 0.0;
};

struct ConsistencyRecord {
  size_t index = 0;  // pair index (input consistency) or instance index
  Scenario scenario = Scenario::kExpected;
  double pearson_r = 0.0;
};

/// Pass fractions or mean correlations with the expected/alternative
/// breakdown. `all` is the occurrence-weighted mean of the two scenarios.
struct AggregateStats {
  double all = 0.0;
  double expected = 0.0;
  double alternative = 0.0;
  double occ_expected = 0.0;
  double occ_alternative = 0.0;
  size_t n = 0;
  size_t excluded = 0;
};

AggregateStats aggregate_plausibility(const std::vector<PlausibilityRecord>& records,
                                      size_t excluded);
AggregateStats aggregate_consistency(const std::vector<ConsistencyRecord>& records,
                                     size_t excluded);

/// A saliency source under evaluation: one of the gradient methods, or one
/// of the reconstructed Table-row baselines.
struct EvalMethod {
  enum class Kind { kSaliency, kRandom, kNearest };
  Kind kind = Kind::kSaliency;
  SaliencyConfig config;

  static EvalMethod saliency(SaliencyConfig c) { return {Kind::kSaliency, c}; }
  static EvalMethod random() { return {Kind::kRandom, {}}; }
  static EvalMethod nearest() { return {Kind::kNearest, {}}; }
  std::string method_label() const;
  std::string composition_label() const;
};

/// Independent scores uniform on (0,1) per position, seeded per instance.
SaliencyMap baseline_random(const TestInstance& instance, uint64_t seed);

/// Score 1 at the member of cue-union-attractor closest to the prediction
/// point (largest position index), 0 elsewhere.
SaliencyMap baseline_nearest(const TestInstance& instance);

struct PlausibilityOutcome {
  std::vector<PlausibilityRecord> records;
  AggregateStats stats;
};

/// For each instance: probe prediction, scenario, word saliency targeted at
/// the predicted class, max-comparison test. Instances with an empty cue or
/// attractor set are excluded and counted. Failures are per instance, not
/// fatal. Deterministic for a fixed master seed at any thread count.
PlausibilityOutcome run_plausibility(const LanguageModel& model, const ProbeHead& probe,
                                     const EvalMethod& method,
                                     const std::vector<TestInstance>& instances,
                                     uint64_t master_seed);

struct PearsonResult {
  double r = 0.0;
  bool defined = false;  // false when either vector is constant
};

/// Sample Pearson correlation. Lengths must match and be >= 2.
PearsonResult pearson(std::span<const double> x, std::span<const double> y);

struct ConsistencyOutcome {
  std::vector<ConsistencyRecord> records;
  AggregateStats stats;
  /// Serialized saliency maps per record, aligned with `records`
  /// (pairs: first and second member maps).
  std::vector<std::pair<SaliencyMap, SaliencyMap>> maps;
};

/// Pearson correlation between the word scores of the two members of each
/// perturbation pair, each interpreted for its own argmax prediction;
/// aggregated by the first member's scenario.
ConsistencyOutcome input_consistency(const LanguageModel& model, const ProbeHead& probe,
                                     const EvalMethod& method,
                                     const std::vector<TestInstance>& instances,
                                     const std::vector<PerturbationPair>& pairs,
                                     uint64_t master_seed);

/// Pearson correlation between teacher and student word scores on the same
/// instance, each model interpreted for its own argmax tag; aggregated by
/// the teacher's scenario.
ConsistencyOutcome model_consistency(const LanguageModel& teacher, const ProbeHead& teacher_probe,
                                     const LanguageModel& student, const ProbeHead& student_probe,
                                     const EvalMethod& method,
                                     const std::vector<TestInstance>& instances,
                                     uint64_t master_seed);

}  // namespace salbench
