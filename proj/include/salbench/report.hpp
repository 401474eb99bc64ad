#pragma once

#include <map>
#include <string>
#include <vector>

#include "salbench/evaluation.hpp"

namespace salbench {

// dataset -> method -> composition -> stats
using CompositionStats = std::map<std::string, AggregateStats>;
using MethodStats = std::map<std::string, CompositionStats>;
using EvalReport = std::map<std::string, MethodStats>;

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

/// Tokens with signed normalized intensities in [-100, 100]; the largest
/// |score| maps to 100 unless every score is zero.
struct RenderedInterpretation {
  std::vector<std::string> tokens;
  std::vector<double> intensities;
  std::vector<bool> cue_marks;
  std::vector<bool> attractor_marks;
  std::string predicted_tag;
};

RenderedInterpretation render_interpretation(const TestInstance& instance, const SaliencyMap& map,
                                             const std::string& predicted_tag);

/// One interpretation as an HTML fragment: positive scores shaded green,
/// negative yellow, opacity from the normalized intensity; cue tokens in
/// square brackets, attractors in parentheses; the predicted tag appended.
std::string render_html(const TestInstance& instance, const SaliencyMap& map, Scenario scenario,
                        bool pass, const std::string& predicted_tag);

std::string html_document(const std::string& title, const std::vector<std::string>& fragments);

/// Table-style CSV: one row per (architecture, method, composition) with
/// all/exp/alt columns per dataset, and one occurrence-fraction header row
/// per architecture (values parenthesized).
std::string table_csv(const std::map<std::string, EvalReport>& reports_by_arch);

/// Parses the numeric cells of a table_csv back into per-architecture
/// reports (used to check that emitted tables stay faithful to the JSON).
std::map<std::string, EvalReport> table_csv_parse(const std::string& csv);

}  // namespace salbench
