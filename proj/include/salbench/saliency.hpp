#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "salbench/models.hpp"

namespace salbench {

enum class SaliencyMethod { kVanilla, kSmoothGrad, kIntegratedGradients };
enum class Composition { kGradientInput, kVectorNorm };

std::string method_name(SaliencyMethod m);
std::string composition_name(Composition c);
SaliencyMethod method_from_name(const std::string& name);
Composition composition_from_name(const std::string& name);

struct SaliencyConfig {
  SaliencyMethod method = SaliencyMethod::kVanilla;
  Composition composition = Composition::kGradientInput;
  int sg_samples = 30;
  double sg_variance_coefficient = 0.15;
  uint64_t sg_seed = 0;
  int ig_steps = 100;
  bool ig_midpoint = false;  // default: right-endpoint Riemann sum
  ScoreKind score = ScoreKind::kLogit;

  void validate() const;
};

/// One signed importance score per prefix position, with provenance.
struct SaliencyMap {
  std::vector<double> scores;
  std::string method;
  std::string composition;
  int target_class = 0;
  std::string model_id;
};

std::string to_json(const SaliencyMap& map, const std::vector<std::string>& tokens);
SaliencyMap saliency_map_from_json(const std::string& text, std::vector<std::string>* tokens);

/// Scorer abstraction the methods are generic over: maps embeddings [T,d] to
/// a scalar score and its gradient.
using ScorerFn = std::function<ScoreGrad(const Tensor& embeddings)>;

/// Mean gradient over `samples` Gaussian perturbations of `base` with the
/// given per-coordinate standard deviation; sample k draws from the stream
/// derived from (seed, k), so samples may be evaluated in any order.
Tensor smoothgrad_core(const Tensor& base, double stddev, int samples, uint64_t seed,
                       const ScorerFn& scorer);

/// Riemann-sum path attribution from the zero baseline to `input`,
/// multiplied elementwise by (input - baseline).
Tensor integrated_gradients_core(const Tensor& input, int steps, bool midpoint,
                                 const ScorerFn& scorer);

/// Per-position gradient vectors [T,d] of the target-class score at the
/// embeddings looked up for the prefix.
Tensor vanilla(const LanguageModel& model, std::span<const int> prefix, int target_class,
               HeadRef head, ScoreKind score = ScoreKind::kLogit);

/// Average of vanilla gradients under Gaussian embedding noise with variance
/// sg_variance_coefficient * Frobenius-norm(embedding table). Deterministic
/// given sg_seed: sample k draws its noise from an independent stream derived
/// from (sg_seed, k).
Tensor smoothgrad(const LanguageModel& model, std::span<const int> prefix, int target_class,
                  HeadRef head, const SaliencyConfig& config);

/// Riemann-sum path attribution from the zero-embedding baseline; the
/// returned vectors include the elementwise (input - baseline) factor.
Tensor integrated_gradients(const LanguageModel& model, std::span<const int> prefix,
                            int target_class, HeadRef head, const SaliencyConfig& config);

/// gradient . input composition. For vanilla/SmoothGrad vectors this is the
/// dot product with the looked-up embedding rows; Integrated Gradients
/// vectors already carry the input factor and are summed over dimensions,
/// which preserves the completeness identity under the zero baseline.
std::vector<double> compose_gi(const Tensor& vectors, const Tensor& embeddings,
                               bool vectors_carry_input);

/// Scaled L1 norm: psi_w = (1/d) * sum_i |vec_w[i]|. Non-negative.
std::vector<double> compose_vn(const Tensor& vectors);

/// Full pipeline: method dispatch followed by composition, with provenance.
SaliencyMap word_saliency(const LanguageModel& model, std::span<const int> prefix,
                          int target_class, HeadRef head, const SaliencyConfig& config);

}  // namespace salbench
