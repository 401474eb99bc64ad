#include "salbench/saliency.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "salbench/rng.hpp"

namespace salbench {

using nlohmann::json;

std::string method_name(SaliencyMethod m) {
  switch (m) {
    case SaliencyMethod::kVanilla: return "v";
    case SaliencyMethod::kSmoothGrad: return "sg";
    case SaliencyMethod::kIntegratedGradients: return "ig";
  }
  return "?";
}

std::string composition_name(Composition c) {
  return c == Composition::kGradientInput ? "gi" : "vn";
}

SaliencyMethod method_from_name(const std::string& name) {
  if (name == "v" || name == "vanilla") return SaliencyMethod::kVanilla;
  if (name == "sg" || name == "smoothgrad") return SaliencyMethod::kSmoothGrad;
  if (name == "ig" || name == "integrated_gradients") return SaliencyMethod::kIntegratedGradients;
  throw std::invalid_argument("unknown saliency method: " + name);
}

Composition composition_from_name(const std::string& name) {
  if (name == "gi") return Composition::kGradientInput;
  if (name == "vn") return Composition::kVectorNorm;
  throw std::invalid_argument("unknown composition scheme: " + name);
}

void SaliencyConfig::validate() const {
  if (sg_samples < 1) throw std::invalid_argument("saliency: sg_samples must be >= 1");
  if (ig_steps < 1) throw std::invalid_argument("saliency: ig_steps must be >= 1");
  if (sg_variance_coefficient < 0) {
    throw std::invalid_argument("saliency: sg_variance_coefficient must be >= 0");
  }
}

std::string to_json(const SaliencyMap& map, const std::vector<std::string>& tokens) {
  json j;
  j["tokens"] = tokens;
  j["scores"] = map.scores;
  j["method"] = map.method;
  j["composition"] = map.composition;
  j["target"] = map.target_class;
  j["model_id"] = map.model_id;
  return j.dump();
}

SaliencyMap saliency_map_from_json(const std::string& text, std::vector<std::string>* tokens) {
  json j = json::parse(text);
  SaliencyMap m;
  m.scores = j.at("scores").get<std::vector<double>>();
  m.method = j.at("method");
  m.composition = j.at("composition");
  m.target_class = j.at("target");
  m.model_id = j.at("model_id");
  if (tokens) *tokens = j.at("tokens").get<std::vector<std::string>>();
  return m;
}

Tensor vanilla(const LanguageModel& model, std::span<const int> prefix, int target_class,
               HeadRef head, ScoreKind score) {
  return input_gradient(model, prefix, target_class, head, score);
}

Tensor smoothgrad_core(const Tensor& base, double stddev, int samples, uint64_t seed,
                       const ScorerFn& scorer) {
  Tensor mean(base.shape());
  for (int k = 0; k < samples; ++k) {
    Tensor noisy = base;
    if (stddev > 0.0) {
      RngStream rng(mix_seed(seed, static_cast<uint64_t>(k)));
      for (auto& v : noisy.vec()) v += stddev * rng.gaussian();
    }
    ScoreGrad sg = scorer(noisy);
    for (size_t i = 0; i < mean.numel(); ++i) mean[i] += sg.grad[i];
  }
  for (auto& v : mean.vec()) v /= static_cast<double>(samples);
  return mean;
}

Tensor integrated_gradients_core(const Tensor& input, int steps, bool midpoint,
                                 const ScorerFn& scorer) {
  // zero-embedding baseline at every position
  Tensor accum(input.shape());
  for (int k = 1; k <= steps; ++k) {
    double alpha = midpoint ? (k - 0.5) / steps : double(k) / steps;
    Tensor point(input.shape());
    for (size_t i = 0; i < input.numel(); ++i) point[i] = alpha * input[i];
    ScoreGrad sg = scorer(point);
    for (size_t i = 0; i < accum.numel(); ++i) accum[i] += sg.grad[i];
  }
  for (size_t i = 0; i < accum.numel(); ++i) {
    accum[i] = input[i] * accum[i] / static_cast<double>(steps);
  }
  return accum;
}

namespace {

ScorerFn model_scorer(const LanguageModel& model, int target_class, HeadRef head,
                      ScoreKind score) {
  return [&model, target_class, head, score](const Tensor& embeddings) {
    return score_and_input_gradient(model, embeddings, target_class, head, score);
  };
}

}  // namespace

Tensor smoothgrad(const LanguageModel& model, std::span<const int> prefix, int target_class,
                  HeadRef head, const SaliencyConfig& config) {
  config.validate();
  Tensor base = lookup_embeddings(model, prefix);
  double variance = config.sg_variance_coefficient * model.embedding.weights.frobenius_norm();
  return smoothgrad_core(base, std::sqrt(variance), config.sg_samples, config.sg_seed,
                         model_scorer(model, target_class, head, config.score));
}

Tensor integrated_gradients(const LanguageModel& model, std::span<const int> prefix,
                            int target_class, HeadRef head, const SaliencyConfig& config) {
  config.validate();
  Tensor input = lookup_embeddings(model, prefix);
  return integrated_gradients_core(input, config.ig_steps, config.ig_midpoint,
                                   model_scorer(model, target_class, head, config.score));
}

std::vector<double> compose_gi(const Tensor& vectors, const Tensor& embeddings,
                               bool vectors_carry_input) {
  if (vectors.rank() != 2) {
    throw std::invalid_argument("compose_gi: expected [T,d] vectors, got " + vectors.shape_str());
  }
  size_t T = vectors.dim(0);
  size_t d = vectors.dim(1);
  std::vector<double> scores(T, 0.0);
  if (vectors_carry_input) {
    for (size_t t = 0; t < T; ++t)
      for (size_t i = 0; i < d; ++i) scores[t] += vectors.at(t, i);
    return scores;
  }
  if (!vectors.same_shape(embeddings)) {
    throw std::invalid_argument("compose_gi: vectors " + vectors.shape_str() +
                                " do not match embeddings " + embeddings.shape_str());
  }
  for (size_t t = 0; t < T; ++t)
    for (size_t i = 0; i < d; ++i) scores[t] += embeddings.at(t, i) * vectors.at(t, i);
  return scores;
}

std::vector<double> compose_vn(const Tensor& vectors) {
  if (vectors.rank() != 2 || vectors.dim(1) == 0) {
    throw std::invalid_argument("compose_vn: expected [T,d] vectors with d > 0, got " +
                                vectors.shape_str());
  }
  size_t T = vectors.dim(0);
  size_t d = vectors.dim(1);
  std::vector<double> scores(T, 0.0);
  for (size_t t = 0; t < T; ++t) {
    for (size_t i = 0; i < d; ++i) scores[t] += std::abs(vectors.at(t, i));
    scores[t] /= static_cast<double>(d);
  }
  return scores;
}

SaliencyMap word_saliency(const LanguageModel& model, std::span<const int> prefix,
                          int target_class, HeadRef head, const SaliencyConfig& config) {
  config.validate();
  Tensor vectors;
  switch (config.method) {
    case SaliencyMethod::kVanilla:
      vectors = vanilla(model, prefix, target_class, head, config.score);
      break;
    case SaliencyMethod::kSmoothGrad:
      vectors = smoothgrad(model, prefix, target_class, head, config);
      break;
    case SaliencyMethod::kIntegratedGradients:
      vectors = integrated_gradients(model, prefix, target_class, head, config);
      break;
  }
  SaliencyMap map;
  if (config.composition == Composition::kGradientInput) {
    bool carries_input = config.method == SaliencyMethod::kIntegratedGradients;
    Tensor emb;
    if (!carries_input) emb = lookup_embeddings(model, prefix);
    map.scores = compose_gi(vectors, emb, carries_input);
  } else {
    map.scores = compose_vn(vectors);
  }
  map.method = method_name(config.method);
  map.composition = composition_name(config.composition);
  map.target_class = target_class;
  map.model_id = model.model_id;
  return map;
}

}  // namespace salbench
