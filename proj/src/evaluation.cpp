#include "salbench/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "salbench/rng.hpp"

namespace salbench {

std::string scenario_name(Scenario s) {
  return s == Scenario::kExpected ? "expected" : "alternative";
}

Scenario classify_scenario(int predicted_tag, int gold_tag) {
  return predicted_tag == gold_tag ? Scenario::kExpected : Scenario::kAlternative;
}

bool plausibility_test(const std::vector<double>& scores, const std::vector<size_t>& cues,
                       const std::vector<size_t>& attractors, Scenario scenario) {
  if (cues.empty() || attractors.empty()) {
    throw std::invalid_argument("plausibility_test: cue and attractor sets must be non-empty");
  }
  auto max_at = [&](const std::vector<size_t>& set) {
    double best = -1e300;
    for (size_t i : set) {
      if (i >= scores.size()) {
        throw std::invalid_argument("plausibility_test: index out of range");
      }
      best = std::max(best, scores[i]);
    }
    return best;
  };
  double mc = max_at(cues);
  double ma = max_at(attractors);
  return scenario == Scenario::kExpected ? mc > ma : mc < ma;
}

namespace {

AggregateStats aggregate(const std::vector<std::pair<Scenario, double>>& values, size_t excluded) {
  AggregateStats s;
  s.excluded = excluded;
  s.n = values.size();
  if (s.n == 0) return s;
  double sum_all = 0.0, sum_exp = 0.0, sum_alt = 0.0;
  size_t n_exp = 0, n_alt = 0;
  for (const auto& [scenario, v] : values) {
    sum_all += v;
    if (scenario == Scenario::kExpected) {
      sum_exp += v;
      ++n_exp;
    } else {
      sum_alt += v;
      ++n_alt;
    }
  }
  s.all = sum_all / static_cast<double>(s.n);
  s.expected = n_exp ? sum_exp / static_cast<double>(n_exp) : 0.0;
  s.alternative = n_alt ? sum_alt / static_cast<double>(n_alt) : 0.0;
  s.occ_expected = static_cast<double>(n_exp) / static_cast<double>(s.n);
  s.occ_alternative = static_cast<double>(n_alt) / static_cast<double>(s.n);
  return s;
}

}  // namespace

AggregateStats aggregate_plausibility(const std::vector<PlausibilityRecord>& records,
                                      size_t excluded) {
  std::vector<std::pair<Scenario, double>> values;
  values.reserve(records.size());
  for (const auto& r : records) values.emplace_back(r.scenario, r.pass ? 1.0 : 0.0);
  return aggregate(values, excluded);
}

AggregateStats aggregate_consistency(const std::vector<ConsistencyRecord>& records,
                                     size_t excluded) {
  std::vector<std::pair<Scenario, double>> values;
  values.reserve(records.size());
  for (const auto& r : records) values.emplace_back(r.scenario, r.pearson_r);
  return aggregate(values, excluded);
}

std::string EvalMethod::method_label() const {
  switch (kind) {
    case Kind::kRandom: return "random";
    case Kind::kNearest: return "nearest";
    case Kind::kSaliency: return method_name(config.method);
  }
  return "?";
}

std::string EvalMethod::composition_label() const {
  return kind == Kind::kSaliency ? composition_name(config.composition) : "none";
}

SaliencyMap baseline_random(const TestInstance& instance, uint64_t seed) {
  RngStream rng(seed);
  SaliencyMap map;
  map.scores.resize(instance.tokens.size());
  for (auto& v : map.scores) v = rng.uniform();
  map.method = "random";
  map.composition = "none";
  map.target_class = 0;
  map.model_id = "baseline";
  return map;
}

SaliencyMap baseline_nearest(const TestInstance& instance) {
  if (instance.cues.empty() && instance.attractors.empty()) {
    throw std::invalid_argument("baseline_nearest: cue and attractor sets are both empty");
  }
  size_t best = 0;
  for (size_t i : instance.cues) best = std::max(best, i);
  for (size_t i : instance.attractors) best = std::max(best, i);
  SaliencyMap map;
  map.scores.assign(instance.tokens.size(), 0.0);
  map.scores[best] = 1.0;
  map.method = "nearest";
  map.composition = "none";
  map.target_class = 0;
  map.model_id = "baseline";
  return map;
}

namespace {

SaliencyMap instance_saliency(const LanguageModel& model, const ProbeHead& probe,
                              const EvalMethod& method, const TestInstance& instance,
                              size_t index, int target_class, uint64_t master_seed) {
  switch (method.kind) {
    case EvalMethod::Kind::kRandom:
      return baseline_random(instance, mix_seed(mix_seed(master_seed, "random"), index));
    case EvalMethod::Kind::kNearest:
      return baseline_nearest(instance);
    case EvalMethod::Kind::kSaliency: {
      SaliencyConfig cfg = method.config;
      // one independent noise stream per (instance, method); models evaluated
      // on the same instance share it, so an exact model copy reproduces the
      // exact map
      cfg.sg_seed = mix_seed(mix_seed(master_seed, method.method_label()), index);
      std::vector<int> ids = model.vocab.encode(instance.tokens);
      return word_saliency(model, ids, target_class, HeadRef(probe), cfg);
    }
  }
  throw std::logic_error("instance_saliency: unreachable");
}

}  // namespace

PlausibilityOutcome run_plausibility(const LanguageModel& model, const ProbeHead& probe,
                                     const EvalMethod& method,
                                     const std::vector<TestInstance>& instances,
                                     uint64_t master_seed) {
  size_t n = instances.size();
  std::vector<std::optional<PlausibilityRecord>> slots(n);
  std::vector<int> status(n, 0);  // 0 ok, 1 excluded, 2 failed

#pragma omp parallel for schedule(dynamic)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    size_t i = static_cast<size_t>(ii);
    const TestInstance& inst = instances[i];
    try {
      if (inst.cues.empty() || inst.attractors.empty()) {
        status[i] = 1;
        continue;
      }
      std::vector<int> ids = model.vocab.encode(inst.tokens);
      auto [tag, logits] = predict_tag(model, ids, probe);
      Scenario scenario = classify_scenario(tag, inst.gold_tag);
      SaliencyMap map = instance_saliency(model, probe, method, inst, i, tag, master_seed);
      PlausibilityRecord rec;
      rec.instance = i;
      rec.scenario = scenario;
      rec.pass = plausibility_test(map.scores, inst.cues, inst.attractors, scenario);
      double mc = -1e300, ma = -1e300;
      for (size_t c : inst.cues) mc = std::max(mc, map.scores[c]);
      for (size_t a : inst.attractors) ma = std::max(ma, map.scores[a]);
      rec.max_cue = mc;
      rec.max_attractor = ma;
      slots[i] = rec;
    } catch (const std::exception&) {
      status[i] = 2;
    }
  }

  PlausibilityOutcome out;
  size_t excluded = 0;
  for (size_t i = 0; i < n; ++i) {
    if (slots[i]) out.records.push_back(*slots[i]);
    else ++excluded;
  }
  out.stats = aggregate_plausibility(out.records, excluded);
  return out;
}

PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("pearson: inputs must share a length of at least 2");
  }
  size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double dx = x[i] - mx;
    double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, false};
  return {sxy / std::sqrt(sxx * syy), true};
}

ConsistencyOutcome input_consistency(const LanguageModel& model, const ProbeHead& probe,
                                     const EvalMethod& method,
                                     const std::vector<TestInstance>& instances,
                                     const std::vector<PerturbationPair>& pairs,
                                     uint64_t master_seed) {
  size_t n = pairs.size();
  std::vector<std::optional<ConsistencyRecord>> slots(n);
  std::vector<std::optional<std::pair<SaliencyMap, SaliencyMap>>> map_slots(n);

#pragma omp parallel for schedule(dynamic)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    size_t i = static_cast<size_t>(ii);
    try {
      const TestInstance& a = instances.at(pairs[i].first);
      const TestInstance& b = instances.at(pairs[i].second);
      if (a.tokens.size() != b.tokens.size()) continue;  // violates the pair invariant
      std::vector<int> ids_a = model.vocab.encode(a.tokens);
      std::vector<int> ids_b = model.vocab.encode(b.tokens);
      auto [tag_a, logits_a] = predict_tag(model, ids_a, probe);
      auto [tag_b, logits_b] = predict_tag(model, ids_b, probe);
      SaliencyMap map_a =
          instance_saliency(model, probe, method, a, pairs[i].first, tag_a, master_seed);
      SaliencyMap map_b =
          instance_saliency(model, probe, method, b, pairs[i].second, tag_b, master_seed);
      PearsonResult r = pearson(map_a.scores, map_b.scores);
      if (!r.defined) {
        map_slots[i] = std::make_pair(std::move(map_a), std::move(map_b));
        continue;  // constant scores: Pearson undefined, excluded and counted
      }
      ConsistencyRecord rec;
      rec.index = i;
      rec.scenario = classify_scenario(tag_a, a.gold_tag);
      rec.pearson_r = r.r;
      slots[i] = rec;
      map_slots[i] = std::make_pair(std::move(map_a), std::move(map_b));
    } catch (const std::exception&) {
    }
  }

  ConsistencyOutcome out;
  size_t excluded = 0;
  for (size_t i = 0; i < n; ++i) {
    if (slots[i]) {
      out.records.push_back(*slots[i]);
      out.maps.push_back(std::move(*map_slots[i]));
    } else {
      ++excluded;
    }
  }
  out.stats = aggregate_consistency(out.records, excluded);
  return out;
}

ConsistencyOutcome model_consistency(const LanguageModel& teacher, const ProbeHead& teacher_probe,
                                     const LanguageModel& student, const ProbeHead& student_probe,
                                     const EvalMethod& method,
                                     const std::vector<TestInstance>& instances,
                                     uint64_t master_seed) {
  if (teacher.vocab.size() != student.vocab.size()) {
    throw std::invalid_argument("model_consistency: teacher and student must share a vocabulary");
  }
  size_t n = instances.size();
  std::vector<std::optional<ConsistencyRecord>> slots(n);
  std::vector<std::optional<std::pair<SaliencyMap, SaliencyMap>>> map_slots(n);

#pragma omp parallel for schedule(dynamic)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    size_t i = static_cast<size_t>(ii);
    const TestInstance& inst = instances[i];
    try {
      std::vector<int> ids = teacher.vocab.encode(inst.tokens);
      auto [teacher_tag, t_logits] = predict_tag(teacher, ids, teacher_probe);
      auto [student_tag, s_logits] = predict_tag(student, ids, student_probe);
      SaliencyMap map_t =
          instance_saliency(teacher, teacher_probe, method, inst, i, teacher_tag, master_seed);
      SaliencyMap map_s =
          instance_saliency(student, student_probe, method, inst, i, student_tag, master_seed);
      PearsonResult r = pearson(map_t.scores, map_s.scores);
      if (!r.defined) {
        map_slots[i] = std::make_pair(std::move(map_t), std::move(map_s));
        continue;
      }
      ConsistencyRecord rec;
      rec.index = i;
      rec.scenario = classify_scenario(teacher_tag, inst.gold_tag);
      rec.pearson_r = r.r;
      slots[i] = rec;
      map_slots[i] = std::make_pair(std::move(map_t), std::move(map_s));
    } catch (const std::exception&) {
    }
  }

  ConsistencyOutcome out;
  size_t excluded = 0;
  for (size_t i = 0; i < n; ++i) {
    if (slots[i]) {
      out.records.push_back(*slots[i]);
      out.maps.push_back(std::move(*map_slots[i]));
    } else {
      ++excluded;
    }
  }
  out.stats = aggregate_consistency(out.records, excluded);
  return out;
}

}  // namespace salbench
