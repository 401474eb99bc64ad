#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "salbench/rng.hpp"
#include "salbench/saliency.hpp"

using namespace salbench;

namespace {

Vocabulary toy_vocab(size_t extra = 20) {
  Vocabulary v;
  for (size_t i = 0; i < extra; ++i) v.add("w" + std::to_string(i));
  return v;
}

LanguageModel toy_model(ArchKind arch, uint64_t seed) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 12;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.ffn_dim = 10;
  return init_model(cfg, toy_vocab(), seed, "toy-" + arch_name(arch));
}

// linear scorer f(e) = sum_w u_w . e_w, gradient u everywhere
ScorerFn linear_scorer(const Tensor& u) {
  return [&u](const Tensor& e) {
    double s = 0.0;
    for (size_t i = 0; i < e.numel(); ++i) s += u[i] * e[i];
    return ScoreGrad{s, u};
  };
}

// quadratic scorer f(e) = u.e + e.A e; its gradient is linear, so the
// SmoothGrad expectation still equals the vanilla gradient
ScorerFn quadratic_scorer(const Tensor& u, const Tensor& a) {
  return [&u, &a](const Tensor& e) {
    size_t n = e.numel();
    double s = 0.0;
    Tensor g(e.shape());
    for (size_t i = 0; i < n; ++i) s += u[i] * e[i];
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < n; ++j) {
        s += e[i] * a[i * n + j] * e[j];
        g[i] += a[i * n + j] * e[j];
        g[j] += e[i] * a[i * n + j];
      }
    }
    for (size_t i = 0; i < n; ++i) g[i] += u[i];
    return ScoreGrad{s, g};
  };
}

Tensor random_tensor(Shape shape, uint64_t seed, double scale = 1.0) {
  RngStream rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.vec()) v = rng.uniform(-scale, scale);
  return t;
}

}  // namespace

TEST_CASE("vanilla equals input_gradient bit for bit") {
  LanguageModel m = toy_model(ArchKind::kRecurrent, 3);
  std::vector<int> prefix = {2, 9, 4};
  Tensor a = vanilla(m, prefix, 5, HeadRef(m.vocab_head));
  Tensor b = input_gradient(m, prefix, 5, HeadRef(m.vocab_head));
  REQUIRE(a.numel() == b.numel());
  for (size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("vanilla on an all-zero model is zero") {
  LanguageModel m = toy_model(ArchKind::kRecurrent, 5);
  for (auto& [name, t] : m.named_parameters()) {
    for (auto& v : t->vec()) v = 0.0;
  }
  Tensor g = vanilla(m, std::vector<int>{2, 3}, 1, HeadRef(m.vocab_head));
  for (size_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("smoothgrad with zero variance equals vanilla for any sample count") {
  for (ArchKind arch : {ArchKind::kRecurrent, ArchKind::kAttention}) {
    LanguageModel m = toy_model(arch, 7);
    std::vector<int> prefix = {3, 8, 5, 11};
    SaliencyConfig cfg;
    cfg.sg_variance_coefficient = 0.0;
    cfg.sg_seed = 99;
    Tensor v = vanilla(m, prefix, 1, HeadRef(m.vocab_head));
    for (int samples : {1, 3, 10}) {
      cfg.sg_samples = samples;
      Tensor s = smoothgrad(m, prefix, 1, HeadRef(m.vocab_head), cfg);
      for (size_t i = 0; i < v.numel(); ++i) CHECK(std::abs(s[i] - v[i]) < 1e-12);
    }
  }
}

TEST_CASE("smoothgrad is reproducible for a fixed seed") {
  LanguageModel m = toy_model(ArchKind::kRecurrent, 11);
  std::vector<int> prefix = {4, 6, 9};
  SaliencyConfig cfg;
  cfg.sg_samples = 1;
  cfg.sg_seed = 1234;
  Tensor a = smoothgrad(m, prefix, 0, HeadRef(m.vocab_head), cfg);
  Tensor b = smoothgrad(m, prefix, 0, HeadRef(m.vocab_head), cfg);
  for (size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);

  cfg.sg_seed = 1235;
  Tensor c = smoothgrad(m, prefix, 0, HeadRef(m.vocab_head), cfg);
  bool any_different = false;
  for (size_t i = 0; i < a.numel(); ++i) any_different |= a[i] != c[i];
  CHECK(any_different);
}

TEST_CASE("smoothgrad on a linear scorer equals the vanilla gradient exactly") {
  Tensor u = random_tensor({3, 4}, 21);
  Tensor base = random_tensor({3, 4}, 22);
  Tensor mean = smoothgrad_core(base, 0.8, 50, 777, linear_scorer(u));
  for (size_t i = 0; i < u.numel(); ++i) CHECK(mean[i] == doctest::Approx(u[i]).epsilon(1e-12));
}

TEST_CASE("smoothgrad Monte-Carlo mean stays within three standard errors") {
  // the quadratic scorer has E[grad(x+noise)] = grad(x); samples genuinely vary
  size_t n = 6;
  Tensor u = random_tensor({1, n}, 31);
  Tensor a = random_tensor({n * n}, 32, 0.3);
  Tensor base = random_tensor({1, n}, 33);
  ScorerFn scorer = quadratic_scorer(u, a);

  int samples = 1000;
  double stddev = 0.5;
  Tensor mean = smoothgrad_core(base, stddev, samples, 2024, scorer);
  Tensor expect = scorer(base).grad;

  // empirical per-coordinate standard deviation over the same streams
  Tensor sq_sum({n});
  for (int k = 0; k < samples; ++k) {
    Tensor noisy = base;
    RngStream rng(mix_seed(2024, static_cast<uint64_t>(k)));
    for (auto& v : noisy.vec()) v += stddev * rng.gaussian();
    Tensor g = scorer(noisy).grad;
    for (size_t i = 0; i < n; ++i) sq_sum[i] += (g[i] - mean[i]) * (g[i] - mean[i]);
  }
  for (size_t i = 0; i < n; ++i) {
    double sd = std::sqrt(sq_sum[i] / (samples - 1));
    double se = sd / std::sqrt(double(samples));
    CHECK(std::abs(mean[i] - expect[i]) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("integrated gradients is exact on a linear scorer for any step count") {
  Tensor u = random_tensor({2, 5}, 41);
  Tensor input = random_tensor({2, 5}, 42);
  for (int steps : {1, 7, 100}) {
    Tensor attr = integrated_gradients_core(input, steps, false, linear_scorer(u));
    for (size_t i = 0; i < u.numel(); ++i) {
      CHECK(std::abs(attr[i] - u[i] * input[i]) < 1e-10);
    }
  }
}

TEST_CASE("integrated gradients vanishes when the input equals the baseline") {
  LanguageModel m = toy_model(ArchKind::kRecurrent, 43);
  std::vector<int> prefix = {2, 3, 4};
  // zero embeddings: make every looked-up row zero for these tokens
  for (int tok : prefix) {
    for (size_t c = 0; c < m.config.embed_dim; ++c) m.embedding.weights.at(tok, c) = 0.0;
  }
  SaliencyConfig cfg;
  cfg.ig_steps = 16;
  Tensor attr = integrated_gradients(m, prefix, 1, HeadRef(m.vocab_head), cfg);
  for (size_t i = 0; i < attr.numel(); ++i) CHECK(attr[i] == 0.0);
}

TEST_CASE("integrated gradients satisfies completeness on toy models") {
  for (ArchKind arch : {ArchKind::kRecurrent, ArchKind::kAttention}) {
    LanguageModel m = toy_model(arch, 47);
    std::vector<int> prefix = {3, 7, 12, 5};
    int target = 4;
    SaliencyConfig cfg;
    cfg.ig_steps = 100;
    Tensor attr = integrated_gradients(m, prefix, target, HeadRef(m.vocab_head), cfg);
    double total = 0.0;
    for (size_t i = 0; i < attr.numel(); ++i) total += attr[i];

    Tensor emb = lookup_embeddings(m, prefix);
    double f_input = score_only(m, emb, target, HeadRef(m.vocab_head));
    double f_base = score_only(m, Tensor(emb.shape()), target, HeadRef(m.vocab_head));
    double diff = f_input - f_base;
    CHECK(std::abs(total - diff) <= 1e-3 * std::abs(diff));
  }
}

TEST_CASE("completeness error is non-increasing as the step count doubles") {
  LanguageModel m = toy_model(ArchKind::kRecurrent, 53);
  std::vector<int> prefix = {2, 9, 6, 13};
  int target = 3;
  Tensor emb = lookup_embeddings(m, prefix);
  double diff = score_only(m, emb, target, HeadRef(m.vocab_head)) -
                score_only(m, Tensor(emb.shape()), target, HeadRef(m.vocab_head));
  double prev = 1e300;
  for (int steps : {25, 50, 100, 200}) {
    SaliencyConfig cfg;
    cfg.ig_steps = steps;
    Tensor attr = integrated_gradients(m, prefix, target, HeadRef(m.vocab_head), cfg);
    double total = 0.0;
    for (size_t i = 0; i < attr.numel(); ++i) total += attr[i];
    double err = std::abs(total - diff);
    CHECK(err <= prev + 1e-9);
    prev = err;
  }
}

TEST_CASE("compose_gi arithmetic") {
  Tensor vectors({1, 2}, {0.5, -0.25});
  Tensor emb({1, 2}, {1.0, 2.0});
  auto scores = compose_gi(vectors, emb, false);
  CHECK(scores[0] == doctest::Approx(0.0));

  Tensor zeros({2, 3});
  auto z = compose_gi(zeros, Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), false);
  CHECK(z[0] == 0.0);
  CHECK(z[1] == 0.0);

  CHECK_THROWS_AS(compose_gi(Tensor({1, 2}), Tensor({1, 3}), false), std::invalid_argument);
}

TEST_CASE("compose_vn arithmetic and homogeneity") {
  Tensor v({1, 2}, {3.0, -4.0});
  CHECK(compose_vn(v)[0] == doctest::Approx(3.5));
  CHECK(compose_vn(Tensor({1, 4}))[0] == 0.0);

  Tensor scaled = v;
  for (auto& x : scaled.vec()) x *= 2.5;
  CHECK(compose_vn(scaled)[0] == doctest::Approx(2.5 * 3.5));
}

TEST_CASE("word_saliency dispatches methods and compositions with provenance") {
  LanguageModel m = toy_model(ArchKind::kRecurrent, 59);
  std::vector<int> prefix = {2, 5, 9};

  SaliencyConfig cfg;
  cfg.method = SaliencyMethod::kSmoothGrad;
  cfg.sg_variance_coefficient = 0.0;
  cfg.sg_samples = 4;
  SaliencyMap sg = word_saliency(m, prefix, 1, HeadRef(m.vocab_head), cfg);

  cfg.method = SaliencyMethod::kVanilla;
  SaliencyMap v = word_saliency(m, prefix, 1, HeadRef(m.vocab_head), cfg);

  REQUIRE(sg.scores.size() == prefix.size());
  for (size_t i = 0; i < v.scores.size(); ++i) {
    CHECK(std::abs(sg.scores[i] - v.scores[i]) < 1e-12);
  }
  CHECK(v.method == "v");
  CHECK(sg.method == "sg");
  CHECK(v.composition == "gi");
  CHECK(v.target_class == 1);
  CHECK(v.model_id == m.model_id);
}

TEST_CASE("IG word saliency matches an independent fused-loop recomputation") {
  LanguageModel m = toy_model(ArchKind::kAttention, 61);
  std::vector<int> prefix = {4, 11, 7};
  int target = 2;
  int steps = 40;

  SaliencyConfig cfg;
  cfg.method = SaliencyMethod::kIntegratedGradients;
  cfg.ig_steps = steps;
  SaliencyMap map = word_saliency(m, prefix, target, HeadRef(m.vocab_head), cfg);

  // fused oracle: accumulate per-word dot products inside the Riemann loop
  Tensor emb = lookup_embeddings(m, prefix);
  std::vector<double> expect(prefix.size(), 0.0);
  for (int k = 1; k <= steps; ++k) {
    double alpha = double(k) / steps;
    Tensor point(emb.shape());
    for (size_t i = 0; i < emb.numel(); ++i) point[i] = alpha * emb[i];
    ScoreGrad sg = score_and_input_gradient(m, point, target, HeadRef(m.vocab_head));
    for (size_t t = 0; t < prefix.size(); ++t) {
      for (size_t c = 0; c < m.config.embed_dim; ++c) {
        expect[t] += emb.at(t, c) * sg.grad.at(t, c) / steps;
      }
    }
  }
  for (size_t t = 0; t < prefix.size(); ++t) {
    CHECK(std::abs(map.scores[t] - expect[t]) < 1e-10);
  }
}

TEST_CASE("VN scores are non-negative and GI scores can be negative") {
  RngStream rng(67);
  bool saw_negative_gi = false;
  for (int round = 0; round < 8; ++round) {
    LanguageModel m = toy_model(round % 2 ? ArchKind::kRecurrent : ArchKind::kAttention,
                                rng.next_u64());
    std::vector<int> prefix = {2, 8, 5, 12};
    SaliencyConfig cfg;
    cfg.method = SaliencyMethod::kVanilla;
    cfg.composition = Composition::kVectorNorm;
    SaliencyMap vn = word_saliency(m, prefix, 1, HeadRef(m.vocab_head), cfg);
    for (double s : vn.scores) CHECK(s >= 0.0);

    cfg.composition = Composition::kGradientInput;
    SaliencyMap gi = word_saliency(m, prefix, 1, HeadRef(m.vocab_head), cfg);
    for (double s : gi.scores) saw_negative_gi |= s < 0.0;
  }
  CHECK(saw_negative_gi);
}

TEST_CASE("saliency maps serialize to JSON and back") {
  SaliencyMap map;
  map.scores = {0.5, -1.25, 0.0};
  map.method = "ig";
  map.composition = "gi";
  map.target_class = 1;
  map.model_id = "toy";
  std::vector<std::string> tokens = {"the", "consultant", "laughs"};
  std::string text = to_json(map, tokens);
  std::vector<std::string> tokens_back;
  SaliencyMap back = saliency_map_from_json(text, &tokens_back);
  CHECK(back.scores == map.scores);
  CHECK(back.method == map.method);
  CHECK(back.composition == map.composition);
  CHECK(back.target_class == map.target_class);
  CHECK(tokens_back == tokens);
}

TEST_CASE("config validation") {
  SaliencyConfig cfg;
  cfg.sg_samples = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.ig_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.sg_variance_coefficient = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
