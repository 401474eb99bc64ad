#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "salbench/models.hpp"
#include "salbench/rng.hpp"

using namespace salbench;

namespace {

Vocabulary toy_vocab(size_t extra = 20) {
  Vocabulary v;
  for (size_t i = 0; i < extra; ++i) v.add("w" + std::to_string(i));
  return v;
}

ModelConfig small_config(ArchKind arch) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 12;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.ffn_dim = 10;
  return cfg;
}

void zero_params(LanguageModel& m) {
  for (auto& [name, t] : m.named_parameters()) {
    for (auto& v : t->vec()) v = 0.0;
  }
}

}  // namespace

TEST_CASE("all-zero parameters give uniform vocabulary logits") {
  for (ArchKind arch : {ArchKind::kRecurrent, ArchKind::kAttention}) {
    LanguageModel m = init_model(small_config(arch), toy_vocab(), 1, "zero");
    zero_params(m);
    if (arch == ArchKind::kAttention) {
      // layer norm of a zero row is zero with zero gain, so the head input is zero
      ModelOutput out = forward(m, std::vector<int>{2, 3, 4}, HeadRef(m.vocab_head));
      for (size_t i = 1; i < out.logits.numel(); ++i) {
        CHECK(out.logits[i] == doctest::Approx(out.logits[0]));
      }
    } else {
      ModelOutput out = forward(m, std::vector<int>{2, 3, 4}, HeadRef(m.vocab_head));
      for (size_t i = 1; i < out.logits.numel(); ++i) {
        CHECK(out.logits[i] == doctest::Approx(out.logits[0]));
      }
    }
  }
}

TEST_CASE("single-token prefix matches a hand-computed LSTM cell step") {
  ModelConfig cfg = small_config(ArchKind::kRecurrent);
  cfg.layers = 1;
  LanguageModel m = init_model(cfg, toy_vocab(), 7, "cell");
  int token = 5;
  ModelOutput out = forward(m, std::vector<int>{token}, HeadRef(m.vocab_head));

  // hand-rolled cell: z = W x + b (h_prev = 0), gates in i,f,g,o order
  size_t h = cfg.hidden_dim, d = cfg.embed_dim;
  const RecurrentLayer& layer = m.recurrent[0];
  std::vector<double> x(d);
  for (size_t c = 0; c < d; ++c) x[c] = m.embedding.weights.at(token, c);
  std::vector<double> z(4 * h);
  for (size_t r = 0; r < 4 * h; ++r) {
    double acc = layer.bias[r];
    for (size_t c = 0; c < d; ++c) acc += layer.w_input.at(r, c) * x[c];
    z[r] = acc;
  }
  auto sigm = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (size_t j = 0; j < h; ++j) {
    double gi = sigm(z[j]);
    double gf = sigm(z[h + j]);
    double gc = std::tanh(z[2 * h + j]);
    double go = sigm(z[3 * h + j]);
    double c = gf * 0.0 + gi * gc;
    double expect = go * std::tanh(c);
    CHECK(out.hidden.at(0, j) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("recurrent output at position t ignores later tokens") {
  LanguageModel m = init_model(small_config(ArchKind::kRecurrent), toy_vocab(), 11, "causal");
  std::vector<int> prefix = {2, 7, 4};
  std::vector<int> extended = {2, 7, 4, 9, 12};
  ModelOutput a = forward(m, prefix, HeadRef(m.vocab_head));
  ModelOutput b = forward(m, extended, HeadRef(m.vocab_head));
  for (size_t t = 0; t < prefix.size(); ++t) {
    for (size_t j = 0; j < m.hidden_dim(); ++j) {
      CHECK(a.hidden.at(t, j) == doctest::Approx(b.hidden.at(t, j)).epsilon(1e-15));
    }
  }
}

TEST_CASE("attention logits at the final position are stable under truncation of later tokens") {
  LanguageModel m = init_model(small_config(ArchKind::kAttention), toy_vocab(), 13, "mask");
  std::vector<int> prefix = {3, 8, 5, 10};
  std::vector<int> extended = {3, 8, 5, 10, 14, 2};
  ModelOutput a = forward(m, prefix, HeadRef(m.vocab_head));
  // score the extended run at the original final position
  Tensor emb = lookup_embeddings(m, extended);
  for (size_t c = 0; c < m.vocab.size(); ++c) {
    double s = score_only(m, emb, static_cast<int>(c), HeadRef(m.vocab_head), ScoreKind::kLogit,
                          static_cast<long>(prefix.size()) - 1);
    CHECK(s == doctest::Approx(a.logits[c]).epsilon(1e-12));
  }
}

TEST_CASE("causal mask yields exactly zero gradient beyond the scored position") {
  LanguageModel m = init_model(small_config(ArchKind::kAttention), toy_vocab(), 17, "maskgrad");
  std::vector<int> prefix = {3, 8, 5, 10, 14, 2};
  Tensor emb = lookup_embeddings(m, prefix);
  long pos = 2;
  ScoreGrad sg = score_and_input_gradient(m, emb, 4, HeadRef(m.vocab_head), ScoreKind::kLogit, pos);
  for (size_t t = 0; t < prefix.size(); ++t) {
    for (size_t c = 0; c < m.config.embed_dim; ++c) {
      if (static_cast<long>(t) > pos) {
        CHECK(sg.grad.at(t, c) == 0.0);
      }
    }
  }
}

TEST_CASE("input gradient has shape (prefix length, embedding dim)") {
  for (ArchKind arch : {ArchKind::kRecurrent, ArchKind::kAttention}) {
    LanguageModel m = init_model(small_config(arch), toy_vocab(), 19, "shape");
    std::vector<int> prefix = {5, 6, 7, 8, 9};
    Tensor g = input_gradient(m, prefix, 3, HeadRef(m.vocab_head));
    CHECK(g.shape() == Shape{5, m.config.embed_dim});
  }
}

TEST_CASE("input gradient matches finite differences on random models") {
  RngStream rng(333);
  for (ArchKind arch : {ArchKind::kRecurrent, ArchKind::kAttention}) {
    LanguageModel m = init_model(small_config(arch), toy_vocab(), rng.next_u64(), "fd");
    ProbeHead probe = init_probe(m.hidden_dim(), {"A", "B"}, rng.next_u64());
    for (int round = 0; round < 5; ++round) {
      std::vector<int> prefix;
      size_t len = 2 + rng.uniform_index(4);
      for (size_t i = 0; i < len; ++i) {
        prefix.push_back(static_cast<int>(rng.uniform_index(toy_vocab().size())));
      }
      int target = static_cast<int>(rng.uniform_index(2));
      Tensor emb = lookup_embeddings(m, prefix);
      // finite differences against the analytic gradient, coordinate by coordinate
      ScoreGrad sg = score_and_input_gradient(m, emb, target, HeadRef(probe));
      double eps = 1e-5;
      double worst = 0.0;
      Tensor x = emb;
      for (size_t i = 0; i < x.numel(); ++i) {
        double orig = x[i];
        x[i] = orig + eps;
        double fp = score_only(m, x, target, HeadRef(probe));
        x[i] = orig - eps;
        double fm = score_only(m, x, target, HeadRef(probe));
        x[i] = orig;
        double numeric = (fp - fm) / (2 * eps);
        double err = std::abs(sg.grad[i] - numeric) /
                     (std::abs(sg.grad[i]) + std::abs(numeric) + 1e-12);
        worst = std::max(worst, err);
      }
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("full recurrent LM log-probability gradient passes gradient_check") {
  LanguageModel m = init_model(small_config(ArchKind::kRecurrent), toy_vocab(), 21, "lp");
  std::vector<int> prefix = {4, 9, 2, 7};
  Tensor emb = lookup_embeddings(m, prefix);
  // the spec's validation harness formulation: scalar function over the
  // injected embeddings
  ScoreGrad sg = score_and_input_gradient(m, emb, 6, HeadRef(m.vocab_head), ScoreKind::kLogProb);
  double eps = 1e-5;
  double worst = 0.0;
  Tensor x = emb;
  for (size_t i = 0; i < x.numel(); ++i) {
    double orig = x[i];
    x[i] = orig + eps;
    double fp = score_only(m, x, 6, HeadRef(m.vocab_head), ScoreKind::kLogProb);
    x[i] = orig - eps;
    double fm = score_only(m, x, 6, HeadRef(m.vocab_head), ScoreKind::kLogProb);
    x[i] = orig;
    double numeric = (fp - fm) / (2 * eps);
    worst = std::max(worst, std::abs(sg.grad[i] - numeric) /
                                (std::abs(sg.grad[i]) + std::abs(numeric) + 1e-12));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("zero head row for the target class gives an exactly zero gradient") {
  LanguageModel m = init_model(small_config(ArchKind::kRecurrent), toy_vocab(), 23, "zerohead");
  ProbeHead probe = init_probe(m.hidden_dim(), {"A", "B"}, 5);
  for (size_t c = 0; c < m.hidden_dim(); ++c) probe.weight.at(0, c) = 0.0;
  probe.bias[0] = 0.0;
  Tensor g = input_gradient(m, std::vector<int>{2, 3, 4}, 0, HeadRef(probe));
  for (size_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("predict_tag follows argmax with ties toward class 0") {
  LanguageModel m = init_model(small_config(ArchKind::kRecurrent), toy_vocab(), 29, "tag");
  ProbeHead probe = init_probe(m.hidden_dim(), {"SINGULAR", "PLURAL"}, 31);

  // logits [2, -1] -> class 0
  for (auto& v : probe.weight.vec()) v = 0.0;
  probe.bias[0] = 2.0;
  probe.bias[1] = -1.0;
  CHECK(predict_tag(m, std::vector<int>{2, 3}, probe).first == 0);

  // exact tie -> class 0
  probe.bias[0] = 0.0;
  probe.bias[1] = 0.0;
  CHECK(predict_tag(m, std::vector<int>{2, 3}, probe).first == 0);

  probe.bias[1] = 3.0;
  CHECK(predict_tag(m, std::vector<int>{2, 3}, probe).first == 1);
}

TEST_CASE("predict_tag is a pure function of parameters and prefix") {
  LanguageModel m = init_model(small_config(ArchKind::kAttention), toy_vocab(), 37, "pure");
  ProbeHead probe = init_probe(m.hidden_dim(), {"A", "B"}, 41);
  std::vector<int> prefix = {5, 9, 3};
  auto [t1, l1] = predict_tag(m, prefix, probe);
  auto [t2, l2] = predict_tag(m, prefix, probe);
  CHECK(t1 == t2);
  for (size_t i = 0; i < 2; ++i) CHECK(l1[i] == l2[i]);
}

TEST_CASE("forward rejects an empty prefix and out-of-range ids") {
  LanguageModel m = init_model(small_config(ArchKind::kRecurrent), toy_vocab(), 43, "err");
  CHECK_THROWS_AS(forward(m, std::vector<int>{}, HeadRef(m.vocab_head)), std::invalid_argument);
  CHECK_THROWS_AS(forward(m, std::vector<int>{1, 100000}, HeadRef(m.vocab_head)),
                  std::invalid_argument);
}

TEST_CASE("model checkpoints round-trip bit-exactly") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "salbench_ckpt_test";
  fs::create_directories(dir);

  for (ArchKind arch : {ArchKind::kRecurrent, ArchKind::kAttention}) {
    LanguageModel m = init_model(small_config(arch), toy_vocab(), 47, "roundtrip");
    std::string path = (dir / (arch_name(arch) + ".bin")).string();
    save_model(m, path);
    LanguageModel r = load_model(path);

    CHECK(r.model_id == m.model_id);
    CHECK(r.vocab.size() == m.vocab.size());
    CHECK(r.vocab.token(5) == m.vocab.token(5));
    auto pa = m.named_parameters();
    auto pb = r.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i].first == pb[i].first);
      REQUIRE(pa[i].second->numel() == pb[i].second->numel());
      for (size_t j = 0; j < pa[i].second->numel(); ++j) {
        CHECK((*pa[i].second)[j] == (*pb[i].second)[j]);  // bitwise
      }
    }
    // loaded model computes the same logits
    ModelOutput oa = forward(m, std::vector<int>{2, 3, 4}, HeadRef(m.vocab_head));
    ModelOutput ob = forward(r, std::vector<int>{2, 3, 4}, HeadRef(r.vocab_head));
    for (size_t i = 0; i < oa.logits.numel(); ++i) CHECK(oa.logits[i] == ob.logits[i]);
  }

  ProbeHead p = init_probe(12, {"FEMININE", "MASCULINE"}, 53);
  std::string ppath = (dir / "probe.bin").string();
  save_probe(p, ppath);
  ProbeHead q = load_probe(ppath);
  CHECK(q.tags == p.tags);
  for (size_t i = 0; i < p.weight.numel(); ++i) CHECK(p.weight[i] == q.weight[i]);
  fs::remove_all(dir);
}
