#include "salbench/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "salbench/rng.hpp"

namespace salbench {

using nlohmann::json;

std::string arch_name(ArchKind arch) {
  return arch == ArchKind::kRecurrent ? "recurrent" : "attention";
}

ArchKind arch_from_name(const std::string& name) {
  if (name == "recurrent" || name == "lstm") return ArchKind::kRecurrent;
  if (name == "attention" || name == "transformer") return ArchKind::kAttention;
  throw std::invalid_argument("unknown architecture: " + name);
}

std::vector<std::pair<std::string, Tensor*>> LanguageModel::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("embedding.weights", &embedding.weights);
  for (size_t l = 0; l < recurrent.size(); ++l) {
    auto p = "recurrent." + std::to_string(l) + ".";
    out.emplace_back(p + "w_input", &recurrent[l].w_input);
    out.emplace_back(p + "w_recur", &recurrent[l].w_recur);
    out.emplace_back(p + "bias", &recurrent[l].bias);
  }
  for (size_t l = 0; l < attention.size(); ++l) {
    auto p = "attention." + std::to_string(l) + ".";
    auto& a = attention[l];
    out.emplace_back(p + "wq", &a.wq);
    out.emplace_back(p + "wk", &a.wk);
    out.emplace_back(p + "wv", &a.wv);
    out.emplace_back(p + "wo", &a.wo);
    out.emplace_back(p + "ln1_gain", &a.ln1_gain);
    out.emplace_back(p + "ln1_shift", &a.ln1_shift);
    out.emplace_back(p + "ffn_w1", &a.ffn_w1);
    out.emplace_back(p + "ffn_b1", &a.ffn_b1);
    out.emplace_back(p + "ffn_w2", &a.ffn_w2);
    out.emplace_back(p + "ffn_b2", &a.ffn_b2);
    out.emplace_back(p + "ln2_gain", &a.ln2_gain);
    out.emplace_back(p + "ln2_shift", &a.ln2_shift);
  }
  if (config.arch == ArchKind::kAttention) {
    out.emplace_back("final_ln.gain", &final_ln_gain);
    out.emplace_back("final_ln.shift", &final_ln_shift);
  }
  out.emplace_back("vocab_head.weight", &vocab_head.weight);
  out.emplace_back("vocab_head.bias", &vocab_head.bias);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> LanguageModel::named_parameters() const {
  auto mut = const_cast<LanguageModel*>(this)->named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [name, t] : mut) out.emplace_back(name, t);
  return out;
}

size_t LanguageModel::parameter_count() const {
  size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t->numel();
  return n;
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, RngStream& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.vec()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

LanguageModel init_model(const ModelConfig& config, Vocabulary vocab, uint64_t seed,
                         std::string model_id) {
  if (config.layers < 1) throw std::invalid_argument("init_model: layer count must be >= 1");
  ModelConfig cfg = config;
  if (cfg.arch == ArchKind::kAttention) {
    if (cfg.embed_dim % cfg.heads != 0) {
      throw std::invalid_argument("init_model: embed_dim must be divisible by head count");
    }
    cfg.hidden_dim = cfg.embed_dim;
  }

  RngStream rng(mix_seed(seed, "model-init"));
  LanguageModel m;
  m.config = cfg;
  m.vocab = std::move(vocab);
  m.model_id = std::move(model_id);

  size_t v = m.vocab.size();
  size_t d = cfg.embed_dim;
  size_t h = cfg.hidden_dim;
  m.embedding.weights = uniform_tensor({v, d}, 0.1, rng);

  if (cfg.arch == ArchKind::kRecurrent) {
    for (size_t l = 0; l < cfg.layers; ++l) {
      size_t in = l == 0 ? d : h;
      RecurrentLayer layer;
      layer.w_input = uniform_tensor({4 * h, in}, 1.0 / std::sqrt(double(in)), rng);
      layer.w_recur = uniform_tensor({4 * h, h}, 1.0 / std::sqrt(double(h)), rng);
      layer.bias = Tensor({4 * h});
      // forget-gate bias starts positive so early training keeps state
      for (size_t i = h; i < 2 * h; ++i) layer.bias[i] = 1.0;
      m.recurrent.push_back(std::move(layer));
    }
  } else {
    for (size_t l = 0; l < cfg.layers; ++l) {
      AttentionLayer layer;
      double s = 1.0 / std::sqrt(double(d));
      layer.wq = uniform_tensor({d, d}, s, rng);
      layer.wk = uniform_tensor({d, d}, s, rng);
      layer.wv = uniform_tensor({d, d}, s, rng);
      layer.wo = uniform_tensor({d, d}, s, rng);
      layer.ln1_gain = Tensor::full({d}, 1.0);
      layer.ln1_shift = Tensor({d});
      layer.ffn_w1 = uniform_tensor({d, cfg.ffn_dim}, s, rng);
      layer.ffn_b1 = Tensor({cfg.ffn_dim});
      layer.ffn_w2 = uniform_tensor({cfg.ffn_dim, d}, 1.0 / std::sqrt(double(cfg.ffn_dim)), rng);
      layer.ffn_b2 = Tensor({d});
      layer.ln2_gain = Tensor::full({d}, 1.0);
      layer.ln2_shift = Tensor({d});
      m.attention.push_back(std::move(layer));
    }
    m.final_ln_gain = Tensor::full({d}, 1.0);
    m.final_ln_shift = Tensor({d});
  }

  m.vocab_head.weight = uniform_tensor({v, h}, 1.0 / std::sqrt(double(h)), rng);
  m.vocab_head.bias = Tensor({v});
  return m;
}

ProbeHead init_probe(size_t hidden_dim, std::array<std::string, 2> tags, uint64_t seed) {
  RngStream rng(mix_seed(seed, "probe-init"));
  ProbeHead p;
  p.weight = uniform_tensor({2, hidden_dim}, 1.0 / std::sqrt(double(hidden_dim)), rng);
  p.bias = Tensor({2});
  p.tags = std::move(tags);
  return p;
}

Tensor position_encodings(size_t prefix_len, size_t dim) {
  Tensor p({prefix_len, dim});
  for (size_t t = 0; t < prefix_len; ++t) {
    for (size_t i = 0; i < dim; i += 2) {
      double freq = std::pow(10000.0, -double(i) / double(dim));
      p.at(t, i) = std::sin(double(t) * freq);
      if (i + 1 < dim) p.at(t, i + 1) = std::cos(double(t) * freq);
    }
  }
  return p;
}

GraphParams register_params(ad::Tape& tape, const LanguageModel& model, bool requires_grad,
                            bool include_embedding) {
  GraphParams g;
  if (include_embedding) {
    g.embedding_table = tape.leaf(model.embedding.weights, requires_grad);
  }
  for (const auto& layer : model.recurrent) {
    GraphParams::RecurrentNodes n;
    n.w_input = tape.leaf(layer.w_input, requires_grad);
    n.w_recur = tape.leaf(layer.w_recur, requires_grad);
    n.bias = tape.leaf(layer.bias, requires_grad);
    g.recurrent.push_back(n);
  }
  for (const auto& layer : model.attention) {
    GraphParams::AttentionNodes n;
    n.wq = tape.leaf(layer.wq, requires_grad);
    n.wk = tape.leaf(layer.wk, requires_grad);
    n.wv = tape.leaf(layer.wv, requires_grad);
    n.wo = tape.leaf(layer.wo, requires_grad);
    n.ln1_gain = tape.leaf(layer.ln1_gain, requires_grad);
    n.ln1_shift = tape.leaf(layer.ln1_shift, requires_grad);
    n.ffn_w1 = tape.leaf(layer.ffn_w1, requires_grad);
    n.ffn_b1 = tape.leaf(layer.ffn_b1, requires_grad);
    n.ffn_w2 = tape.leaf(layer.ffn_w2, requires_grad);
    n.ffn_b2 = tape.leaf(layer.ffn_b2, requires_grad);
    n.ln2_gain = tape.leaf(layer.ln2_gain, requires_grad);
    n.ln2_shift = tape.leaf(layer.ln2_shift, requires_grad);
    g.attention.push_back(n);
  }
  if (model.config.arch == ArchKind::kAttention) {
    g.final_ln_gain = tape.leaf(model.final_ln_gain, requires_grad);
    g.final_ln_shift = tape.leaf(model.final_ln_shift, requires_grad);
  }
  return g;
}

namespace {

ad::NodeId build_recurrent_hidden(ad::Tape& tape, const LanguageModel& model,
                                  const GraphParams& params, ad::NodeId embeddings, size_t T) {
  size_t h = model.config.hidden_dim;
  size_t d = model.config.embed_dim;
  size_t L = model.recurrent.size();

  std::vector<ad::NodeId> h_prev(L), c_prev(L);
  for (size_t l = 0; l < L; ++l) {
    h_prev[l] = tape.constant(Tensor({h}));
    c_prev[l] = tape.constant(Tensor({h}));
  }

  std::vector<ad::NodeId> top_states;
  top_states.reserve(T);
  for (size_t t = 0; t < T; ++t) {
    ad::NodeId x = tape.reshape(tape.slice(embeddings, {t, 0}, {1, d}), {d});
    for (size_t l = 0; l < L; ++l) {
      const auto& p = params.recurrent[l];
      ad::NodeId z = tape.add(tape.add(tape.matmul(p.w_input, x), tape.matmul(p.w_recur, h_prev[l])),
                              p.bias);
      ad::NodeId gi = tape.sigmoid(tape.slice(z, {0}, {h}));
      ad::NodeId gf = tape.sigmoid(tape.slice(z, {h}, {h}));
      ad::NodeId gc = tape.tanh(tape.slice(z, {2 * h}, {h}));
      ad::NodeId go = tape.sigmoid(tape.slice(z, {3 * h}, {h}));
      ad::NodeId c = tape.add(tape.mul(gf, c_prev[l]), tape.mul(gi, gc));
      ad::NodeId hn = tape.mul(go, tape.tanh(c));
      c_prev[l] = c;
      h_prev[l] = hn;
      x = hn;
    }
    top_states.push_back(tape.reshape(x, {1, h}));
  }
  return tape.concat(top_states, 0);
}

ad::NodeId build_attention_hidden(ad::Tape& tape, const LanguageModel& model,
                                  const GraphParams& params, ad::NodeId embeddings, size_t T) {
  size_t d = model.config.embed_dim;
  size_t heads = model.config.heads;
  size_t dh = d / heads;

  ad::NodeId x = tape.add(embeddings, tape.constant(position_encodings(T, d)));

  Tensor mask({T, T});
  for (size_t i = 0; i < T; ++i)
    for (size_t j = i + 1; j < T; ++j) mask.at(i, j) = -1e30;
  ad::NodeId mask_node = tape.constant(std::move(mask));

  for (size_t l = 0; l < model.attention.size(); ++l) {
    const auto& p = params.attention[l];
    ad::NodeId xn = tape.layer_norm(x, p.ln1_gain, p.ln1_shift);
    ad::NodeId q = tape.matmul(xn, p.wq);
    ad::NodeId k = tape.matmul(xn, p.wk);
    ad::NodeId v = tape.matmul(xn, p.wv);
    std::vector<ad::NodeId> head_outs;
    head_outs.reserve(heads);
    for (size_t hh = 0; hh < heads; ++hh) {
      ad::NodeId qh = tape.slice(q, {0, hh * dh}, {T, dh});
      ad::NodeId kh = tape.slice(k, {0, hh * dh}, {T, dh});
      ad::NodeId vh = tape.slice(v, {0, hh * dh}, {T, dh});
      ad::NodeId scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), 1.0 / std::sqrt(double(dh)));
      ad::NodeId attn = tape.softmax_rows(tape.add(scores, mask_node));
      head_outs.push_back(tape.matmul(attn, vh));
    }
    ad::NodeId o = tape.matmul(tape.concat(head_outs, 1), p.wo);
    x = tape.add(x, o);
    ad::NodeId xn2 = tape.layer_norm(x, p.ln2_gain, p.ln2_shift);
    ad::NodeId f = tape.tanh(tape.add_bias(tape.matmul(xn2, p.ffn_w1), p.ffn_b1));
    ad::NodeId f2 = tape.add_bias(tape.matmul(f, p.ffn_w2), p.ffn_b2);
    x = tape.add(x, f2);
  }
  return tape.layer_norm(x, params.final_ln_gain, params.final_ln_shift);
}

}  // namespace

ad::NodeId build_hidden(ad::Tape& tape, const LanguageModel& model, const GraphParams& params,
                        ad::NodeId embeddings, size_t prefix_len) {
  if (model.config.arch == ArchKind::kRecurrent) {
    return build_recurrent_hidden(tape, model, params, embeddings, prefix_len);
  }
  return build_attention_hidden(tape, model, params, embeddings, prefix_len);
}

Tensor lookup_embeddings(const LanguageModel& model, std::span<const int> prefix) {
  if (prefix.empty()) throw std::invalid_argument("lookup_embeddings: empty prefix");
  size_t d = model.config.embed_dim;
  Tensor e({prefix.size(), d});
  for (size_t t = 0; t < prefix.size(); ++t) {
    int id = prefix[t];
    if (id < 0 || static_cast<size_t>(id) >= model.vocab.size()) {
      throw std::invalid_argument("lookup_embeddings: token id " + std::to_string(id) +
                                  " out of range for vocabulary of " +
                                  std::to_string(model.vocab.size()));
    }
    for (size_t c = 0; c < d; ++c) e.at(t, c) = model.embedding.weights.at(id, c);
  }
  return e;
}

namespace {

struct HeadGraph {
  ad::Tape tape;
  ad::NodeId embeddings;
  ad::NodeId hidden;
  ad::NodeId logits;
};

HeadGraph build_head_graph(const LanguageModel& model, const Tensor& embeddings, HeadRef head,
                           long pos, bool emb_grad) {
  if (embeddings.rank() != 2 || embeddings.dim(1) != model.config.embed_dim) {
    throw std::invalid_argument("forward: embeddings shape " + embeddings.shape_str() +
                                " does not match embed_dim " +
                                std::to_string(model.config.embed_dim));
  }
  size_t T = embeddings.dim(0);
  if (T == 0) throw std::invalid_argument("forward: empty prefix");
  size_t p = pos < 0 ? T - 1 : static_cast<size_t>(pos);
  if (p >= T) throw std::invalid_argument("forward: position out of range");

  HeadGraph g;
  g.embeddings = g.tape.leaf(embeddings, emb_grad);
  GraphParams params = register_params(g.tape, model, false, false);
  g.hidden = build_hidden(g.tape, model, params, g.embeddings, T);
  size_t h = model.hidden_dim();
  ad::NodeId h_last = g.tape.reshape(g.tape.slice(g.hidden, {p, 0}, {1, h}), {h});
  ad::NodeId w = g.tape.constant(*head.weight);
  ad::NodeId b = g.tape.constant(*head.bias);
  g.logits = g.tape.add(g.tape.matmul(w, h_last), b);
  return g;
}

ad::NodeId score_node(ad::Tape& tape, ad::NodeId logits, int target_class, ScoreKind kind) {
  if (kind == ScoreKind::kLogit) {
    return tape.pick(logits, 0, target_class);
  }
  return tape.pick(tape.log(tape.softmax_rows(logits)), 0, target_class);
}

}  // namespace

ModelOutput forward(const LanguageModel& model, std::span<const int> prefix, HeadRef head) {
  Tensor emb = lookup_embeddings(model, prefix);
  HeadGraph g = build_head_graph(model, emb, head, -1, false);
  ModelOutput out;
  out.logits = g.tape.value(g.logits);
  out.hidden = g.tape.value(g.hidden);
  return out;
}

std::pair<int, Tensor> predict_tag(const LanguageModel& model, std::span<const int> prefix,
                                   const ProbeHead& probe) {
  ModelOutput out = forward(model, prefix, HeadRef(probe));
  int tag = out.logits[1] > out.logits[0] ? 1 : 0;
  return {tag, std::move(out.logits)};
}

ScoreGrad score_and_input_gradient(const LanguageModel& model, const Tensor& embeddings,
                                   int target_class, HeadRef head, ScoreKind kind, long pos) {
  if (target_class < 0 || static_cast<size_t>(target_class) >= head.classes()) {
    throw std::invalid_argument("input_gradient: target class " + std::to_string(target_class) +
                                " out of range for head with " + std::to_string(head.classes()) +
                                " classes");
  }
  HeadGraph g = build_head_graph(model, embeddings, head, pos, true);
  ad::NodeId s = score_node(g.tape, g.logits, target_class, kind);
  ad::GradientMap grads = g.tape.backward(s);
  return {g.tape.value(s)[0], grads.at(g.embeddings)};
}

double score_only(const LanguageModel& model, const Tensor& embeddings, int target_class,
                  HeadRef head, ScoreKind kind, long pos) {
  HeadGraph g = build_head_graph(model, embeddings, head, pos, false);
  ad::NodeId s = score_node(g.tape, g.logits, target_class, kind);
  return g.tape.value(s)[0];
}

Tensor input_gradient(const LanguageModel& model, std::span<const int> prefix, int target_class,
                      HeadRef head, ScoreKind kind) {
  Tensor emb = lookup_embeddings(model, prefix);
  return score_and_input_gradient(model, emb, target_class, head, kind).grad;
}

// --- checkpoint io -----------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'S', 'B', 'C', '1'};

void write_raw(std::ofstream& out, const void* data, size_t bytes) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

json tensor_specs(const std::vector<std::pair<std::string, const Tensor*>>& params) {
  json specs = json::array();
  for (const auto& [name, t] : params) {
    specs.push_back({{"name", name}, {"shape", t->shape()}});
  }
  return specs;
}

void write_container(const std::string& path, const json& header,
                     const std::vector<std::pair<std::string, const Tensor*>>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  write_raw(out, kModelMagic, 4);
  std::string head = header.dump();
  uint64_t len = head.size();
  write_raw(out, &len, sizeof(len));
  write_raw(out, head.data(), head.size());
  for (const auto& [name, t] : params) {
    write_raw(out, t->data(), t->numel() * sizeof(double));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

json read_container(const std::string& path, std::ifstream& in) {
  in.open(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kModelMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: " + path + " is not a model container");
  }
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string head(len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  return json::parse(head);
}

void read_tensor_data(std::ifstream& in, const json& specs,
                      const std::vector<std::pair<std::string, Tensor*>>& params,
                      const std::string& path) {
  if (specs.size() != params.size()) {
    throw std::runtime_error("checkpoint: " + path + " holds " + std::to_string(specs.size()) +
                             " tensors, expected " + std::to_string(params.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    if (specs[i].at("name") != name) {
      throw std::runtime_error("checkpoint: tensor order mismatch at " + name);
    }
    Shape shape = specs[i].at("shape").get<Shape>();
    *t = Tensor(shape);
    in.read(reinterpret_cast<char*>(t->data()),
            static_cast<std::streamsize>(t->numel() * sizeof(double)));
  }
  if (!in) throw std::runtime_error("checkpoint: truncated tensor data in " + path);
}

}  // namespace

void save_model(const LanguageModel& model, const std::string& path) {
  json header;
  header["kind"] = "language_model";
  header["version"] = 1;
  header["arch"] = arch_name(model.config.arch);
  header["embed_dim"] = model.config.embed_dim;
  header["hidden_dim"] = model.config.hidden_dim;
  header["layers"] = model.config.layers;
  header["heads"] = model.config.heads;
  header["ffn_dim"] = model.config.ffn_dim;
  header["model_id"] = model.model_id;
  header["vocab"] = model.vocab.tokens();
  auto params = model.named_parameters();
  header["tensors"] = tensor_specs(params);
  write_container(path, header, params);
}

LanguageModel load_model(const std::string& path) {
  std::ifstream in;
  json header = read_container(path, in);
  if (header.at("kind") != "language_model") {
    throw std::runtime_error("checkpoint: " + path + " is not a language model");
  }
  ModelConfig cfg;
  cfg.arch = arch_from_name(header.at("arch"));
  cfg.embed_dim = header.at("embed_dim");
  cfg.hidden_dim = header.at("hidden_dim");
  cfg.layers = header.at("layers");
  cfg.heads = header.at("heads");
  cfg.ffn_dim = header.at("ffn_dim");

  LanguageModel m = init_model(cfg, Vocabulary::from_tokens(header.at("vocab")), 0,
                               header.at("model_id"));
  auto params = m.named_parameters();
  std::vector<std::pair<std::string, Tensor*>> mut(params.begin(), params.end());
  read_tensor_data(in, header.at("tensors"), mut, path);
  return m;
}

void save_probe(const ProbeHead& probe, const std::string& path) {
  json header;
  header["kind"] = "probe";
  header["version"] = 1;
  header["tags"] = probe.tags;
  std::vector<std::pair<std::string, const Tensor*>> params = {
      {"probe.weight", &probe.weight}, {"probe.bias", &probe.bias}};
  header["tensors"] = tensor_specs(params);
  write_container(path, header, params);
}

ProbeHead load_probe(const std::string& path) {
  std::ifstream in;
  json header = read_container(path, in);
  if (header.at("kind") != "probe") {
    throw std::runtime_error("checkpoint: " + path + " is not a probe");
  }
  ProbeHead p;
  auto tags = header.at("tags").get<std::vector<std::string>>();
  p.tags = {tags.at(0), tags.at(1)};
  std::vector<std::pair<std::string, Tensor*>> params = {{"probe.weight", &p.weight},
                                                         {"probe.bias", &p.bias}};
  read_tensor_data(in, header.at("tensors"), params, path);
  return p;
}

}  // namespace salbench
