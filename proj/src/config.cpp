#include "salbench/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace salbench {

void RunConfig::validate() const {
  if (methods.empty() && !baselines) {
    throw std::invalid_argument("config: at least one saliency method must be selected");
  }
  if (!use_number && !use_gender && tagged_corpora.empty()) {
    throw std::invalid_argument("config: at least one dataset must be selected");
  }
  if (!methods.empty() && compositions.empty()) {
    throw std::invalid_argument("config: at least one composition scheme must be selected");
  }
  if (archs.empty()) throw std::invalid_argument("config: at least one architecture required");
  saliency.validate();
  train.validate();
  probe_train.validate();
  distill.validate();
}

namespace {

struct Parser {
  const std::string& filename;
  size_t line_no = 0;

  [[noreturn]] void fail(const std::string& message) const {
    throw std::invalid_argument(filename + ":" + std::to_string(line_no) + ": " + message);
  }

  bool parse_bool(const std::string& v) const {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    fail("expected a boolean, got '" + v + "'");
  }

  double parse_double(const std::string& v) const {
    try {
      size_t used = 0;
      double d = std::stod(v, &used);
      if (used != v.size()) fail("trailing characters after number '" + v + "'");
      return d;
    } catch (const std::invalid_argument&) {
      fail("expected a number, got '" + v + "'");
    } catch (const std::out_of_range&) {
      fail("number out of range: '" + v + "'");
    }
  }

  long long parse_int(const std::string& v) const {
    try {
      size_t used = 0;
      long long i = std::stoll(v, &used);
      if (used != v.size()) fail("trailing characters after integer '" + v + "'");
      return i;
    } catch (const std::invalid_argument&) {
      fail("expected an integer, got '" + v + "'");
    } catch (const std::out_of_range&) {
      fail("integer out of range: '" + v + "'");
    }
  }

  std::vector<std::string> parse_list(const std::string& v) const {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      size_t b = item.find_first_not_of(" \t");
      size_t e = item.find_last_not_of(" \t");
      if (b == std::string::npos) continue;
      out.push_back(item.substr(b, e - b + 1));
    }
    return out;
  }
};

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& filename) {
  RunConfig cfg;
  Parser p{filename};
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++p.line_no;
    std::string line = raw;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) p.fail("expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) p.fail("missing key before '='");

    try {
      if (key == "paths.data") cfg.data_dir = value;
      else if (key == "paths.checkpoints") cfg.checkpoint_dir = value;
      else if (key == "paths.results") cfg.results_dir = value;
      else if (key == "model.archs") {
        cfg.archs.clear();
        for (const auto& a : p.parse_list(value)) cfg.archs.push_back(arch_from_name(a));
      } else if (key == "model.embed_dim") cfg.model.embed_dim = p.parse_int(value);
      else if (key == "model.hidden_dim") cfg.model.hidden_dim = p.parse_int(value);
      else if (key == "model.layers") cfg.model.layers = p.parse_int(value);
      else if (key == "model.heads") cfg.model.heads = p.parse_int(value);
      else if (key == "model.ffn_dim") cfg.model.ffn_dim = p.parse_int(value);
      else if (key == "data.datasets") {
        cfg.use_number = false;
        cfg.use_gender = false;
        for (const auto& d : p.parse_list(value)) {
          if (d == "number") cfg.use_number = true;
          else if (d == "gender") cfg.use_gender = true;
          else p.fail("unknown dataset '" + d + "' (expected number, gender)");
        }
      } else if (key == "data.number_count") cfg.number_count = p.parse_int(value);
      else if (key == "data.gender_count") cfg.gender_count = p.parse_int(value);
      else if (key == "data.corpus_sentences") cfg.corpus_sentences = p.parse_int(value);
      else if (key == "data.probe_count") cfg.probe_count = p.parse_int(value);
      else if (key == "data.probe_holdout") cfg.probe_holdout = p.parse_double(value);
      else if (key == "data.tagged") cfg.tagged_corpora = p.parse_list(value);
      else if (key == "saliency.methods") {
        cfg.methods.clear();
        for (const auto& m : p.parse_list(value)) cfg.methods.push_back(method_from_name(m));
      } else if (key == "saliency.compositions") {
        cfg.compositions.clear();
        for (const auto& c : p.parse_list(value)) {
          cfg.compositions.push_back(composition_from_name(c));
        }
      } else if (key == "saliency.baselines") cfg.baselines = p.parse_bool(value);
      else if (key == "saliency.sg_samples") cfg.saliency.sg_samples = p.parse_int(value);
      else if (key == "saliency.sg_coefficient") {
        cfg.saliency.sg_variance_coefficient = p.parse_double(value);
      } else if (key == "saliency.ig_steps") cfg.saliency.ig_steps = p.parse_int(value);
      else if (key == "saliency.ig_midpoint") cfg.saliency.ig_midpoint = p.parse_bool(value);
      else if (key == "saliency.score") {
        if (value == "logit") cfg.saliency.score = ScoreKind::kLogit;
        else if (value == "log_prob") cfg.saliency.score = ScoreKind::kLogProb;
        else p.fail("unknown score kind '" + value + "' (expected logit, log_prob)");
      } else if (key == "train.epochs") cfg.train.epochs = p.parse_int(value);
      else if (key == "train.batch_size") cfg.train.batch_size = p.parse_int(value);
      else if (key == "train.learning_rate") cfg.train.learning_rate = p.parse_double(value);
      else if (key == "train.clip_norm") cfg.train.clip_norm = p.parse_double(value);
      else if (key == "train.plateau") cfg.train.plateau = p.parse_bool(value);
      else if (key == "train.plateau_factor") cfg.train.plateau_factor = p.parse_double(value);
      else if (key == "train.plateau_patience") cfg.train.plateau_patience = p.parse_int(value);
      else if (key == "train.val_fraction") cfg.train.val_fraction = p.parse_double(value);
      else if (key == "probe.epochs") cfg.probe_train.epochs = p.parse_int(value);
      else if (key == "probe.batch_size") cfg.probe_train.batch_size = p.parse_int(value);
      else if (key == "probe.learning_rate") cfg.probe_train.learning_rate = p.parse_double(value);
      else if (key == "distill.temperature") cfg.distill.temperature = p.parse_double(value);
      else if (key == "distill.depth_reduction") cfg.distill.depth_reduction = p.parse_int(value);
      else if (key == "distill.soft_weight") cfg.distill.soft_weight = p.parse_double(value);
      else if (key == "distill.epochs") cfg.distill_epochs = p.parse_int(value);
      else if (key == "eval.plausibility") cfg.eval_plausibility = p.parse_bool(value);
      else if (key == "eval.input_consistency") cfg.eval_input_consistency = p.parse_bool(value);
      else if (key == "eval.model_consistency") cfg.eval_model_consistency = p.parse_bool(value);
      else if (key == "render.count") cfg.render_count = p.parse_int(value);
      else if (key == "seed") cfg.seed = static_cast<uint64_t>(p.parse_int(value));
      else if (key == "threads") cfg.threads = static_cast<int>(p.parse_int(value));
      else p.fail("unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw;
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string example_config_text() {
  return R"(# pipeline configuration

paths.data = runs/demo/data
paths.checkpoints = runs/demo/checkpoints
paths.results = runs/demo/results

model.archs = lstm, attention
model.embed_dim = 32
model.hidden_dim = 64
model.layers = 2
model.heads = 2
model.ffn_dim = 64

data.datasets = number, gender
data.number_count = 600
data.gender_count = 600
data.corpus_sentences = 3000
data.probe_count = 800
data.probe_holdout = 0.2
# data.tagged = path/to/tagged_corpus.jsonl

saliency.methods = v, sg, ig
saliency.compositions = gi, vn
saliency.baselines = true
saliency.sg_samples = 30
saliency.sg_coefficient = 0.15
saliency.ig_steps = 100
saliency.ig_midpoint = false
saliency.score = logit

train.epochs = 10
train.batch_size = 16
train.learning_rate = 1e-3
train.clip_norm = 1.0
train.plateau = true
train.plateau_factor = 0.5
train.plateau_patience = 2
train.val_fraction = 0.1

probe.epochs = 30
probe.batch_size = 32
probe.learning_rate = 1e-3

distill.temperature = 2.0
distill.depth_reduction = 1
distill.soft_weight = 0.5

eval.plausibility = true
eval.input_consistency = true
eval.model_consistency = true

render.count = 10
seed = 42
threads = 0
)";
}

}  // namespace salbench
