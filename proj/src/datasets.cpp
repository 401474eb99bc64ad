#include "salbench/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "salbench/rng.hpp"

namespace salbench {

using nlohmann::json;

std::string agreement_name(AgreementKind kind) {
  return kind == AgreementKind::kNumber ? "number" : "gender";
}

AgreementKind agreement_from_name(const std::string& name) {
  if (name == "number") return AgreementKind::kNumber;
  if (name == "gender") return AgreementKind::kGender;
  throw std::invalid_argument("unknown agreement kind: " + name);
}

std::array<std::string, 2> tag_names(AgreementKind kind) {
  if (kind == AgreementKind::kNumber) return {"SINGULAR", "PLURAL"};
  return {"FEMININE", "MASCULINE"};
}

int tag_index(AgreementKind kind, const std::string& tag) {
  auto names = tag_names(kind);
  if (tag == names[0]) return 0;
  if (tag == names[1]) return 1;
  throw std::invalid_argument("unknown tag '" + tag + "' for " + agreement_name(kind));
}

void validate_instance(const TestInstance& instance) {
  if (instance.attractors.empty()) {
    throw std::invalid_argument("instance: attractor set must be non-empty");
  }
  for (size_t i : instance.cues) {
    if (i >= instance.tokens.size()) throw std::invalid_argument("instance: cue index out of range");
  }
  for (size_t i : instance.attractors) {
    if (i >= instance.tokens.size()) {
      throw std::invalid_argument("instance: attractor index out of range");
    }
    if (std::find(instance.cues.begin(), instance.cues.end(), i) != instance.cues.end()) {
      throw std::invalid_argument("instance: cue and attractor sets intersect");
    }
  }
  if (instance.gold_tag != 0 && instance.gold_tag != 1) {
    throw std::invalid_argument("instance: gold tag must be 0 or 1");
  }
}

NumberLexicon NumberLexicon::builtin() {
  NumberLexicon lex;
  lex.nouns = {{"consultant", "consultants"}, {"parent", "parents"},   {"teacher", "teachers"},
               {"farmer", "farmers"},         {"manager", "managers"}, {"pilot", "pilots"},
               {"author", "authors"},         {"senator", "senators"}, {"surgeon", "surgeons"},
               {"customer", "customers"}};
  lex.embedded_verbs = {{"loves", "love"}, {"admires", "admire"}, {"avoids", "avoid"},
                        {"likes", "like"}};
  lex.main_verbs = {{"laughs", "laugh"}, {"smiles", "smile"}, {"complains", "complain"},
                    {"waits", "wait"}, {"is", "are"}};
  lex.prepositions = {"near", "behind", "beside"};
  return lex;
}

GenderLexicon GenderLexicon::builtin() {
  GenderLexicon lex;
  lex.feminine = {"bride", "woman", "nun", "actress", "queen", "mother", "aunt", "duchess"};
  lex.masculine = {"groom", "man", "son", "actor", "king", "father", "uncle", "duke"};
  lex.interaction_verbs = {"examined", "visited", "thanked", "warned", "called", "greeted"};
  lex.complements = {{"for", "injuries"},
                     {"after", "the", "meeting"},
                     {"about", "the", "delay"},
                     {"before", "the", "ceremony"},
                     {"during", "the", "visit"}};
  lex.report_verbs = {"said", "insisted", "thought", "explained"};
  return lex;
}

namespace {

struct NumberedNoun {
  const std::string* text;
  int number;  // 0 singular, 1 plural
  size_t entry;
};

std::vector<NumberedNoun> noun_forms(const NumberLexicon& lex, int number) {
  std::vector<NumberedNoun> out;
  for (size_t i = 0; i < lex.nouns.size(); ++i) {
    const auto& n = lex.nouns[i];
    if (number == 0 && !n.singular.empty()) out.push_back({&n.singular, 0, i});
    if (number == 1 && !n.plural.empty()) out.push_back({&n.plural, 1, i});
  }
  return out;
}

std::string instance_key(const TestInstance& t) {
  std::string k;
  for (const auto& tok : t.tokens) {
    k += tok;
    k += ' ';
  }
  return k;
}

}  // namespace

GeneratedData generate_number_agreement(uint64_t seed, size_t count, const NumberLexicon& lex) {
  auto singulars = noun_forms(lex, 0);
  auto plurals = noun_forms(lex, 1);
  if (singulars.size() < 2 || plurals.size() < 2) {
    throw std::invalid_argument(
        "generate_number_agreement: lexicon needs at least two singular and two plural nouns");
  }
  if (lex.embedded_verbs.empty() || lex.prepositions.empty()) {
    throw std::invalid_argument("generate_number_agreement: lexicon needs verbs and prepositions");
  }

  RngStream rng(mix_seed(seed, "number-agreement"));
  GeneratedData data;
  std::set<std::string> seen;
  size_t attempts = 0;
  size_t max_attempts = 200 * count + 1000;
  while (data.instances.size() < count) {
    if (++attempts > max_attempts) {
      throw std::runtime_error(
          "generate_number_agreement: lexicon too small for requested instance count");
    }
    int gold = static_cast<int>(rng.uniform_index(2));
    const auto& subj_pool = gold == 0 ? singulars : plurals;
    const auto& attr_pool = gold == 0 ? plurals : singulars;
    const NumberedNoun& subj = subj_pool[rng.uniform_index(subj_pool.size())];
    const NumberedNoun& attr = attr_pool[rng.uniform_index(attr_pool.size())];
    if (subj.entry == attr.entry) continue;  // keep the two lemmas distinct

    size_t family = rng.uniform_index(3);
    TestInstance t;
    t.kind = AgreementKind::kNumber;
    t.gold_tag = gold;
    if (family == 0) {
      // subject relative clause: the subject that <verb> the <attractor>
      const VerbEntry& v = lex.embedded_verbs[rng.uniform_index(lex.embedded_verbs.size())];
      const std::string& verb = gold == 0 ? v.singular : v.plural;
      t.tokens = {"the", *subj.text, "that", verb, "the", *attr.text};
      t.cues = {1};
      t.attractors = {5};
      t.template_id = "num-subjrel-" + v.singular + "-" + std::to_string(gold);
    } else if (family == 1) {
      // object relative clause: the subject that the <attractor> <verb>
      const VerbEntry& v = lex.embedded_verbs[rng.uniform_index(lex.embedded_verbs.size())];
      const std::string& verb = attr.number == 0 ? v.singular : v.plural;
      t.tokens = {"the", *subj.text, "that", "the", *attr.text, verb};
      t.cues = {1};
      t.attractors = {4};
      t.template_id = "num-objrel-" + v.singular + "-" + std::to_string(gold);
    } else {
      // prepositional phrase: the subject <prep> the <attractor>
      const std::string& prep = lex.prepositions[rng.uniform_index(lex.prepositions.size())];
      t.tokens = {"the", *subj.text, prep, "the", *attr.text};
      t.cues = {1};
      t.attractors = {4};
      t.template_id = "num-prep-" + prep + "-" + std::to_string(gold);
    }
    if (!seen.insert(instance_key(t)).second) continue;
    validate_instance(t);
    data.instances.push_back(std::move(t));
  }
  return data;
}

GeneratedData generate_gender_agreement(uint64_t seed, size_t count, const GenderLexicon& lex) {
  if (lex.feminine.size() < 2 || lex.masculine.size() < 2) {
    throw std::invalid_argument(
        "generate_gender_agreement: lexicon needs at least two person nouns of each gender");
  }
  if (lex.interaction_verbs.empty() || lex.complements.empty()) {
    throw std::invalid_argument("generate_gender_agreement: lexicon needs verbs and complements");
  }

  // Candidate entities are drawn from the combined pool; pairs where both
  // nouns share a gender are excluded from the output.
  std::vector<std::pair<const std::string*, int>> pool;
  for (const auto& n : lex.feminine) pool.emplace_back(&n, 0);
  for (const auto& n : lex.masculine) pool.emplace_back(&n, 1);

  RngStream rng(mix_seed(seed, "gender-agreement"));
  GeneratedData data;
  std::set<std::string> seen;
  size_t attempts = 0;
  size_t max_attempts = 200 * count + 1000;
  while (data.instances.size() < count) {
    if (++attempts > max_attempts) {
      throw std::runtime_error(
          "generate_gender_agreement: lexicon too small for requested instance count");
    }
    auto [first, first_gender] = pool[rng.uniform_index(pool.size())];
    auto [second, second_gender] = pool[rng.uniform_index(pool.size())];
    const std::string& verb = lex.interaction_verbs[rng.uniform_index(lex.interaction_verbs.size())];
    size_t comp = rng.uniform_index(lex.complements.size());
    if (first_gender == second_gender) continue;  // same-gender pair: excluded

    TestInstance t;
    t.kind = AgreementKind::kGender;
    t.gold_tag = 0;  // the feminine pronoun is the expected case by convention
    t.tokens = {"the", *first, verb, "the", *second};
    for (const auto& tok : lex.complements[comp]) t.tokens.push_back(tok);
    t.tokens.push_back("because");
    size_t fem_pos = first_gender == 0 ? 1 : 4;
    size_t masc_pos = first_gender == 0 ? 4 : 1;
    t.cues = {fem_pos};
    t.attractors = {masc_pos};
    t.template_id = "gen-" + std::string(first_gender == 0 ? "fm" : "mf") + "-" + verb + "-" +
                    std::to_string(comp);
    if (!seen.insert(instance_key(t)).second) continue;
    validate_instance(t);
    data.instances.push_back(std::move(t));
  }
  return data;
}

std::vector<PerturbationPair> make_perturbation_pairs(const std::vector<TestInstance>& instances) {
  // first occurrence of each template, in instance order
  std::vector<PerturbationPair> pairs;
  std::unordered_map<std::string, size_t> first_of;
  for (size_t i = 0; i < instances.size(); ++i) {
    const auto& t = instances[i];
    if (t.template_id.empty()) continue;
    auto [it, inserted] = first_of.emplace(t.template_id, i);
    if (inserted) continue;
    const TestInstance& a = instances[it->second];
    if (a.tokens.size() != t.tokens.size() || a.cues != t.cues || a.attractors != t.attractors ||
        a.gold_tag != t.gold_tag) {
      throw std::runtime_error("make_perturbation_pairs: template " + t.template_id +
                               " produced misaligned instances");
    }
    pairs.push_back({it->second, i});
  }
  return pairs;
}

std::vector<std::vector<std::string>> generate_lm_corpus(uint64_t seed, size_t sentence_count,
                                                         const NumberLexicon& num_lex,
                                                         const GenderLexicon& gen_lex) {
  RngStream rng(mix_seed(seed, "lm-corpus"));
  std::vector<std::vector<std::string>> corpus;
  corpus.reserve(sentence_count);

  auto singulars = noun_forms(num_lex, 0);
  auto plurals = noun_forms(num_lex, 1);

  while (corpus.size() < sentence_count) {
    size_t kind = rng.uniform_index(4);
    if (kind == 0) {
      // number-agreement sentence over a full template prefix
      GeneratedData one = generate_number_agreement(rng.next_u64(), 1, num_lex);
      TestInstance& t = one.instances[0];
      const VerbEntry& mv = num_lex.main_verbs[rng.uniform_index(num_lex.main_verbs.size())];
      t.tokens.push_back(t.gold_tag == 0 ? mv.singular : mv.plural);
      t.tokens.push_back("<eos>");
      corpus.push_back(std::move(t.tokens));
    } else if (kind == 1) {
      // short subject + verb sentence
      int gold = static_cast<int>(rng.uniform_index(2));
      const auto& pool = gold == 0 ? singulars : plurals;
      const NumberedNoun& subj = pool[rng.uniform_index(pool.size())];
      const VerbEntry& mv = num_lex.main_verbs[rng.uniform_index(num_lex.main_verbs.size())];
      corpus.push_back({"the", *subj.text, gold == 0 ? mv.singular : mv.plural, "<eos>"});
    } else if (kind == 2) {
      // two-entity gender sentence continued by a pronoun of either gender
      GeneratedData one = generate_gender_agreement(rng.next_u64(), 1, gen_lex);
      TestInstance& t = one.instances[0];
      bool fem = rng.uniform_index(2) == 0;
      t.tokens.push_back(fem ? gen_lex.feminine_pronoun : gen_lex.masculine_pronoun);
      t.tokens.push_back("<eos>");
      corpus.push_back(std::move(t.tokens));
    } else {
      // one-entity report sentence; the pronoun gender is forced
      bool fem = rng.uniform_index(2) == 0;
      const auto& nouns = fem ? gen_lex.feminine : gen_lex.masculine;
      const std::string& noun = nouns[rng.uniform_index(nouns.size())];
      const std::string& verb = gen_lex.report_verbs[rng.uniform_index(gen_lex.report_verbs.size())];
      corpus.push_back({"the", noun, verb, "that",
                        fem ? gen_lex.feminine_pronoun : gen_lex.masculine_pronoun, "<eos>"});
    }
  }
  return corpus;
}

std::vector<LabelledPrefix> generate_probe_set(uint64_t seed, size_t count, AgreementKind kind,
                                               const NumberLexicon& num_lex,
                                               const GenderLexicon& gen_lex) {
  RngStream rng(mix_seed(seed, "probe-set"));
  std::vector<LabelledPrefix> out;
  out.reserve(count);
  if (kind == AgreementKind::kNumber) {
    auto singulars = noun_forms(num_lex, 0);
    auto plurals = noun_forms(num_lex, 1);
    while (out.size() < count) {
      LabelledPrefix p;
      p.kind = kind;
      if (rng.uniform_index(4) == 0) {
        p.gold_tag = static_cast<int>(rng.uniform_index(2));
        const auto& pool = p.gold_tag == 0 ? singulars : plurals;
        p.tokens = {"the", *pool[rng.uniform_index(pool.size())].text};
      } else {
        GeneratedData one = generate_number_agreement(rng.next_u64(), 1, num_lex);
        p.tokens = std::move(one.instances[0].tokens);
        p.gold_tag = one.instances[0].gold_tag;
      }
      out.push_back(std::move(p));
    }
  } else {
    while (out.size() < count) {
      LabelledPrefix p;
      p.kind = kind;
      bool fem = rng.uniform_index(2) == 0;
      const auto& nouns = fem ? gen_lex.feminine : gen_lex.masculine;
      const std::string& noun = nouns[rng.uniform_index(nouns.size())];
      const std::string& verb = gen_lex.report_verbs[rng.uniform_index(gen_lex.report_verbs.size())];
      p.tokens = {"the", noun, verb, "that"};
      p.gold_tag = fem ? 0 : 1;
      out.push_back(std::move(p));
    }
  }
  return out;
}

namespace {

// -1 when the position is not a number-marked verb or copula
int verb_number_at(const TaggedCorpusRecord& record, size_t pos) {
  const std::string& tag = record.pos[pos];
  const std::string& tok = record.tokens[pos];
  if (tag == "VBZ") return 0;
  if (tag == "VBP") return 1;
  if (tok == "is" || tok == "was") return 0;
  if (tok == "are" || tok == "were") return 1;
  return -1;
}

bool is_noun(const TaggedCorpusRecord& record, size_t pos) {
  return record.noun_number[pos] >= 0;
}

}  // namespace

std::pair<std::vector<size_t>, std::vector<size_t>> extract_cue_attractor(
    const TaggedCorpusRecord& record, size_t verb_position) {
  if (verb_position >= record.tokens.size()) {
    throw std::invalid_argument("extract_cue_attractor: verb position out of range");
  }
  int verb_number = verb_number_at(record, verb_position);
  if (verb_number < 0) {
    throw std::invalid_argument("extract_cue_attractor: verb at position " +
                                std::to_string(verb_position) + " has no known number");
  }
  std::vector<size_t> cues, attractors;
  for (size_t i = 0; i < verb_position; ++i) {
    if (!is_noun(record, i)) continue;
    if (record.noun_number[i] == verb_number) cues.push_back(i);
    else attractors.push_back(i);
  }
  return {cues, attractors};
}

FilterResult filter_ptb_style(const std::vector<TaggedCorpusRecord>& records) {
  FilterResult result;
  for (const auto& record : records) {
    size_t n = record.tokens.size();
    if (record.pos.size() != n || record.noun_number.size() != n ||
        record.subject_index.size() != n) {
      throw std::invalid_argument("filter_ptb_style: record " + record.id +
                                  " has misaligned annotation arrays");
    }
    for (size_t p = 1; p < n; ++p) {
      int verb_number = verb_number_at(record, p);
      if (verb_number < 0) continue;
      int subject = record.subject_index[p];
      if (subject < 0) {
        ++result.missing_subject;
        continue;
      }
      // criterion 2: the verb must not immediately follow its subject
      if (static_cast<size_t>(subject) + 1 == p) continue;
      auto [cues, attractors] = extract_cue_attractor(record, p);
      // criterion 1: at least one attractor in the prefix
      if (attractors.empty()) continue;
      // criterion 3: not all attractors lie ten or more tokens before the subject
      bool in_range = false;
      for (size_t a : attractors) {
        if (static_cast<long>(subject) - static_cast<long>(a) < 10) {
          in_range = true;
          break;
        }
      }
      if (!in_range) continue;

      TestInstance t;
      t.tokens.assign(record.tokens.begin(), record.tokens.begin() + p);
      t.cues = cues;
      t.attractors = attractors;
      t.gold_tag = verb_number;
      t.kind = AgreementKind::kNumber;
      t.template_id = record.id + ":" + std::to_string(p);
      validate_instance(t);
      result.instances.push_back(std::move(t));
    }
  }
  return result;
}

// --- jsonl io -----------------------------------------------------------------

std::string instance_to_json(const TestInstance& instance) {
  json j;
  j["tokens"] = instance.tokens;
  j["cues"] = instance.cues;
  j["attractors"] = instance.attractors;
  j["gold_tag"] = tag_names(instance.kind)[instance.gold_tag];
  j["kind"] = agreement_name(instance.kind);
  j["template_id"] = instance.template_id;
  return j.dump();
}

TestInstance instance_from_json(const std::string& line) {
  json j = json::parse(line);
  TestInstance t;
  t.tokens = j.at("tokens").get<std::vector<std::string>>();
  t.cues = j.at("cues").get<std::vector<size_t>>();
  t.attractors = j.at("attractors").get<std::vector<size_t>>();
  t.kind = agreement_from_name(j.at("kind"));
  t.gold_tag = tag_index(t.kind, j.at("gold_tag"));
  t.template_id = j.value("template_id", "");
  validate_instance(t);
  return t;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

}  // namespace

void save_instances(const std::string& path, const std::vector<TestInstance>& instances) {
  auto out = open_out(path);
  for (const auto& t : instances) out << instance_to_json(t) << '\n';
}

std::vector<TestInstance> load_instances(const std::string& path) {
  auto in = open_in(path);
  std::vector<TestInstance> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(instance_from_json(line));
  }
  return out;
}

void save_pairs(const std::string& path, const std::vector<PerturbationPair>& pairs) {
  auto out = open_out(path);
  for (const auto& p : pairs) {
    out << json{{"first", p.first}, {"second", p.second}}.dump() << '\n';
  }
}

std::vector<PerturbationPair> load_pairs(const std::string& path) {
  auto in = open_in(path);
  std::vector<PerturbationPair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    out.push_back({j.at("first"), j.at("second")});
  }
  return out;
}

TaggedCorpusRecord record_from_json(const std::string& line) {
  json j = json::parse(line);
  TaggedCorpusRecord r;
  r.tokens = j.at("tokens").get<std::vector<std::string>>();
  r.pos = j.at("pos").get<std::vector<std::string>>();
  for (const auto& v : j.at("noun_number")) {
    r.noun_number.push_back(v.is_null() ? -1 : v.get<int>());
  }
  for (const auto& v : j.at("subject_index")) {
    r.subject_index.push_back(v.is_null() ? -1 : v.get<int>());
  }
  r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
  size_t n = r.tokens.size();
  if (r.pos.size() != n || r.noun_number.size() != n || r.subject_index.size() != n) {
    throw std::invalid_argument("tagged record " + r.id + ": annotation arrays must be parallel");
  }
  return r;
}

std::vector<TaggedCorpusRecord> load_tagged_corpus(const std::string& path) {
  auto in = open_in(path);
  std::vector<TaggedCorpusRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(record_from_json(line));
  }
  return out;
}

void save_corpus(const std::string& path, const std::vector<std::vector<std::string>>& sentences) {
  auto out = open_out(path);
  for (const auto& s : sentences) out << json(s).dump() << '\n';
}

std::vector<std::vector<std::string>> load_corpus(const std::string& path) {
  auto in = open_in(path);
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line).get<std::vector<std::string>>());
  }
  return out;
}

void save_probe_set(const std::string& path, const std::vector<LabelledPrefix>& prefixes) {
  auto out = open_out(path);
  for (const auto& p : prefixes) {
    json j;
    j["tokens"] = p.tokens;
    j["gold_tag"] = tag_names(p.kind)[p.gold_tag];
    j["kind"] = agreement_name(p.kind);
    out << j.dump() << '\n';
  }
}

std::vector<LabelledPrefix> load_probe_set(const std::string& path) {
  auto in = open_in(path);
  std::vector<LabelledPrefix> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    LabelledPrefix p;
    p.tokens = j.at("tokens").get<std::vector<std::string>>();
    p.kind = agreement_from_name(j.at("kind"));
    p.gold_tag = tag_index(p.kind, j.at("gold_tag"));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace salbench
