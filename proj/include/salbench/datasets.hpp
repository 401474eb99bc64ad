#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace salbench {

enum class AgreementKind { kNumber, kGender };

std::string agreement_name(AgreementKind kind);
AgreementKind agreement_from_name(const std::string& name);

/// Tag names per agreement kind; class index 0 first.
/// number: SINGULAR/PLURAL, gender: FEMININE/MASCULINE.
std::array<std::string, 2> tag_names(AgreementKind kind);
int tag_index(AgreementKind kind, const std::string& tag);

/// A token prefix with cue/attractor annotation; the atomic unit of
/// evaluation. Cue positions share the gold agreement feature, attractor
/// positions carry the conflicting one.
struct TestInstance {
  std::vector<std::string> tokens;
  std::vector<size_t> cues;
  std::vector<size_t> attractors;
  int gold_tag = 0;
  AgreementKind kind = AgreementKind::kNumber;
  std::string template_id;  // empty when not template-generated
};

/// Throws if the instance violates its invariants (disjoint sets, indices in
/// range, non-empty attractor set).
void validate_instance(const TestInstance& instance);

/// Two instances from the same template, assumed interpretation-preserving.
/// Members are indices into the generating instance list.
struct PerturbationPair {
  size_t first = 0;
  size_t second = 0;
};

/// Prefix + gold tag only; used for probe fine-tuning.
struct LabelledPrefix {
  std::vector<std::string> tokens;
  int gold_tag = 0;
  AgreementKind kind = AgreementKind::kNumber;
};

// --- lexicons ---------------------------------------------------------------

struct NounEntry {
  std::string singular;
  std::string plural;  // empty when the lexicon lacks the plural form
};

struct VerbEntry {
  std::string singular;
  std::string plural;
};

struct NumberLexicon {
  std::vector<NounEntry> nouns;
  std::vector<VerbEntry> embedded_verbs;  // verbs inside relative clauses
  std::vector<VerbEntry> main_verbs;      // sentence continuations for the LM corpus
  std::vector<std::string> prepositions;
  static NumberLexicon builtin();
};

struct GenderLexicon {
  std::vector<std::string> feminine;
  std::vector<std::string> masculine;
  std::vector<std::string> interaction_verbs;            // past tense
  std::vector<std::vector<std::string>> complements;     // trailing token runs
  std::vector<std::string> report_verbs;                 // "said" etc., for one-entity data
  std::string feminine_pronoun = "she";
  std::string masculine_pronoun = "he";
  static GenderLexicon builtin();
};

// --- generators ---------------------------------------------------------------

struct GeneratedData {
  std::vector<TestInstance> instances;
};

/// Relative-clause and prepositional-phrase prefixes with exactly one cue
/// (the subject) and one attractor (a noun of the opposite number).
/// Pure function of (seed, count, lexicon).
GeneratedData generate_number_agreement(uint64_t seed, size_t count, const NumberLexicon& lex);

/// Two-entity prefixes ending right before a pronoun, one feminine and one
/// masculine antecedent; candidate noun pairs of the same gender are
/// excluded. The feminine pronoun is the expected case by convention, so
/// gold is always FEMININE.
GeneratedData generate_gender_agreement(uint64_t seed, size_t count, const GenderLexicon& lex);

/// For each template: (first instance, every other instance).
std::vector<PerturbationPair> make_perturbation_pairs(const std::vector<TestInstance>& instances);

/// Full sentences for language-model training drawn from the same grammars.
std::vector<std::vector<std::string>> generate_lm_corpus(uint64_t seed, size_t sentence_count,
                                                         const NumberLexicon& num_lex,
                                                         const GenderLexicon& gen_lex);

/// Labelled prefixes for probe fine-tuning, balanced across the two tags.
std::vector<LabelledPrefix> generate_probe_set(uint64_t seed, size_t count, AgreementKind kind,
                                               const NumberLexicon& num_lex,
                                               const GenderLexicon& gen_lex);

// --- natural-data ingestion ---------------------------------------------------

/// One sentence of a user-supplied pre-tagged corpus.
struct TaggedCorpusRecord {
  std::vector<std::string> tokens;
  std::vector<std::string> pos;
  std::vector<int> noun_number;    // -1 none, 0 singular, 1 plural
  std::vector<int> subject_index;  // -1 none; for verbs, the grammatical subject position
  std::string id;
};

/// Cue positions = nouns before the verb matching its number; attractors =
/// nouns with the other number. Either set may come back empty; callers
/// filter.
std::pair<std::vector<size_t>, std::vector<size_t>> extract_cue_attractor(
    const TaggedCorpusRecord& record, size_t verb_position);

struct FilterResult {
  std::vector<TestInstance> instances;
  size_t missing_subject = 0;  // candidates skipped for lack of a subject index
};

/// Emits one instance per present-tense verb or copula that passes all
/// three filtering criteria: the prefix has an attractor, the verb does not
/// immediately follow its subject, and at least one attractor falls within
/// ten tokens of the subject.
FilterResult filter_ptb_style(const std::vector<TaggedCorpusRecord>& records);

// --- jsonl io -----------------------------------------------------------------

std::string instance_to_json(const TestInstance& instance);
TestInstance instance_from_json(const std::string& line);
void save_instances(const std::string& path, const std::vector<TestInstance>& instances);
std::vector<TestInstance> load_instances(const std::string& path);

void save_pairs(const std::string& path, const std::vector<PerturbationPair>& pairs);
std::vector<PerturbationPair> load_pairs(const std::string& path);

TaggedCorpusRecord record_from_json(const std::string& line);
std::vector<TaggedCorpusRecord> load_tagged_corpus(const std::string& path);

void save_corpus(const std::string& path, const std::vector<std::vector<std::string>>& sentences);
std::vector<std::vector<std::string>> load_corpus(const std::string& path);

void save_probe_set(const std::string& path, const std::vector<LabelledPrefix>& prefixes);
std::vector<LabelledPrefix> load_probe_set(const std::string& path);

}  // namespace salbench
