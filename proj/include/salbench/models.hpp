#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "salbench/tape.hpp"
#include "salbench/tensor.hpp"
#include "salbench/vocab.hpp"

namespace salbench {

enum class ArchKind { kRecurrent, kAttention };

std::string arch_name(ArchKind arch);
ArchKind arch_from_name(const std::string& name);

struct EmbeddingTable {
  Tensor weights;  // [vocab, dim]
  size_t vocab_size() const { return weights.dim(0); }
  size_t dim() const { return weights.dim(1); }
};

struct RecurrentLayer {
  Tensor w_input;  // [4h, in]
  Tensor w_recur;  // [4h, h]
  Tensor bias;     // [4h]
};

struct AttentionLayer {
  Tensor wq, wk, wv, wo;  // [d, d]
  Tensor ln1_gain, ln1_shift;
  Tensor ffn_w1;  // [d, ffn]
  Tensor ffn_b1;  // [ffn]
  Tensor ffn_w2;  // [ffn, d]
  Tensor ffn_b2;  // [d]
  Tensor ln2_gain, ln2_shift;
};

struct VocabHead {
  Tensor weight;  // [vocab, h]
  Tensor bias;    // [vocab]
};

/// Substituted final linear layer predicting a binary agreement tag.
struct ProbeHead {
  Tensor weight;  // [2, h]
  Tensor bias;    // [2]
  std::array<std::string, 2> tags;
};

struct ModelConfig {
  ArchKind arch = ArchKind::kRecurrent;
  size_t embed_dim = 32;
  size_t hidden_dim = 64;  // attention models use hidden_dim == embed_dim
  size_t layers = 2;
  size_t heads = 2;
  size_t ffn_dim = 64;
};

struct LanguageModel {
  ModelConfig config;
  Vocabulary vocab;
  EmbeddingTable embedding;
  std::vector<RecurrentLayer> recurrent;
  std::vector<AttentionLayer> attention;
  Tensor final_ln_gain, final_ln_shift;  // attention only
  VocabHead vocab_head;
  std::string model_id;

  size_t hidden_dim() const {
    return config.arch == ArchKind::kRecurrent ? config.hidden_dim : config.embed_dim;
  }
  /// Every learnable tensor, in a stable order (used by the optimizer and
  /// the checkpoint writer).
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;
  size_t parameter_count() const;
};

LanguageModel init_model(const ModelConfig& config, Vocabulary vocab, uint64_t seed,
                         std::string model_id);
ProbeHead init_probe(size_t hidden_dim, std::array<std::string, 2> tags, uint64_t seed);

/// Which scalar the saliency gradient differentiates. The prediction score
/// defaults to the pre-softmax logit of the target class; the softmax
/// log-probability is available behind this switch.
enum class ScoreKind { kLogit, kLogProb };

struct HeadRef {
  const Tensor* weight;
  const Tensor* bias;
  HeadRef(const VocabHead& h) : weight(&h.weight), bias(&h.bias) {}
  HeadRef(const ProbeHead& h) : weight(&h.weight), bias(&h.bias) {}
  size_t classes() const { return weight->dim(0); }
};

struct ModelOutput {
  Tensor logits;  // [classes], final prefix position
  Tensor hidden;  // [T, h]
};

/// Embedding vectors for a prefix: one row per position. This is the
/// differentiation point for saliency (after table lookup, before any
/// position encoding is added).
Tensor lookup_embeddings(const LanguageModel& model, std::span<const int> prefix);

ModelOutput forward(const LanguageModel& model, std::span<const int> prefix, HeadRef head);

/// argmax probe tag with ties broken toward class index 0.
std::pair<int, Tensor> predict_tag(const LanguageModel& model, std::span<const int> prefix,
                                   const ProbeHead& probe);

struct ScoreGrad {
  double score;
  Tensor grad;  // [T, d], d(score)/d(embedding row)
};

/// Score of `target_class` at position `pos` (default: last) together with
/// its gradient with respect to the injected embeddings.
ScoreGrad score_and_input_gradient(const LanguageModel& model, const Tensor& embeddings,
                                   int target_class, HeadRef head,
                                   ScoreKind kind = ScoreKind::kLogit, long pos = -1);

double score_only(const LanguageModel& model, const Tensor& embeddings, int target_class,
                  HeadRef head, ScoreKind kind = ScoreKind::kLogit, long pos = -1);

/// d(score of target_class at final position)/d(embedding rows).
Tensor input_gradient(const LanguageModel& model, std::span<const int> prefix, int target_class,
                      HeadRef head, ScoreKind kind = ScoreKind::kLogit);

// --- tape builders shared with the training module --------------------------

/// Tape-node handles for one model's parameters.
struct GraphParams {
  ad::NodeId embedding_table = -1;
  struct RecurrentNodes {
    ad::NodeId w_input, w_recur, bias;
  };
  struct AttentionNodes {
    ad::NodeId wq, wk, wv, wo;
    ad::NodeId ln1_gain, ln1_shift, ln2_gain, ln2_shift;
    ad::NodeId ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };
  std::vector<RecurrentNodes> recurrent;
  std::vector<AttentionNodes> attention;
  ad::NodeId final_ln_gain = -1, final_ln_shift = -1;
};

/// Registers all body parameters on the tape. `requires_grad` selects
/// training mode (parameters become differentiation targets) versus
/// interpretation mode (parameters are constants).
GraphParams register_params(ad::Tape& tape, const LanguageModel& model, bool requires_grad,
                            bool include_embedding);

/// Builds the model body over an embedding node [T,d]; returns hidden [T,h].
ad::NodeId build_hidden(ad::Tape& tape, const LanguageModel& model, const GraphParams& params,
                        ad::NodeId embeddings, size_t prefix_len);

/// Sinusoidal position encodings [T,d].
Tensor position_encodings(size_t prefix_len, size_t dim);

// --- checkpoint container ----------------------------------------------------
//
// Versioned binary container: a JSON header (architecture descriptor plus
// vocabulary) followed by raw 64-bit parameter data. Round-trips bit-exactly.

void save_model(const LanguageModel& model, const std::string& path);
LanguageModel load_model(const std::string& path);
void save_probe(const ProbeHead& probe, const std::string& path);
ProbeHead load_probe(const std::string& path);

}  // namespace salbench
