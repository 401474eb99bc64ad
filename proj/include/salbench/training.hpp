#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "salbench/datasets.hpp"
#include "salbench/models.hpp"

namespace salbench {

struct TrainConfig {
  size_t epochs = 10;
  size_t batch_size = 16;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool plateau = true;  // ReduceLROnPlateau; constant learning rate when off
  double plateau_factor = 0.5;
  size_t plateau_patience = 2;
  double clip_norm = 1.0;  // global-norm gradient clip; 0 disables
  double val_fraction = 0.1;
  uint64_t seed = 0;

  void validate() const;
};

struct DistillConfig {
  double temperature = 2.0;
  size_t depth_reduction = 1;  // student depth = teacher depth - reduction
  double soft_weight = 0.5;    // hard-label term weighted by 1 - soft_weight

  void validate() const;
};

struct LossTrace {
  std::vector<double> train_loss;  // per-epoch mean cross-entropy per token
  std::vector<double> val_loss;
  std::vector<double> learning_rate;
};

void save_loss_trace_csv(const std::string& path, const LossTrace& trace);

/// Adam over a fixed parameter list. Gradients are passed per step in the
/// same order.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(const std::vector<Tensor>& grads);
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
};

/// Next-token cross-entropy training. Deterministic for a fixed seed,
/// independent of the worker thread count.
LossTrace train_lm(LanguageModel& model, const std::vector<std::vector<int>>& corpus,
                   const TrainConfig& config);

struct ProbeTrainResult {
  ProbeHead probe;
  LossTrace trace;
  double train_accuracy = 0.0;
  bool single_class_warning = false;
};

/// Fine-tunes a fresh probe head on final hidden states; every body
/// parameter stays bit-identical (the model is never written).
ProbeTrainResult finetune_probe(const LanguageModel& model,
                                const std::vector<LabelledPrefix>& data, AgreementKind kind,
                                const TrainConfig& config);

double probe_accuracy(const LanguageModel& model, const ProbeHead& probe,
                      const std::vector<LabelledPrefix>& data);

/// Logits for every prefix position under the vocabulary head.
Tensor all_position_logits(const LanguageModel& model, const std::vector<int>& ids);

/// Temperature-softened cross-entropy between a teacher and a student logit
/// row: -sum_c softmax(t/T)_c * log softmax(s/T)_c.
double soft_cross_entropy(const Tensor& teacher_logits, const Tensor& student_logits,
                          double temperature);

/// Trains a shallower student against the teacher's token distributions
/// (soft targets at the configured temperature) plus the hard next-token
/// term. The student's probe is fine-tuned separately, exactly like the
/// teacher's.
LanguageModel distill_student(const LanguageModel& teacher,
                              const std::vector<std::vector<int>>& corpus,
                              const DistillConfig& distill, const TrainConfig& train);

/// Fraction of positions where student and teacher argmax predictions agree.
double argmax_agreement(const LanguageModel& teacher, const LanguageModel& student,
                        const std::vector<std::vector<int>>& corpus);

}  // namespace salbench
