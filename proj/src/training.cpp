#include "salbench/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "salbench/rng.hpp"

namespace salbench {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("train: learning rate must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
}

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("distill: temperature must be > 0");
  if (!(soft_weight >= 0.0 && soft_weight <= 1.0)) {
    throw std::invalid_argument("distill: soft-target weight must lie in [0,1]");
  }
}

void save_loss_trace_csv(const std::string& path, const LossTrace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "epoch,train_loss,val_loss,learning_rate\n";
  for (size_t e = 0; e < trace.train_loss.size(); ++e) {
    out << e << ',' << trace.train_loss[e] << ','
        << (e < trace.val_loss.size() ? trace.val_loss[e] : 0.0) << ','
        << (e < trace.learning_rate.size() ? trace.learning_rate[e] : 0.0) << '\n';
  }
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor*> params, double lr, double beta1, double beta2,
                             double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Tensor* p : params_) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

void AdamOptimizer::step(const std::vector<Tensor>& grads) {
  if (grads.size() != params_.size()) {
    throw std::invalid_argument("adam: gradient count does not match parameter count");
  }
  ++step_count_;
  double bc1 = 1.0 - std::pow(beta1_, step_count_);
  double bc2 = 1.0 - std::pow(beta2_, step_count_);
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    const Tensor& g = grads[i];
    for (size_t j = 0; j < p.numel(); ++j) {
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

namespace {

// Plateau handling shared by the training loops.
struct PlateauScheduler {
  double factor;
  size_t patience;
  bool enabled;
  double best = 1e300;
  size_t bad_epochs = 0;

  double update(double monitored, double lr) {
    if (!enabled) return lr;
    if (monitored < best - 1e-9) {
      best = monitored;
      bad_epochs = 0;
      return lr;
    }
    if (++bad_epochs > patience) {
      bad_epochs = 0;
      return lr * factor;
    }
    return lr;
  }
};

std::vector<ad::NodeId> collect_param_nodes(const GraphParams& g, ad::NodeId head_w,
                                            ad::NodeId head_b, const LanguageModel& model) {
  std::vector<ad::NodeId> out;
  out.push_back(g.embedding_table);
  for (const auto& l : g.recurrent) {
    out.push_back(l.w_input);
    out.push_back(l.w_recur);
    out.push_back(l.bias);
  }
  for (const auto& l : g.attention) {
    out.push_back(l.wq);
    out.push_back(l.wk);
    out.push_back(l.wv);
    out.push_back(l.wo);
    out.push_back(l.ln1_gain);
    out.push_back(l.ln1_shift);
    out.push_back(l.ffn_w1);
    out.push_back(l.ffn_b1);
    out.push_back(l.ffn_w2);
    out.push_back(l.ffn_b2);
    out.push_back(l.ln2_gain);
    out.push_back(l.ln2_shift);
  }
  if (model.config.arch == ArchKind::kAttention) {
    out.push_back(g.final_ln_gain);
    out.push_back(g.final_ln_shift);
  }
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

struct SequenceGrad {
  std::vector<Tensor> grads;
  double loss_sum = 0.0;
  size_t tokens = 0;
};

// Builds the per-sequence training tape and differentiates the summed loss.
// `teacher_logits`/`distill` switch on the soft-target term.
SequenceGrad sequence_gradients(const LanguageModel& model, const std::vector<int>& ids,
                                const Tensor* teacher_logits, const DistillConfig* distill) {
  SequenceGrad out;
  size_t T = ids.size();
  if (T < 2) return out;
  size_t n_pred = T - 1;

  ad::Tape tape;
  GraphParams params = register_params(tape, model, true, true);
  ad::NodeId head_w = tape.leaf(model.vocab_head.weight, true);
  ad::NodeId head_b = tape.leaf(model.vocab_head.bias, true);

  std::vector<int> input(ids.begin(), ids.end() - 1);
  ad::NodeId emb = tape.gather_rows(params.embedding_table, input);
  ad::NodeId hidden = build_hidden(tape, model, params, emb, n_pred);
  ad::NodeId logits = tape.add_bias(tape.matmul(hidden, tape.transpose(head_w)), head_b);

  ad::NodeId log_probs = tape.log(tape.softmax_rows(logits));
  std::vector<std::pair<int, int>> targets;
  targets.reserve(n_pred);
  for (size_t t = 0; t < n_pred; ++t) targets.emplace_back(static_cast<int>(t), ids[t + 1]);
  ad::NodeId hard = tape.scale(tape.sum_all(tape.pick(log_probs, targets)), -1.0);

  ad::NodeId loss = hard;
  if (distill) {
    ad::NodeId scaled = tape.scale(logits, 1.0 / distill->temperature);
    ad::NodeId soft_log_probs = tape.log(tape.softmax_rows(scaled));
    // teacher distribution at the same temperature, held constant
    Tensor q(teacher_logits->shape());
    size_t v = q.dim(1);
    for (size_t t = 0; t < n_pred; ++t) {
      double mx = -1e300;
      for (size_t c = 0; c < v; ++c) mx = std::max(mx, teacher_logits->at(t, c) / distill->temperature);
      double sum = 0.0;
      for (size_t c = 0; c < v; ++c) {
        q.at(t, c) = std::exp(teacher_logits->at(t, c) / distill->temperature - mx);
        sum += q.at(t, c);
      }
      for (size_t c = 0; c < v; ++c) q.at(t, c) /= sum;
    }
    ad::NodeId soft = tape.scale(tape.sum_all(tape.mul(tape.constant(std::move(q)), soft_log_probs)),
                                 -1.0);
    loss = tape.add(tape.scale(soft, distill->soft_weight),
                    tape.scale(hard, 1.0 - distill->soft_weight));
  }

  ad::GradientMap grad_map = tape.backward(loss);
  for (ad::NodeId id : collect_param_nodes(params, head_w, head_b, model)) {
    out.grads.push_back(grad_map.at(id));
  }
  out.loss_sum = tape.value(hard)[0];
  out.tokens = n_pred;
  return out;
}

double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  if (max_norm <= 0.0) return 1.0;
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.vec()) sq += v * v;
  double norm = std::sqrt(sq);
  if (norm <= max_norm) return 1.0;
  double scale = max_norm / norm;
  for (Tensor& g : grads)
    for (double& v : g.vec()) v *= scale;
  return scale;
}

double mean_sequence_loss(const LanguageModel& model, const std::vector<std::vector<int>>& seqs) {
  double total = 0.0;
  size_t tokens = 0;
  for (const auto& ids : seqs) {
    if (ids.size() < 2) continue;
    Tensor logits = all_position_logits(model, std::vector<int>(ids.begin(), ids.end() - 1));
    size_t v = logits.dim(1);
    for (size_t t = 0; t + 1 < ids.size(); ++t) {
      double mx = -1e300;
      for (size_t c = 0; c < v; ++c) mx = std::max(mx, logits.at(t, c));
      double sum = 0.0;
      for (size_t c = 0; c < v; ++c) sum += std::exp(logits.at(t, c) - mx);
      total -= logits.at(t, ids[t + 1]) - mx - std::log(sum);
      ++tokens;
    }
  }
  return tokens == 0 ? 0.0 : total / static_cast<double>(tokens);
}

// Core loop shared by plain training and distillation.
LossTrace run_training(LanguageModel& model, const std::vector<std::vector<int>>& corpus,
                       const TrainConfig& config, const LanguageModel* teacher,
                       const DistillConfig* distill) {
  config.validate();
  std::vector<std::vector<int>> usable;
  for (const auto& s : corpus) {
    if (s.size() >= 2) usable.push_back(s);
  }
  if (usable.empty()) throw std::invalid_argument("train_lm: corpus is empty");

  // deterministic validation split
  RngStream split_rng(mix_seed(config.seed, "train-split"));
  std::vector<size_t> order(usable.size());
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[split_rng.uniform_index(i)]);
  }
  size_t val_count = std::min(usable.size() - 1,
                              static_cast<size_t>(config.val_fraction * usable.size()));
  std::vector<std::vector<int>> train_set, val_set;
  for (size_t i = 0; i < order.size(); ++i) {
    (i < val_count ? val_set : train_set).push_back(usable[order[i]]);
  }

  // teacher logits for every training sequence, fixed for the whole run
  std::vector<Tensor> teacher_logits(train_set.size());
  if (teacher) {
    for (size_t i = 0; i < train_set.size(); ++i) {
      const auto& ids = train_set[i];
      teacher_logits[i] =
          all_position_logits(*teacher, std::vector<int>(ids.begin(), ids.end() - 1));
    }
  }

  auto named = model.named_parameters();
  std::vector<Tensor*> params;
  for (auto& [name, t] : named) params.push_back(t);
  AdamOptimizer opt(params, config.learning_rate, config.adam_beta1, config.adam_beta2,
                    config.adam_eps);
  PlateauScheduler plateau{config.plateau_factor, config.plateau_patience, config.plateau};

  LossTrace trace;
  for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
    RngStream epoch_rng(mix_seed(config.seed, mix_seed(0x5eed, epoch)));
    std::vector<size_t> perm(train_set.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[epoch_rng.uniform_index(i)]);
    }

    double epoch_loss = 0.0;
    size_t epoch_tokens = 0;
    for (size_t start = 0; start < perm.size(); start += config.batch_size) {
      size_t end = std::min(perm.size(), start + config.batch_size);
      std::vector<SequenceGrad> slots(end - start);
      bool failed = false;
      std::string error;
#pragma omp parallel for schedule(dynamic)
      for (long long b = 0; b < static_cast<long long>(end - start); ++b) {
        try {
          size_t idx = perm[start + b];
          slots[b] = sequence_gradients(model, train_set[idx],
                                        teacher ? &teacher_logits[idx] : nullptr, distill);
        } catch (const std::exception& e) {
#pragma omp critical
          {
            failed = true;
            error = e.what();
          }
        }
      }
      if (failed) throw std::runtime_error("train_lm: " + error);

      // ordered reduction keeps results independent of the thread count
      std::vector<Tensor> batch_grads;
      size_t batch_tokens = 0;
      for (const auto& slot : slots) {
        if (slot.tokens == 0) continue;
        if (batch_grads.empty()) {
          batch_grads = slot.grads;
        } else {
          for (size_t i = 0; i < batch_grads.size(); ++i) {
            for (size_t j = 0; j < batch_grads[i].numel(); ++j) {
              batch_grads[i][j] += slot.grads[i][j];
            }
          }
        }
        batch_tokens += slot.tokens;
        epoch_loss += slot.loss_sum;
      }
      if (batch_tokens == 0) continue;
      epoch_tokens += batch_tokens;
      for (Tensor& g : batch_grads) {
        for (double& v : g.vec()) v /= static_cast<double>(batch_tokens);
      }
      clip_gradients(batch_grads, config.clip_norm);
      opt.step(batch_grads);
    }

    double train_ce = epoch_tokens ? epoch_loss / static_cast<double>(epoch_tokens) : 0.0;
    double val_ce = val_set.empty() ? train_ce : mean_sequence_loss(model, val_set);
    trace.train_loss.push_back(train_ce);
    trace.val_loss.push_back(val_ce);
    trace.learning_rate.push_back(opt.learning_rate());
    opt.set_learning_rate(plateau.update(val_ce, opt.learning_rate()));
  }
  return trace;
}

}  // namespace

LossTrace train_lm(LanguageModel& model, const std::vector<std::vector<int>>& corpus,
                   const TrainConfig& config) {
  return run_training(model, corpus, config, nullptr, nullptr);
}

Tensor all_position_logits(const LanguageModel& model, const std::vector<int>& ids) {
  if (ids.empty()) throw std::invalid_argument("all_position_logits: empty sequence");
  ad::Tape tape;
  GraphParams params = register_params(tape, model, false, false);
  ad::NodeId emb = tape.constant(lookup_embeddings(model, ids));
  ad::NodeId hidden = build_hidden(tape, model, params, emb, ids.size());
  ad::NodeId logits = tape.add_bias(
      tape.matmul(hidden, tape.transpose(tape.constant(model.vocab_head.weight))),
      tape.constant(model.vocab_head.bias));
  return tape.value(logits);
}

double soft_cross_entropy(const Tensor& teacher_logits, const Tensor& student_logits,
                          double temperature) {
  if (!teacher_logits.same_shape(student_logits) || teacher_logits.rank() != 1) {
    throw std::invalid_argument("soft_cross_entropy: logit vectors must share one shape");
  }
  size_t v = teacher_logits.numel();
  auto log_softmax = [&](const Tensor& x, size_t i) {
    double mx = -1e300;
    for (size_t c = 0; c < v; ++c) mx = std::max(mx, x[c] / temperature);
    double sum = 0.0;
    for (size_t c = 0; c < v; ++c) sum += std::exp(x[c] / temperature - mx);
    return x[i] / temperature - mx - std::log(sum);
  };
  double loss = 0.0;
  for (size_t c = 0; c < v; ++c) {
    double q = std::exp(log_softmax(teacher_logits, c));
    loss -= q * log_softmax(student_logits, c);
  }
  return loss;
}

ProbeTrainResult finetune_probe(const LanguageModel& model,
                                const std::vector<LabelledPrefix>& data, AgreementKind kind,
                                const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("finetune_probe: no training instances");

  ProbeTrainResult result;
  result.probe = init_probe(model.hidden_dim(), tag_names(kind), mix_seed(config.seed, "probe"));

  bool saw[2] = {false, false};
  for (const auto& p : data) saw[p.gold_tag] = true;
  result.single_class_warning = !(saw[0] && saw[1]);

  // The body is frozen, so the final hidden states are fixed features.
  size_t n = data.size();
  size_t h = model.hidden_dim();
  Tensor features({n, h});
  std::vector<int> labels(n);
  bool failed = false;
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    try {
      std::vector<int> ids = model.vocab.encode(data[i].tokens);
      ModelOutput out = forward(model, ids, HeadRef(model.vocab_head));
      size_t last = data[i].tokens.size() - 1;
      for (size_t c = 0; c < h; ++c) features.at(i, c) = out.hidden.at(last, c);
      labels[i] = data[i].gold_tag;
    } catch (const std::exception& e) {
#pragma omp critical
      {
        failed = true;
        error = e.what();
      }
    }
  }
  if (failed) throw std::runtime_error("finetune_probe: " + error);

  AdamOptimizer opt({&result.probe.weight, &result.probe.bias}, config.learning_rate,
                    config.adam_beta1, config.adam_beta2, config.adam_eps);
  PlateauScheduler plateau{config.plateau_factor, config.plateau_patience, config.plateau};

  for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
    RngStream epoch_rng(mix_seed(config.seed, mix_seed(0xbe57, epoch)));
    std::vector<size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[epoch_rng.uniform_index(i)]);
    }
    double epoch_loss = 0.0;
    for (size_t start = 0; start < n; start += config.batch_size) {
      size_t end = std::min(n, start + config.batch_size);
      size_t bsz = end - start;
      Tensor batch({bsz, h});
      std::vector<std::pair<int, int>> targets(bsz);
      for (size_t b = 0; b < bsz; ++b) {
        size_t idx = perm[start + b];
        for (size_t c = 0; c < h; ++c) batch.at(b, c) = features.at(idx, c);
        targets[b] = {static_cast<int>(b), labels[idx]};
      }
      ad::Tape tape;
      ad::NodeId w = tape.leaf(result.probe.weight, true);
      ad::NodeId b = tape.leaf(result.probe.bias, true);
      ad::NodeId logits = tape.add_bias(tape.matmul(tape.constant(batch), tape.transpose(w)), b);
      ad::NodeId log_probs = tape.log(tape.softmax_rows(logits));
      ad::NodeId loss = tape.scale(tape.mean_all(tape.pick(log_probs, targets)), -1.0);
      ad::GradientMap grads = tape.backward(loss);
      epoch_loss += tape.value(loss)[0] * static_cast<double>(bsz);
      opt.step({grads.at(w), grads.at(b)});
    }
    double ce = epoch_loss / static_cast<double>(n);
    result.trace.train_loss.push_back(ce);
    result.trace.val_loss.push_back(ce);
    result.trace.learning_rate.push_back(opt.learning_rate());
    opt.set_learning_rate(plateau.update(ce, opt.learning_rate()));
  }

  size_t correct = 0;
  for (size_t i = 0; i < n; ++i) {
    double z0 = result.probe.bias[0], z1 = result.probe.bias[1];
    for (size_t c = 0; c < h; ++c) {
      z0 += result.probe.weight.at(0, c) * features.at(i, c);
      z1 += result.probe.weight.at(1, c) * features.at(i, c);
    }
    int pred = z1 > z0 ? 1 : 0;
    if (pred == labels[i]) ++correct;
  }
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return result;
}

double probe_accuracy(const LanguageModel& model, const ProbeHead& probe,
                      const std::vector<LabelledPrefix>& data) {
  if (data.empty()) return 0.0;
  size_t correct = 0;
  bool failed = false;
  std::string error;
  std::vector<int> preds(data.size());
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(data.size()); ++i) {
    try {
      std::vector<int> ids = model.vocab.encode(data[i].tokens);
      preds[i] = predict_tag(model, ids, probe).first;
    } catch (const std::exception& e) {
#pragma omp critical
      {
        failed = true;
        error = e.what();
      }
    }
  }
  if (failed) throw std::runtime_error("probe_accuracy: " + error);
  for (size_t i = 0; i < data.size(); ++i) {
    if (preds[i] == data[i].gold_tag) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

LanguageModel distill_student(const LanguageModel& teacher,
                              const std::vector<std::vector<int>>& corpus,
                              const DistillConfig& distill, const TrainConfig& train) {
  distill.validate();
  if (teacher.config.layers <= distill.depth_reduction) {
    throw std::invalid_argument("distill: student depth would be < 1");
  }
  ModelConfig cfg = teacher.config;
  cfg.layers = teacher.config.layers - distill.depth_reduction;
  LanguageModel student = init_model(cfg, teacher.vocab, mix_seed(train.seed, "student"),
                                     teacher.model_id + "-student");
  run_training(student, corpus, train, &teacher, &distill);
  return student;
}

double argmax_agreement(const LanguageModel& teacher, const LanguageModel& student,
                        const std::vector<std::vector<int>>& corpus) {
  size_t agree = 0, total = 0;
  for (const auto& ids : corpus) {
    if (ids.size() < 2) continue;
    std::vector<int> input(ids.begin(), ids.end() - 1);
    Tensor t_logits = all_position_logits(teacher, input);
    Tensor s_logits = all_position_logits(student, input);
    size_t v = t_logits.dim(1);
    for (size_t t = 0; t < input.size(); ++t) {
      size_t t_arg = 0, s_arg = 0;
      for (size_t c = 1; c < v; ++c) {
        if (t_logits.at(t, c) > t_logits.at(t, t_arg)) t_arg = c;
        if (s_logits.at(t, c) > s_logits.at(t, s_arg)) s_arg = c;
      }
      agree += t_arg == s_arg;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(agree) / static_cast<double>(total);
}

}  // namespace salbench
