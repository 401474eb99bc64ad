#include "salbench/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "salbench/evaluation.hpp"
#include "salbench/report.hpp"
#include "salbench/rng.hpp"

namespace salbench {

namespace fs = std::filesystem;
using nlohmann::json;

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kGenerate: return "generate";
    case Stage::kTrain: return "train";
    case Stage::kProbe: return "probe";
    case Stage::kDistill: return "distill";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kRender: return "render";
  }
  return "?";
}

Stage stage_from_name(const std::string& name) {
  if (name == "generate" || name == "generate-data") return Stage::kGenerate;
  if (name == "train") return Stage::kTrain;
  if (name == "probe") return Stage::kProbe;
  if (name == "distill") return Stage::kDistill;
  if (name == "evaluate") return Stage::kEvaluate;
  if (name == "render") return Stage::kRender;
  throw std::invalid_argument("unknown stage: " + name);
}

std::vector<Stage> all_stages() {
  return {Stage::kGenerate, Stage::kTrain, Stage::kProbe,
          Stage::kDistill, Stage::kEvaluate, Stage::kRender};
}

namespace {

struct Paths {
  fs::path data, ckpt, results;

  explicit Paths(const RunConfig& cfg) : data(cfg.data_dir), ckpt(cfg.checkpoint_dir),
                                         results(cfg.results_dir) {}

  fs::path corpus() const { return data / "corpus.jsonl"; }
  fs::path instances(const std::string& dataset) const { return data / (dataset + ".jsonl"); }
  fs::path pairs(const std::string& dataset) const { return data / (dataset + "_pairs.jsonl"); }
  fs::path probe_set(AgreementKind kind) const {
    return data / ("probe_" + agreement_name(kind) + ".jsonl");
  }
  fs::path model(const std::string& arch) const { return ckpt / (arch + ".model.bin"); }
  fs::path student(const std::string& arch) const { return ckpt / (arch + ".student.bin"); }
  fs::path probe(const std::string& arch, AgreementKind kind, bool student_probe) const {
    return ckpt / (arch + (student_probe ? ".student" : "") + ".probe_" + agreement_name(kind) +
                   ".bin");
  }
  fs::path loss_trace(const std::string& arch, const std::string& which) const {
    return ckpt / (arch + "." + which + "_loss.csv");
  }
  fs::path probe_metrics() const { return ckpt / "probe_metrics.json"; }
  fs::path distill_metrics() const { return ckpt / "distill_metrics.json"; }
  fs::path report(const std::string& test, const std::string& arch) const {
    return results / (test + "_" + arch + ".json");
  }
  fs::path table(const std::string& test) const { return results / ("table_" + test + ".csv"); }
  fs::path render_page(const std::string& arch, const std::string& dataset) const {
    return results / ("render_" + arch + "_" + dataset + ".html");
  }
};

struct DatasetSpec {
  std::string name;
  bool synthetic;  // has perturbation pairs
};

std::vector<DatasetSpec> selected_datasets(const RunConfig& cfg) {
  std::vector<DatasetSpec> out;
  if (cfg.use_number) out.push_back({"number_synthetic", true});
  if (cfg.use_gender) out.push_back({"gender_synthetic", true});
  for (const auto& path : cfg.tagged_corpora) {
    out.push_back({"natural_" + fs::path(path).stem().string(), false});
  }
  return out;
}

void require_artifact(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw std::runtime_error("missing artifact " + path.string() + " (run the " + producer +
                             " stage first)");
  }
}

bool all_exist(const std::vector<fs::path>& paths) {
  for (const auto& p : paths) {
    if (!fs::exists(p)) return false;
  }
  return true;
}

std::vector<EvalMethod> evaluation_grid(const RunConfig& cfg, bool include_baselines) {
  std::vector<EvalMethod> grid;
  for (SaliencyMethod m : cfg.methods) {
    for (Composition c : cfg.compositions) {
      SaliencyConfig sc = cfg.saliency;
      sc.method = m;
      sc.composition = c;
      grid.push_back(EvalMethod::saliency(sc));
    }
  }
  if (include_baselines && cfg.baselines) {
    grid.push_back(EvalMethod::random());
    grid.push_back(EvalMethod::nearest());
  }
  return grid;
}

// --- generate ----------------------------------------------------------------

void stage_generate(const RunConfig& cfg, const Paths& paths, bool force) {
  std::vector<fs::path> outputs = {paths.corpus(), paths.probe_set(AgreementKind::kNumber),
                                   paths.probe_set(AgreementKind::kGender)};
  for (const auto& ds : selected_datasets(cfg)) {
    outputs.push_back(paths.instances(ds.name));
    if (ds.synthetic) outputs.push_back(paths.pairs(ds.name));
  }
  if (!force && all_exist(outputs)) {
    std::cout << "[generate] up to date\n";
    return;
  }
  fs::create_directories(paths.data);

  NumberLexicon num_lex = NumberLexicon::builtin();
  GenderLexicon gen_lex = GenderLexicon::builtin();

  auto corpus = generate_lm_corpus(mix_seed(cfg.seed, "corpus"), cfg.corpus_sentences, num_lex,
                                   gen_lex);
  save_corpus(paths.corpus().string(), corpus);

  if (cfg.use_number) {
    GeneratedData d = generate_number_agreement(mix_seed(cfg.seed, "number"), cfg.number_count,
                                                num_lex);
    save_instances(paths.instances("number_synthetic").string(), d.instances);
    save_pairs(paths.pairs("number_synthetic").string(), make_perturbation_pairs(d.instances));
  }
  if (cfg.use_gender) {
    GeneratedData d = generate_gender_agreement(mix_seed(cfg.seed, "gender"), cfg.gender_count,
                                                gen_lex);
    save_instances(paths.instances("gender_synthetic").string(), d.instances);
    save_pairs(paths.pairs("gender_synthetic").string(), make_perturbation_pairs(d.instances));
  }
  for (const auto& path : cfg.tagged_corpora) {
    auto records = load_tagged_corpus(path);
    FilterResult filtered = filter_ptb_style(records);
    std::string name = "natural_" + fs::path(path).stem().string();
    save_instances(paths.instances(name).string(), filtered.instances);
    if (filtered.missing_subject > 0) {
      std::cout << "[generate] " << path << ": skipped " << filtered.missing_subject
                << " candidates without subject indices\n";
    }
  }

  save_probe_set(paths.probe_set(AgreementKind::kNumber).string(),
                 generate_probe_set(mix_seed(cfg.seed, "probe-number"), cfg.probe_count,
                                    AgreementKind::kNumber, num_lex, gen_lex));
  save_probe_set(paths.probe_set(AgreementKind::kGender).string(),
                 generate_probe_set(mix_seed(cfg.seed, "probe-gender"), cfg.probe_count,
                                    AgreementKind::kGender, num_lex, gen_lex));
  std::cout << "[generate] wrote datasets to " << paths.data.string() << "\n";
}

// --- train -------------------------------------------------------------------

Vocabulary build_vocabulary(const RunConfig& cfg, const Paths& paths) {
  std::set<std::string> tokens;
  for (const auto& sentence : load_corpus(paths.corpus().string())) {
    tokens.insert(sentence.begin(), sentence.end());
  }
  for (const auto& ds : selected_datasets(cfg)) {
    for (const auto& inst : load_instances(paths.instances(ds.name).string())) {
      tokens.insert(inst.tokens.begin(), inst.tokens.end());
    }
  }
  for (AgreementKind kind : {AgreementKind::kNumber, AgreementKind::kGender}) {
    for (const auto& p : load_probe_set(paths.probe_set(kind).string())) {
      tokens.insert(p.tokens.begin(), p.tokens.end());
    }
  }
  Vocabulary vocab;
  for (const auto& t : tokens) vocab.add(t);
  return vocab;
}

ModelConfig arch_config(const RunConfig& cfg, ArchKind arch) {
  ModelConfig mc = cfg.model;
  mc.arch = arch;
  return mc;
}

void stage_train(const RunConfig& cfg, const Paths& paths, bool force) {
  std::vector<fs::path> outputs;
  for (ArchKind arch : cfg.archs) outputs.push_back(paths.model(arch_name(arch)));
  if (!force && all_exist(outputs)) {
    std::cout << "[train] up to date\n";
    return;
  }
  require_artifact(paths.corpus(), "generate");
  fs::create_directories(paths.ckpt);

  Vocabulary vocab = build_vocabulary(cfg, paths);
  auto sentences = load_corpus(paths.corpus().string());
  std::vector<std::vector<int>> corpus;
  corpus.reserve(sentences.size());
  for (const auto& s : sentences) corpus.push_back(vocab.encode(s));

  for (ArchKind arch : cfg.archs) {
    std::string name = arch_name(arch);
    LanguageModel model = init_model(arch_config(cfg, arch), vocab, mix_seed(cfg.seed, name),
                                     name);
    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(cfg.seed, name + "-train");
    LossTrace trace = train_lm(model, corpus, tc);
    save_model(model, paths.model(name).string());
    save_loss_trace_csv(paths.loss_trace(name, "train").string(), trace);
    std::cout << "[train] " << name << ": " << trace.train_loss.size() << " epochs, final loss "
              << (trace.train_loss.empty() ? 0.0 : trace.train_loss.back()) << "\n";
  }
}

// --- probe -------------------------------------------------------------------

struct ProbeSplit {
  std::vector<LabelledPrefix> train, holdout;
};

ProbeSplit split_probe_set(std::vector<LabelledPrefix> data, double holdout_fraction,
                           uint64_t seed) {
  RngStream rng(mix_seed(seed, "probe-split"));
  for (size_t i = data.size(); i > 1; --i) {
    std::swap(data[i - 1], data[rng.uniform_index(i)]);
  }
  size_t holdout = static_cast<size_t>(holdout_fraction * data.size());
  ProbeSplit split;
  for (size_t i = 0; i < data.size(); ++i) {
    (i < holdout ? split.holdout : split.train).push_back(std::move(data[i]));
  }
  return split;
}

json train_probes_for(const LanguageModel& model, const RunConfig& cfg, const Paths& paths,
                      const std::string& name, bool student_probe) {
  json metrics;
  for (AgreementKind kind : {AgreementKind::kNumber, AgreementKind::kGender}) {
    auto data = load_probe_set(paths.probe_set(kind).string());
    ProbeSplit split = split_probe_set(std::move(data), cfg.probe_holdout,
                                       mix_seed(cfg.seed, name + agreement_name(kind)));
    TrainConfig tc = cfg.probe_train;
    tc.seed = mix_seed(cfg.seed, name + "-probe-" + agreement_name(kind));
    ProbeTrainResult result = finetune_probe(model, split.train, kind, tc);
    double holdout_acc = split.holdout.empty()
                             ? result.train_accuracy
                             : probe_accuracy(model, result.probe, split.holdout);
    save_probe(result.probe, paths.probe(name, kind, student_probe).string());
    metrics[agreement_name(kind)] = {{"train_accuracy", result.train_accuracy},
                                     {"holdout_accuracy", holdout_acc},
                                     {"single_class_warning", result.single_class_warning}};
    std::cout << "[probe] " << name << (student_probe ? " (student)" : "") << " "
              << agreement_name(kind) << ": train acc " << result.train_accuracy
              << ", holdout acc " << holdout_acc << "\n";
  }
  return metrics;
}

void stage_probe(const RunConfig& cfg, const Paths& paths, bool force) {
  std::vector<fs::path> outputs = {paths.probe_metrics()};
  for (ArchKind arch : cfg.archs) {
    for (AgreementKind kind : {AgreementKind::kNumber, AgreementKind::kGender}) {
      outputs.push_back(paths.probe(arch_name(arch), kind, false));
    }
  }
  if (!force && all_exist(outputs)) {
    std::cout << "[probe] up to date\n";
    return;
  }
  json metrics;
  for (ArchKind arch : cfg.archs) {
    std::string name = arch_name(arch);
    require_artifact(paths.model(name), "train");
    require_artifact(paths.probe_set(AgreementKind::kNumber), "generate");
    LanguageModel model = load_model(paths.model(name).string());
    metrics[name] = train_probes_for(model, cfg, paths, name, false);
  }
  std::ofstream out(paths.probe_metrics());
  out << metrics.dump(2) << "\n";
}

// --- distill -----------------------------------------------------------------

void stage_distill(const RunConfig& cfg, const Paths& paths, bool force) {
  std::vector<fs::path> outputs = {paths.distill_metrics()};
  for (ArchKind arch : cfg.archs) {
    std::string name = arch_name(arch);
    outputs.push_back(paths.student(name));
    for (AgreementKind kind : {AgreementKind::kNumber, AgreementKind::kGender}) {
      outputs.push_back(paths.probe(name, kind, true));
    }
  }
  if (!force && all_exist(outputs)) {
    std::cout << "[distill] up to date\n";
    return;
  }
  require_artifact(paths.corpus(), "generate");

  json metrics;
  for (ArchKind arch : cfg.archs) {
    std::string name = arch_name(arch);
    require_artifact(paths.model(name), "train");
    LanguageModel teacher = load_model(paths.model(name).string());

    auto sentences = load_corpus(paths.corpus().string());
    std::vector<std::vector<int>> corpus;
    corpus.reserve(sentences.size());
    for (const auto& s : sentences) corpus.push_back(teacher.vocab.encode(s));

    TrainConfig tc = cfg.train;
    if (cfg.distill_epochs > 0) tc.epochs = cfg.distill_epochs;
    tc.seed = mix_seed(cfg.seed, name + "-distill");
    LanguageModel student = distill_student(teacher, corpus, cfg.distill, tc);
    save_model(student, paths.student(name).string());

    double agreement = argmax_agreement(teacher, student, corpus);
    metrics[name] = {{"teacher_parameters", teacher.parameter_count()},
                     {"student_parameters", student.parameter_count()},
                     {"argmax_agreement", agreement}};
    std::cout << "[distill] " << name << ": student/teacher argmax agreement " << agreement
              << "\n";

    metrics[name]["probes"] = train_probes_for(student, cfg, paths, name, true);
  }
  std::ofstream out(paths.distill_metrics());
  out << metrics.dump(2) << "\n";
}

// --- evaluate ----------------------------------------------------------------

void stage_evaluate(const RunConfig& cfg, const Paths& paths, bool force) {
  std::vector<std::string> tests;
  if (cfg.eval_plausibility) tests.push_back("plausibility");
  if (cfg.eval_input_consistency) tests.push_back("input_consistency");
  if (cfg.eval_model_consistency) tests.push_back("model_consistency");

  std::vector<fs::path> outputs;
  for (const auto& t : tests) {
    outputs.push_back(paths.table(t));
    for (ArchKind arch : cfg.archs) outputs.push_back(paths.report(t, arch_name(arch)));
  }
  if (!force && all_exist(outputs)) {
    std::cout << "[evaluate] up to date\n";
    return;
  }
  fs::create_directories(paths.results);

  std::map<std::string, EvalReport> plausibility, input_cons, model_cons;

  for (ArchKind arch : cfg.archs) {
    std::string name = arch_name(arch);
    require_artifact(paths.model(name), "train");
    LanguageModel model = load_model(paths.model(name).string());

    std::map<AgreementKind, ProbeHead> probes;
    for (AgreementKind kind : {AgreementKind::kNumber, AgreementKind::kGender}) {
      require_artifact(paths.probe(name, kind, false), "probe");
      probes.emplace(kind, load_probe(paths.probe(name, kind, false).string()));
    }

    LanguageModel student;
    std::map<AgreementKind, ProbeHead> student_probes;
    if (cfg.eval_model_consistency) {
      require_artifact(paths.student(name), "distill");
      student = load_model(paths.student(name).string());
      for (AgreementKind kind : {AgreementKind::kNumber, AgreementKind::kGender}) {
        require_artifact(paths.probe(name, kind, true), "distill");
        student_probes.emplace(kind, load_probe(paths.probe(name, kind, true).string()));
      }
    }

    for (const auto& ds : selected_datasets(cfg)) {
      require_artifact(paths.instances(ds.name), "generate");
      auto instances = load_instances(paths.instances(ds.name).string());
      if (instances.empty()) continue;
      AgreementKind kind = instances.front().kind;
      const ProbeHead& probe = probes.at(kind);
      uint64_t ds_seed = mix_seed(cfg.seed, name + ":" + ds.name);

      if (cfg.eval_plausibility) {
        for (const EvalMethod& method : evaluation_grid(cfg, true)) {
          PlausibilityOutcome outcome =
              run_plausibility(model, probe, method, instances, ds_seed);
          plausibility[name][ds.name][method.method_label()][method.composition_label()] =
              outcome.stats;
        }
      }
      if (cfg.eval_input_consistency && ds.synthetic) {
        auto pairs = load_pairs(paths.pairs(ds.name).string());
        for (const EvalMethod& method : evaluation_grid(cfg, false)) {
          ConsistencyOutcome outcome =
              input_consistency(model, probe, method, instances, pairs, ds_seed);
          input_cons[name][ds.name][method.method_label()][method.composition_label()] =
              outcome.stats;
        }
      }
      if (cfg.eval_model_consistency) {
        const ProbeHead& sprobe = student_probes.at(kind);
        for (const EvalMethod& method : evaluation_grid(cfg, false)) {
          ConsistencyOutcome outcome =
              model_consistency(model, probe, student, sprobe, method, instances, ds_seed);
          model_cons[name][ds.name][method.method_label()][method.composition_label()] =
              outcome.stats;
        }
      }
      std::cout << "[evaluate] " << name << " on " << ds.name << " done\n";
    }
  }

  auto write_reports = [&](const std::string& test,
                           const std::map<std::string, EvalReport>& by_arch) {
    for (const auto& [arch, report] : by_arch) {
      std::ofstream out(paths.report(test, arch));
      out << report_to_json(report);
    }
    std::ofstream table(paths.table(test));
    table << table_csv(by_arch);
  };
  if (cfg.eval_plausibility) write_reports("plausibility", plausibility);
  if (cfg.eval_input_consistency) write_reports("input_consistency", input_cons);
  if (cfg.eval_model_consistency) write_reports("model_consistency", model_cons);
}

// --- render ------------------------------------------------------------------

void stage_render(const RunConfig& cfg, const Paths& paths, bool force) {
  std::vector<fs::path> outputs;
  for (ArchKind arch : cfg.archs) {
    for (const auto& ds : selected_datasets(cfg)) {
      outputs.push_back(paths.render_page(arch_name(arch), ds.name));
    }
  }
  if (!force && all_exist(outputs)) {
    std::cout << "[render] up to date\n";
    return;
  }
  fs::create_directories(paths.results);
  if (cfg.methods.empty()) {
    std::cout << "[render] no saliency methods selected; nothing to render\n";
    return;
  }
  SaliencyConfig sc = cfg.saliency;
  sc.method = cfg.methods.front();
  sc.composition = cfg.compositions.front();

  for (ArchKind arch : cfg.archs) {
    std::string name = arch_name(arch);
    require_artifact(paths.model(name), "train");
    LanguageModel model = load_model(paths.model(name).string());
    for (const auto& ds : selected_datasets(cfg)) {
      require_artifact(paths.instances(ds.name), "generate");
      auto instances = load_instances(paths.instances(ds.name).string());
      if (instances.empty()) continue;
      AgreementKind kind = instances.front().kind;
      require_artifact(paths.probe(name, kind, false), "probe");
      ProbeHead probe = load_probe(paths.probe(name, kind, false).string());

      uint64_t ds_seed = mix_seed(cfg.seed, name + ":" + ds.name);
      std::vector<std::string> fragments;
      size_t count = std::min(cfg.render_count, instances.size());
      for (size_t i = 0; i < count; ++i) {
        const TestInstance& inst = instances[i];
        std::vector<int> ids = model.vocab.encode(inst.tokens);
        auto [tag, logits] = predict_tag(model, ids, probe);
        Scenario scenario = classify_scenario(tag, inst.gold_tag);
        SaliencyConfig inst_cfg = sc;
        inst_cfg.sg_seed = mix_seed(mix_seed(ds_seed, method_name(sc.method)), i);
        SaliencyMap map = word_saliency(model, ids, tag, HeadRef(probe), inst_cfg);
        bool pass = false;
        if (!inst.cues.empty() && !inst.attractors.empty()) {
          pass = plausibility_test(map.scores, inst.cues, inst.attractors, scenario);
        }
        fragments.push_back(render_html(inst, map, scenario, pass, tag_names(kind)[tag]));
      }
      std::string title = name + " / " + ds.name + " (" + method_name(sc.method) + "+" +
                          composition_name(sc.composition) + ")";
      std::ofstream out(paths.render_page(name, ds.name));
      out << html_document(title, fragments);
    }
  }
  std::cout << "[render] wrote interpretation pages\n";
}

}  // namespace

void run_pipeline(const RunConfig& config, const std::vector<Stage>& stages, bool force) {
  RunConfig cfg = config;
  if (const char* env = std::getenv("SALBENCH_RESULTS_DIR")) {
    if (*env) cfg.results_dir = env;
  }
  cfg.validate();
#ifdef _OPENMP
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#endif
  Paths paths(cfg);
  for (Stage s : stages) {
    switch (s) {
      case Stage::kGenerate: stage_generate(cfg, paths, force); break;
      case Stage::kTrain: stage_train(cfg, paths, force); break;
      case Stage::kProbe: stage_probe(cfg, paths, force); break;
      case Stage::kDistill: stage_distill(cfg, paths, force); break;
      case Stage::kEvaluate: stage_evaluate(cfg, paths, force); break;
      case Stage::kRender: stage_render(cfg, paths, force); break;
    }
  }
}

}  // namespace salbench
