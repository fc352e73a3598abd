// Copyright 2026 The zsdistill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// The staged pipeline: teacher -> feature pre-training -> fine-tuning ->
// evaluation. Checkpoints are cached under a content hash of everything that
// determines them, so sweeps that share a teacher or a pre-trained student
// train it once.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "zsd/checkpoint.hpp"
#include "zsd/config.hpp"
#include "zsd/eval.hpp"
#include "zsd/report.hpp"
#include "zsd/train.hpp"
#include "zsd/world.hpp"

namespace zsd {

// Bumped whenever a change to training code invalidates cached checkpoints.
inline constexpr const char* kPipelineVersion = "zsd-pipeline-2";

class GateError : public Error {
 public:
  using Error::Error;
};

class MissingDependencyError : public Error {
 public:
  using Error::Error;
};

struct GateResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

struct StageRecord {
  std::string stage;
  std::string checkpoint;
  bool cached = false;
  std::size_t steps = 0;  // optimizer steps actually run in this invocation
};

struct RunResult {
  std::vector<EvalReport> reports;
  std::vector<GateResult> gates;
  std::vector<StageRecord> stages;
  std::string report_dir;

  std::size_t training_steps() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.steps;
    return n;
  }
  bool gates_passed() const {
    for (const auto& g : gates) {
      if (!g.passed) return false;
    }
    return true;
  }
};

using RunLog = std::function<void(const std::string&)>;

inline TrainOptions train_options(const StageOptimizer& o, std::size_t log_every) {
  TrainOptions t;
  t.steps = o.steps;
  t.batch = o.batch;
  t.lr = o.lr;
  t.beta2 = o.beta2;
  t.eps = o.eps;
  t.weight_decay = o.weight_decay;
  t.crop = o.crop;
  t.log_every = log_every;
  return t;
}

inline Dataset concat_datasets(std::string name, const std::vector<const Dataset*>& parts) {
  if (parts.empty()) throw Error("concat_datasets: nothing to concatenate");
  Dataset out{parts.front()->spec, {}};
  out.spec.name = std::move(name);
  for (const auto* p : parts) out.samples.insert(out.samples.end(), p->samples.begin(), p->samples.end());
  return out;
}

// Cache keys. Gate thresholds are excluded: changing a floor must not retrain.
inline std::string teacher_key(const ExperimentConfig& cfg) {
  Fnv1a h;
  h.update(kPipelineVersion).update("seed=" + std::to_string(cfg.seed));
  h.update(section_ini(cfg, "world")).update(section_ini(cfg, "teacher", {"min_", "gate_", "probe"}));
  return hex64(h.digest());
}

inline std::string pretrain_key(const ExperimentConfig& cfg) {
  Fnv1a h;
  h.update(teacher_key(cfg)).update(section_ini(cfg, "pretrain", {"min_"}));
  return hex64(h.digest());
}

inline std::string finetune_key(const ExperimentConfig& cfg, const std::string& set, const std::string& tag,
                                std::size_t k) {
  Fnv1a h;
  h.update(pretrain_key(cfg)).update(section_ini(cfg, "finetune", {"sets", "tags"}));
  h.update(section_ini(cfg, "set." + set)).update("set=" + set).update("tag=" + tag);
  h.update("k=" + std::to_string(k));
  return hex64(h.digest());
}

inline std::string safe_file_part(std::string s) {
  for (auto& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  }
  return s;
}

class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, RunLog log) : cfg_(std::move(cfg)), log_(std::move(log)) {
    cfg_.validate();
    for (const auto& tag : cfg_.tags) finetune_loss(tag, cfg_.lambda);
    classes_ = default_classes();
    classes_.resize(cfg_.classes);
  }

  RunResult run() {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.checkpoint_dir());
    result_.report_dir = cfg_.out + "/reports";
    const bool want_pretrain = runs("pretrain") || runs("finetune") || runs("eval");
    teacher_stage();
    if (want_pretrain) pretrain_stage();
    if (runs("finetune") || runs("eval")) finetune_stage();
    if (runs("eval")) {
      eval_stage();
      write_reports();
    }
    return std::move(result_);
  }

  const ExperimentConfig& config() const { return cfg_; }

 private:
  bool runs(const std::string& stage) const {
    return std::find(cfg_.stages.begin(), cfg_.stages.end(), stage) != cfg_.stages.end();
  }

  void say(const std::string& msg) const {
    if (log_) log_(msg);
  }

  TrainLog train_log() const {
    if (!log_ || !cfg_.log_every) return {};
    return [this](const std::string& stage, std::size_t step, double loss) {
      say("  " + stage + " step " + std::to_string(step) + " loss " + detail::fmt_real(loss));
    };
  }

  std::string ckpt_path(const std::string& stem) const { return cfg_.checkpoint_dir() + "/" + stem + ".zsdk"; }

  const Dataset& named_set(const std::string& name) {
    auto it = sets_.find(name);
    if (it == sets_.end()) it = sets_.emplace(name, make_dataset(cfg_.dataset_spec(name))).first;
    return it->second;
  }

  Dataset pool(const std::string& tag, Domain domain, std::size_t per_class) const {
    return make_dataset(cfg_.pool_spec(tag, domain, per_class));
  }

  void check_text_frozen(const std::string& after) const {
    if (teacher_->text->fingerprint() != text_fingerprint_) {
      throw Error("frozen text tower changed during stage '" + after + "'");
    }
  }

  void gate(const std::string& name, double value, double threshold) {
    const bool ok = value >= threshold;
    result_.gates.push_back({name, value, threshold, ok});
    say(std::string(ok ? "  gate ok   " : "  gate FAIL ") + name + " = " + format_percent(value) + "% (>= " +
        format_percent(threshold) + "%)");
  }

  // ---- teacher -----------------------------------------------------------

  void teacher_stage() {
    const auto key = teacher_key(cfg_);
    const auto path = ckpt_path("teacher-" + key);
    StageRecord rec{"teacher", path, false, 0};
    if (std::filesystem::exists(path)) {
      load_teacher(path);
      rec.cached = true;
      say("[teacher] cached " + path + " (0 steps)");
    } else if (!runs("teacher")) {
      throw MissingDependencyError("missing stage dependency: teacher checkpoint " + path +
                                   " not found (run stage 'teacher' first)");
    } else {
      say("[teacher] training " + std::string(arch_name(cfg_.teacher_arch)) + " for " +
          std::to_string(cfg_.teacher_opt.steps) + " steps");
      auto nat = pool("teacher.natural", Domain::kNatural, cfg_.teacher_natural);
      auto syn = pool("teacher.synthetic", Domain::kSynthetic, cfg_.teacher_synthetic);
      std::vector<const Dataset*> parts = {&nat, &syn};
      std::optional<Dataset> sk;
      if (cfg_.teacher_sketch) {
        sk = pool("teacher.sketch", Domain::kSketch, cfg_.teacher_sketch);
        parts.push_back(&*sk);
      }
      const auto all = concat_datasets("teacher.pool", parts);
      teacher_ = std::make_unique<Teacher>(train_teacher(all, cfg_.teacher_arch, cfg_.seed,
                                                         train_options(cfg_.teacher_opt, cfg_.log_every),
                                                         default_templates(), train_log()));
      text_fingerprint_ = teacher_->text->fingerprint();
      save_checkpoint(path, make_checkpoint(teacher_->params(), teacher_metadata()));
      teacher_->text->freeze();
      rec.steps = cfg_.teacher_opt.steps;
    }
    result_.stages.push_back(rec);
    class_emb_ = class_embeddings(*teacher_->text, zero_shot_prompts(classes_));
    teacher_gates();
  }

  std::map<std::string, std::string> teacher_metadata() const {
    return {{"stage", "teacher"},
            {"teacher.arch", arch_name(cfg_.teacher_arch)},
            {"d_emb", std::to_string(kEmbedDim)},
            {"seed", std::to_string(cfg_.seed)},
            {"steps", std::to_string(cfg_.teacher_opt.steps)},
            {"teacher.parameters", std::to_string(teacher_->image->parameter_count())},
            {"text.fingerprint", hex64(text_fingerprint_)}};
  }

  void load_teacher(const std::string& path) {
    const auto ck = load_checkpoint(path);
    teacher_ = std::make_unique<Teacher>(make_teacher(cfg_.teacher_arch, cfg_.seed));
    auto ps = teacher_->params();
    restore_params(ck, ps, {{"teacher.arch", arch_name(cfg_.teacher_arch)}});
    teacher_->text->freeze();
    text_fingerprint_ = teacher_->text->fingerprint();
    const auto it = ck.metadata.find("text.fingerprint");
    if (it == ck.metadata.end() || it->second != hex64(text_fingerprint_)) {
      throw CheckpointError("teacher checkpoint " + path + ": text tower fingerprint mismatch");
    }
  }

  // Zero-shot top1 on clean Natural and Synthetic gate sets, plus a linear
  // probe on teacher features. A zero-shot miss is fatal.
  void teacher_gates() {
    const auto n = cfg_.teacher_gate_per_class;
    const auto nat = pool("gate.natural", Domain::kNatural, n);
    const auto syn = pool("gate.synthetic", Domain::kSynthetic, n);
    const auto score = zero_shot_scorer(*teacher_->image, class_emb_);
    const double a_nat = evaluate(score, nat, "teacher", "gate.natural").top1;
    const double a_syn = evaluate(score, syn, "teacher", "gate.synthetic").top1;
    gate("teacher_zero_shot_natural", a_nat, cfg_.teacher_floor);
    gate("teacher_zero_shot_synthetic", a_syn, cfg_.teacher_floor);
    if (cfg_.teacher_probe) {
      const auto tr_nat = pool("gate.probe_natural", Domain::kNatural, n);
      const auto tr_syn = pool("gate.probe_synthetic", Domain::kSynthetic, n);
      const auto train = concat_datasets("gate.probe_train", {&tr_nat, &tr_syn});
      const auto test = concat_datasets("gate.probe_test", {&nat, &syn});
      ProbeOptions po;
      po.seed = cfg_.seed;
      const auto probe = linear_probe(dataset_features(*teacher_->image, train), train.labels(), po);
      gate("teacher_linear_probe", probe_accuracy(probe, dataset_features(*teacher_->image, test), test.labels()),
           cfg_.teacher_probe_floor);
    }
    if (a_nat < cfg_.teacher_floor || a_syn < cfg_.teacher_floor) {
      throw GateError("teacher zero-shot accuracy below floor " + format_percent(cfg_.teacher_floor) +
                      "%: natural " + format_percent(a_nat) + "%, synthetic " + format_percent(a_syn) +
                      "% (steps " + std::to_string(cfg_.teacher_opt.steps) + ", lr " +
                      detail::fmt_real(cfg_.teacher_opt.lr) + ")");
    }
  }

  // ---- pre-training ------------------------------------------------------

  std::uint64_t student_seed() const { return seed_of(cfg_.seed, 0x5715ULL); }

  void pretrain_stage() {
    const auto path = ckpt_path("pretrain-" + pretrain_key(cfg_));
    StageRecord rec{"pretrain", path, false, 0};
    base_ = std::make_unique<Student>(make_student(cfg_.student_arch, student_seed()));
    const auto held_nat = pool("pretrain.heldout_natural", Domain::kNatural, cfg_.pretrain_heldout);
    const auto held_syn = pool("pretrain.heldout_synthetic", Domain::kSynthetic, cfg_.pretrain_heldout);
    const auto held = concat_datasets("pretrain.heldout", {&held_nat, &held_syn});
    const auto held_px = all_pixels(held);
    const auto held_target = dataset_embeddings(*teacher_->image, held);
    const double initial = mean_row_l2(*base_->image, held_px, held_target);
    if (std::filesystem::exists(path)) {
      auto ps = base_->image->param_store();
      restore_params(load_checkpoint(path), ps, {{"student.arch", arch_name(cfg_.student_arch)}});
      rec.cached = true;
      say("[pretrain] cached " + path + " (0 steps)");
    } else if (!runs("pretrain")) {
      throw MissingDependencyError("missing stage dependency: pre-trained student " + path +
                                   " not found (run stage 'pretrain' first)");
    } else {
      say("[pretrain] feature distillation into " + std::string(arch_name(cfg_.student_arch)) + " for " +
          std::to_string(cfg_.pretrain_opt.steps) + " steps");
      std::vector<Dataset> parts;
      parts.push_back(pool("pretrain.natural", Domain::kNatural, cfg_.pretrain_natural));
      parts.push_back(pool("pretrain.synthetic", Domain::kSynthetic, cfg_.pretrain_synthetic));
      if (cfg_.pretrain_sketch) parts.push_back(pool("pretrain.sketch", Domain::kSketch, cfg_.pretrain_sketch));
      std::vector<const Dataset*> ptrs;
      for (const auto& p : parts) ptrs.push_back(&p);
      const auto general = concat_datasets("pretrain.pool", ptrs);
      const auto stats = pretrain_student(*base_->image, *teacher_->image, general, held, student_seed(),
                                          train_options(cfg_.pretrain_opt, cfg_.log_every), train_log());
      save_checkpoint(path, make_checkpoint(base_->image->param_store(),
                                            {{"stage", "pretrain"},
                                             {"student.arch", arch_name(cfg_.student_arch)},
                                             {"d_emb", std::to_string(kEmbedDim)},
                                             {"seed", std::to_string(cfg_.seed)},
                                             {"steps", std::to_string(cfg_.pretrain_opt.steps)},
                                             {"student.parameters", std::to_string(base_->image->parameter_count())},
                                             {"teacher.parameters", std::to_string(teacher_->image->parameter_count())},
                                             {"first_step_loss", detail::fmt_real(stats.first_step_loss)},
                                             {"last_step_loss", detail::fmt_real(stats.last_step_loss)}}));
      rec.steps = cfg_.pretrain_opt.steps;
    }
    result_.stages.push_back(rec);
    check_text_frozen("pretrain");

    const double final_loss = mean_row_l2(*base_->image, held_px, held_target);
    double cos = 0.0;
    {
      NoGradGuard no_grad;
      const auto s = base_->image->encode(held_px);
      for (std::size_t i = 0; i < s.size(); ++i) cos += static_cast<double>(s.data()[i]) * held_target.data()[i];
      cos /= static_cast<double>(held.size());
    }
    say("[pretrain] held-out feature loss " + detail::fmt_real(initial) + " -> " + detail::fmt_real(final_loss) +
        ", cosine " + detail::fmt_real(cos));
    gate("pretrain_loss_reduction", initial > 0 ? 1.0 - final_loss / initial : 0.0, cfg_.pretrain_min_reduction);
    gate("pretrain_heldout_cosine", cos, cfg_.pretrain_min_cosine);
  }

  // ---- fine-tuning -------------------------------------------------------

  struct Trained {
    std::string id;
    std::string set;
    std::unique_ptr<Student> student;
  };

  FinetuneOptions finetune_options(const std::string& tag) const {
    FinetuneOptions fo;
    fo.train = train_options(cfg_.finetune_opt, cfg_.log_every);
    fo.tag = tag;
    fo.lambda = cfg_.lambda;
    fo.inverse_tau = cfg_.inverse_tau;
    fo.kd_softening = cfg_.kd_softening;
    return fo;
  }

  std::unique_ptr<Student> fresh_from_pretrained() const {
    auto s = std::make_unique<Student>(make_student(cfg_.student_arch, student_seed()));
    auto dst = s->image->param_store();
    copy_params(base_->image->param_store(), dst);
    return s;
  }

  void finetune_stage() {
    for (const auto& set : cfg_.finetune_sets) {
      for (const auto& tag : cfg_.tags) {
        const auto cfg_loss = finetune_loss(tag, cfg_.lambda);
        for (std::size_t k = 0; k < cfg_.seeds; ++k) {
          const auto path =
              ckpt_path("finetune-" + safe_file_part(set) + "-" + safe_file_part(tag) + "-s" + std::to_string(k) +
                        "-" + finetune_key(cfg_, set, tag, k));
          StageRecord rec{"finetune", path, false, 0};
          auto student = fresh_from_pretrained();
          const std::map<std::string, std::string> meta = {{"stage", "finetune"},
                                                            {"student.arch", arch_name(cfg_.student_arch)},
                                                            {"tag", tag},
                                                            {"set", set}};
          if (std::filesystem::exists(path)) {
            if (uses_classifier(cfg_loss)) {
              student->classifier_w = Tensor::zeros({kEmbedDim, cfg_.classes}, true);
              student->classifier_b = Tensor::zeros({cfg_.classes}, true);
            }
            auto ps = student->params();
            restore_params(load_checkpoint(path), ps, {{"student.arch", arch_name(cfg_.student_arch)}, {"tag", tag}});
            rec.cached = true;
            say("[finetune] cached " + path + " (0 steps)");
          } else if (!runs("finetune")) {
            throw MissingDependencyError("missing stage dependency: fine-tuned student " + path +
                                         " not found (run stage 'finetune' first)");
          } else {
            say("[finetune] " + tag + " on " + set + " seed " + std::to_string(k) + " for " +
                std::to_string(cfg_.finetune_opt.steps) + " steps");
            const auto& train = named_set(set);
            finetune_student(*student, *teacher_, class_emb_, train, seed_of(cfg_.seed, 0xf1eULL, k),
                             finetune_options(tag), train_log());
            auto m = meta;
            m["seed"] = std::to_string(cfg_.seed);
            m["seed_index"] = std::to_string(k);
            m["steps"] = std::to_string(cfg_.finetune_opt.steps);
            // The step budget stands in for an epoch count; record the mapping.
            m["epochs_equivalent"] = detail::fmt_real(static_cast<double>(cfg_.finetune_opt.steps * cfg_.finetune_opt.batch) /
                                                      static_cast<double>(train.size()));
            save_checkpoint(path, make_checkpoint(student->params(), m));
            rec.steps = cfg_.finetune_opt.steps;
          }
          result_.stages.push_back(rec);
          check_text_frozen("finetune");
          students_.push_back({student_id(tag, set, k), set, std::move(student)});
        }
      }
    }
  }

  // ---- evaluation --------------------------------------------------------

  void eval_model(const std::string& id, const ScoreFn& score, const ImageModel* features,
                  const std::string& own_set) {
    std::vector<std::string> sets = cfg_.testsets;
    if (!own_set.empty() && cfg_.eval_train && std::find(sets.begin(), sets.end(), own_set) == sets.end()) {
      sets.push_back(own_set);
    }
    for (const auto& name : sets) result_.reports.push_back(evaluate(score, named_set(name), id, name));
    if (!cfg_.corruptions.empty()) {
      for (const auto& name : cfg_.corruption_sets) {
        auto rep = corruption_sweep(score, named_set(name), cfg_.corruptions, cfg_.corruption_severity, id, name);
        for (const auto& [kind, acc] : rep.per_corruption) {
          EvalReport r;
          r.model = id;
          r.testset = name;
          r.condition = kind + "_s" + std::to_string(cfg_.corruption_severity);
          r.top1 = acc;
          r.n = rep.n;
          result_.reports.push_back(r);
        }
        result_.reports.push_back(std::move(rep));
      }
    }
    if (cfg_.probe && features) {
      if (!probe_train_) {
        const auto nat = pool("probe.natural", Domain::kNatural, 32);
        const auto syn = pool("probe.synthetic", Domain::kSynthetic, 32);
        probe_train_ = std::make_unique<Dataset>(concat_datasets("probe.train", {&nat, &syn}));
      }
      ProbeOptions po;
      po.seed = cfg_.seed;
      const auto probe = linear_probe(dataset_features(*features, *probe_train_), probe_train_->labels(), po);
      for (const auto& name : cfg_.testsets) {
        const auto& ds = named_set(name);
        EvalReport r;
        r.model = id;
        r.testset = name;
        r.condition = "linear_probe";
        r.top1 = probe_accuracy(probe, dataset_features(*features, ds), ds.labels());
        r.n = ds.size();
        r.probe = ProbeInfo{probe.reg, probe.val_accuracy};
        result_.reports.push_back(std::move(r));
      }
    }
  }

  void eval_stage() {
    say("[eval] " + std::to_string(students_.size() + 2) + " models");
    eval_model("teacher", zero_shot_scorer(*teacher_->image, class_emb_), teacher_->image.get(), "");
    eval_model("pretrained", zero_shot_scorer(*base_->image, class_emb_), base_->image.get(), "");
    // Teacher and pre-trained rows on every fine-tune set, for the train rows of the matrix.
    if (cfg_.eval_train) {
      for (const auto& set : cfg_.finetune_sets) {
        if (std::find(cfg_.testsets.begin(), cfg_.testsets.end(), set) != cfg_.testsets.end()) continue;
        result_.reports.push_back(evaluate(zero_shot_scorer(*teacher_->image, class_emb_), named_set(set), "teacher", set));
        result_.reports.push_back(evaluate(zero_shot_scorer(*base_->image, class_emb_), named_set(set), "pretrained", set));
      }
    }
    for (const auto& t : students_) {
      eval_model(t.id, student_scorer(*t.student, class_emb_), t.student->has_classifier() ? nullptr : t.student->image.get(),
                 t.set);
    }
    check_text_frozen("eval");
  }

  void write_reports() {
    namespace fs = std::filesystem;
    fs::create_directories(result_.report_dir);
    auto write = [&](const std::string& file, const std::string& body) {
      std::ofstream f(result_.report_dir + "/" + file, std::ios::trunc);
      if (!f) throw Error("cannot write report '" + file + "'");
      f << body;
    };
    write("reports.csv", reports_csv(result_.reports));
    write("config.ini", to_ini(cfg_));
    write_matrix_reports(cfg_, result_.reports, result_.report_dir);
    write("summary.json", summary_json(cfg_, result_).dump(2) + "\n");
    say("[report] wrote " + result_.report_dir);
  }

 public:
  static void write_matrix_reports(const ExperimentConfig& cfg, const std::vector<EvalReport>& reports,
                                   const std::string& dir) {
    if (cfg.matrix.empty()) return;
    const auto m = build_matrix(reports, cfg.matrix, cfg.tags);
    std::ofstream(dir + "/matrix.csv", std::ios::trunc) << matrix_csv(m);
    std::ofstream(dir + "/matrix.svg", std::ios::trunc) << matrix_svg(m, cfg.name + ": top-1 accuracy (%)");
  }

  static nlohmann::json summary_json(const ExperimentConfig& cfg, const RunResult& r) {
    nlohmann::json j;
    j["experiment"] = cfg.name;
    j["seed"] = cfg.seed;
    j["seeds"] = cfg.seeds;
    j["student_arch"] = arch_name(cfg.student_arch);
    j["teacher_arch"] = arch_name(cfg.teacher_arch);
    j["step_budget"] = {{"teacher", cfg.teacher_opt.steps},
                        {"pretrain", cfg.pretrain_opt.steps},
                        {"finetune", cfg.finetune_opt.steps}};
    j["gates"] = nlohmann::json::array();
    for (const auto& g : r.gates) {
      j["gates"].push_back({{"name", g.name}, {"value", g.value}, {"threshold", g.threshold}, {"passed", g.passed}});
    }
    j["gates_passed"] = r.gates_passed();
    j["stages"] = nlohmann::json::array();
    for (const auto& s : r.stages) {
      j["stages"].push_back({{"stage", s.stage},
                             {"checkpoint", std::filesystem::path(s.checkpoint).filename().string()},
                             {"cached", s.cached},
                             {"steps", s.steps}});
    }
    j["training_steps"] = r.training_steps();
    if (!cfg.matrix.empty()) {
      const auto m = build_matrix(r.reports, cfg.matrix, cfg.tags);
      auto& mj = j["matrix"];
      mj["columns"] = m.columns;
      mj["rows"] = nlohmann::json::array();
      for (std::size_t i = 0; i < m.rows.size(); ++i) {
        nlohmann::json row = {{"row", m.rows[i]}};
        for (std::size_t c = 0; c < m.columns.size(); ++c) {
          row[m.columns[c]] = std::isnan(m.top1[i][c]) ? nlohmann::json() : nlohmann::json(std::stod(format_percent(m.top1[i][c])));
        }
        mj["rows"].push_back(row);
      }
    }
    j["reports"] = nlohmann::json::array();
    for (const auto& rep : r.reports) j["reports"].push_back(report_json(rep));
    return j;
  }

 private:
  ExperimentConfig cfg_;
  RunLog log_;
  std::vector<ClassInfo> classes_;
  std::map<std::string, Dataset> sets_;
  std::unique_ptr<Teacher> teacher_;
  std::uint64_t text_fingerprint_ = 0;
  Tensor class_emb_;
  std::unique_ptr<Student> base_;
  std::vector<Trained> students_;
  std::unique_ptr<Dataset> probe_train_;
  RunResult result_;
};

inline RunResult run_experiment(const ExperimentConfig& cfg, const RunLog& log = {}) {
  return Pipeline(cfg, log).run();
}

inline RunResult run_experiment(const std::string& config_path, const RunLog& log = {}) {
  return run_experiment(load_config(config_path), log);
}

// Rebuilds matrix.csv / matrix.svg from an existing reports.csv.
inline void regenerate_reports(const ExperimentConfig& cfg, const RunLog& log = {}) {
  const auto dir = cfg.out + "/reports";
  std::ifstream f(dir + "/reports.csv");
  if (!f) throw MissingDependencyError("missing stage dependency: " + dir + "/reports.csv not found (run stage 'eval' first)");
  std::stringstream ss;
  ss << f.rdbuf();
  Pipeline::write_matrix_reports(cfg, parse_reports_csv(ss.str()), dir);
  if (log) log("[report] regenerated " + dir);
}

}  // namespace zsd
