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

// Training stages: teacher (image + text tower, CLIP loss), student feature
// pre-training, and student fine-tuning under any supported loss tag.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "zsd/checkpoint.hpp"
#include "zsd/common.hpp"
#include "zsd/eval.hpp"
#include "zsd/losses.hpp"
#include "zsd/models.hpp"
#include "zsd/optim.hpp"
#include "zsd/prompts.hpp"
#include "zsd/tensor.hpp"
#include "zsd/world.hpp"

namespace zsd {

struct TrainOptions {
  std::size_t steps = 1000;
  std::size_t batch = 64;
  double lr = 5e-4;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.01;
  bool crop = true;
  std::size_t crop_min = 20;
  std::size_t log_every = 0;  // 0 disables progress callbacks

  AdamWOptions adam() const { return {lr, 0.9, beta2, eps, weight_decay}; }
};

// Progress callback: (stage, step, loss).
using TrainLog = std::function<void(const std::string&, std::size_t, double)>;

// Copies parameter values (not handles) between stores with identical names.
inline void copy_params(const ParamStore& from, ParamStore& to) {
  for (auto& [name, e] : to.entries()) {
    const auto& src = from.at(name);
    if (src.shape() != e.value.shape()) throw ShapeError("copy_params: shape mismatch for '" + name + "'");
    auto d = e.value.mutable_data();
    std::copy(src.data().begin(), src.data().end(), d.begin());
  }
}

// Class names with their superclasses, one zero-shot prompt each.
inline std::vector<std::string> zero_shot_prompts(const std::vector<ClassInfo>& classes) {
  std::vector<std::string> out;
  for (const auto& c : classes) out.push_back(zero_shot_prompt(c.name, c.superclass));
  return out;
}

// Template ensembles per class.
inline std::vector<std::vector<std::string>> ensemble_prompts(const std::vector<ClassInfo>& classes,
                                                              const std::vector<std::string>& templates) {
  std::vector<std::vector<std::string>> out;
  for (const auto& c : classes) out.push_back(prompt_ensemble(templates, c.name, c.superclass));
  return out;
}

struct Teacher {
  std::unique_ptr<ImageModel> image;
  std::unique_ptr<TextTower> text;
  Temperature temperature;

  ParamStore params() const {
    auto ps = image->param_store();
    ps.merge(text->param_store());
    ps.add("teacher.logit_scale", temperature.log_scale(), false);
    return ps;
  }
};

inline Teacher make_teacher(Arch arch, std::uint64_t seed) {
  Teacher t;
  t.image = std::make_unique<ImageModel>(arch, seed_of(seed, 0x7eaULL), "teacher");
  t.text = std::make_unique<TextTower>(seed_of(seed, 0x7e7ULL));
  return t;
}

namespace detail {

inline std::vector<std::size_t> sample_batch(std::size_t n, std::size_t batch, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

inline Tensor augmented_batch(const Dataset& ds, const std::vector<std::size_t>& idx, const TrainOptions& opt,
                              std::mt19937_64& rng) {
  if (!opt.crop) return batch_pixels(ds, idx);
  std::vector<float> data;
  data.reserve(idx.size() * kImagePixels);
  for (auto i : idx) {
    const auto px = random_square_crop(ds.samples[i].pixels, rng, opt.crop_min);
    data.insert(data.end(), px.begin(), px.end());
  }
  return Tensor::from_data({idx.size(), kImagePixels}, std::move(data));
}

inline void check_finite(const std::string& stage, std::size_t step, double loss) {
  if (!std::isfinite(loss)) {
    throw Error(stage + ": non-finite loss at step " + std::to_string(step));
  }
}

}  // namespace detail

// CLIP-loss training of the teacher image tower, text tower and temperature.
// Each image is paired with a caption drawn from its class's template
// ensemble. The text tower is frozen on return.
inline Teacher train_teacher(const Dataset& pool, Arch arch, std::uint64_t seed, const TrainOptions& opt,
                             const std::vector<std::string>& templates, const TrainLog& log = {}) {
  auto teacher = make_teacher(arch, seed);
  const auto captions = ensemble_prompts(pool.spec.classes, templates);
  auto params = teacher.params();
  AdamW adam(opt.adam());
  std::mt19937_64 rng(seed_of(seed, 0x7ea0ULL));
  for (std::size_t step = 0; step < opt.steps; ++step) {
    const auto idx = detail::sample_batch(pool.size(), opt.batch, rng);
    std::vector<std::string> text;
    for (auto i : idx) {
      const auto& bank = captions[pool.samples[i].class_id];
      text.push_back(bank[rng() % bank.size()]);
    }
    params.zero_grad();
    auto loss = clip_loss(teacher.image->encode(detail::augmented_batch(pool, idx, opt, rng)),
                          teacher.text->embed(text), teacher.temperature);
    detail::check_finite("train-teacher", step, loss.item());
    loss.backward();
    adam.step(params);
    teacher.temperature.clamp();
    if (log && opt.log_every && (step % opt.log_every == 0 || step + 1 == opt.steps)) {
      log("train-teacher", step, loss.item());
    }
  }
  teacher.text->freeze();
  return teacher;
}

// Teacher embeddings (B, d) of a whole dataset, no graph.
inline Tensor dataset_embeddings(const ImageModel& model, const Dataset& ds, std::size_t batch = 256) {
  NoGradGuard no_grad;
  std::vector<float> out;
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + batch); ++i) idx.push_back(i);
    const auto e = model.encode(batch_pixels(ds, idx));
    out.insert(out.end(), e.data().begin(), e.data().end());
  }
  return Tensor::from_data({ds.size(), kEmbedDim}, std::move(out));
}

struct PretrainStats {
  double initial_loss = 0.0;  // mean per-row feature_l2 on the held-out pool
  double final_loss = 0.0;
  double first_step_loss = 0.0;
  double last_step_loss = 0.0;  // mean over the last 50 steps
  double heldout_cosine = 0.0;
};

inline double mean_row_l2(const ImageModel& student, const Tensor& pixels, const Tensor& target) {
  NoGradGuard no_grad;
  return feature_l2(student.encode(pixels), target).item() / static_cast<double>(target.dim(0));
}

// Pure feature distillation (training tag none, lambda ignored) on the
// general pool. The loss is averaged over the batch.
inline PretrainStats pretrain_student(ImageModel& student, const ImageModel& teacher, const Dataset& pool,
                                      const Dataset& heldout, std::uint64_t seed, const TrainOptions& opt,
                                      const TrainLog& log = {}) {
  PretrainStats stats;
  const auto target = dataset_embeddings(teacher, pool);
  const auto held_px = all_pixels(heldout);
  const auto held_target = dataset_embeddings(teacher, heldout);
  stats.initial_loss = mean_row_l2(student, held_px, held_target);

  auto params = student.param_store();
  AdamW adam(opt.adam());
  std::mt19937_64 rng(seed_of(seed, 0x9e7ULL));
  double tail = 0.0;
  std::size_t tail_n = 0;
  for (std::size_t step = 0; step < opt.steps; ++step) {
    const auto idx = detail::sample_batch(pool.size(), opt.batch, rng);
    params.zero_grad();
    Tensor loss;
    if (opt.crop) {
      const auto px = detail::augmented_batch(pool, idx, opt, rng);
      Tensor t;
      {
        NoGradGuard no_grad;
        t = teacher.encode(px);
      }
      loss = scale(feature_l2(student.encode(px), t), 1.0f / static_cast<float>(idx.size()));
    } else {
      loss = scale(feature_l2(student.encode(batch_pixels(pool, idx)), gather_rows(target, idx)),
                   1.0f / static_cast<float>(idx.size()));
    }
    const double l = loss.item();
    detail::check_finite("pretrain", step, l);
    if (step == 0) stats.first_step_loss = l;
    if (step + 50 >= opt.steps) tail += l, ++tail_n;
    loss.backward();
    adam.step(params);
    if (log && opt.log_every && (step % opt.log_every == 0 || step + 1 == opt.steps)) log("pretrain", step, l);
  }
  stats.last_step_loss = tail_n ? tail / static_cast<double>(tail_n) : stats.first_step_loss;
  stats.final_loss = mean_row_l2(student, held_px, held_target);
  {
    NoGradGuard no_grad;
    const auto s = student.encode(held_px);
    double cos = 0.0;
    for (std::size_t i = 0; i < s.dim(0); ++i) {
      for (std::size_t j = 0; j < kEmbedDim; ++j) cos += s.at(i, j) * held_target.at(i, j);
    }
    stats.heldout_cosine = cos / static_cast<double>(s.dim(0));
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Fine-tuning

// Fine-tune loss tags: l2_feature, clip, mp, contrastive_image, l2+clip,
// l2+mp, ce, ce+hinton_kd.
inline LossConfig finetune_loss(const std::string& tag, double lambda) {
  LossConfig c;
  c.lambda = lambda;
  if (tag == "l2_feature") {
    c.training = LossTag::kNone, c.distillation = LossTag::kL2Feature, c.lambda = 1.0;
  } else if (tag == "clip") {
    c.training = LossTag::kClip, c.distillation = LossTag::kNone;
  } else if (tag == "mp") {
    c.training = LossTag::kMultiPositive, c.distillation = LossTag::kNone;
  } else if (tag == "contrastive_image") {
    c.training = LossTag::kNone, c.distillation = LossTag::kContrastiveImage, c.lambda = 1.0;
  } else if (tag == "l2+clip") {
    c.training = LossTag::kClip, c.distillation = LossTag::kL2Feature;
  } else if (tag == "l2+mp") {
    c.training = LossTag::kMultiPositive, c.distillation = LossTag::kL2Feature;
  } else if (tag == "ce") {
    c.training = LossTag::kCrossEntropy, c.distillation = LossTag::kNone;
  } else if (tag == "ce+hinton_kd") {
    c.training = LossTag::kCrossEntropy, c.distillation = LossTag::kHintonKd;
  } else {
    throw Error("unknown fine-tune loss tag '" + tag + "'");
  }
  c.validate();
  return c;
}

inline bool uses_classifier(const LossConfig& c) {
  return c.training == LossTag::kCrossEntropy || c.distillation == LossTag::kHintonKd;
}

struct FinetuneOptions {
  TrainOptions train;
  std::string tag = "l2_feature";
  double lambda = 1.0;
  double inverse_tau = Temperature::kDefaultInit;
  double kd_softening = 4.0;
};

// A student image model plus the pieces only some tags train.
struct Student {
  std::unique_ptr<ImageModel> image;
  Temperature temperature;
  Tensor classifier_w, classifier_b;  // (d_emb, M), (M); classification-head tags only

  ParamStore params() const {
    auto ps = image->param_store();
    ps.add("student.logit_scale", temperature.log_scale(), false);
    if (has_classifier()) {
      ps.add("student.cls.w", classifier_w);
      ps.add("student.cls.b", classifier_b, false);
    }
    return ps;
  }

  bool has_classifier() const { return classifier_w.defined(); }
  Tensor logits(const Tensor& pixels) const {
    return add_bias(matmul(image->features(pixels), classifier_w), classifier_b);
  }
};

inline Student make_student(Arch arch, std::uint64_t seed) {
  Student s;
  s.image = std::make_unique<ImageModel>(arch, seed_of(seed, 0x57dULL), "student");
  return s;
}

// Scores used to classify with a student: class logits for the
// classification-head variants, zero-shot similarities otherwise.
inline ScoreFn student_scorer(const Student& s, const Tensor& class_emb) {
  if (s.has_classifier()) return [&s](const Tensor& px) { return s.logits(px); };
  return zero_shot_scorer(*s.image, class_emb);
}

struct FinetuneStats {
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::size_t steps = 0;
};

// Fine-tunes `student` in place on `train` against the frozen teacher.
// `class_emb` (M, d) are the frozen zero-shot prompt embeddings; CLIP
// captions are the zero-shot prompt of each image's class.
inline FinetuneStats finetune_student(Student& student, const Teacher& teacher, const Tensor& class_emb,
                                      const Dataset& train, std::uint64_t seed, const FinetuneOptions& opt,
                                      const TrainLog& log = {}) {
  const auto cfg = finetune_loss(opt.tag, opt.lambda);
  const auto m = train.spec.classes.size();
  student.temperature = Temperature(opt.inverse_tau, true);
  std::mt19937_64 rng(seed_of(seed, 0xf17eULL));
  if (uses_classifier(cfg) && !student.has_classifier()) {
    std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(kEmbedDim)));
    std::vector<float> w(kEmbedDim * m);
    for (auto& x : w) x = static_cast<float>(nd(rng));
    student.classifier_w = Tensor::from_data({kEmbedDim, m}, std::move(w), true);
    student.classifier_b = Tensor::zeros({m}, true);
  }
  const bool need_teacher = cfg.distillation != LossTag::kNone;
  const Temperature teacher_temp = Temperature::fixed(teacher.temperature.inverse_tau());

  auto params = student.params();
  AdamW adam(opt.train.adam());
  FinetuneStats stats;
  for (std::size_t step = 0; step < opt.train.steps; ++step) {
    const auto idx = detail::sample_batch(train.size(), opt.train.batch, rng);
    std::vector<std::size_t> labels;
    for (auto i : idx) labels.push_back(train.samples[i].class_id);
    const auto px = detail::augmented_batch(train, idx, opt.train, rng);
    Tensor t_emb;
    if (need_teacher) {
      NoGradGuard no_grad;
      t_emb = teacher.image->encode(px);
    }
    params.zero_grad();
    LossTerms terms;
    const auto n = static_cast<float>(idx.size());
    if (uses_classifier(cfg)) {
      auto logits = student.logits(px);
      terms[LossTag::kCrossEntropy] = cross_entropy_head(logits, labels);
      if (cfg.distillation == LossTag::kHintonKd) {
        Tensor t_logits;
        {
          NoGradGuard no_grad;
          t_logits = mul_scalar(matmul(t_emb, transpose(class_emb)), teacher_temp.scale());
        }
        terms[LossTag::kHintonKd] = hinton_kd(logits, t_logits, opt.kd_softening);
      }
    } else {
      auto s_emb = student.image->encode(px);
      if (cfg.training == LossTag::kClip) {
        terms[LossTag::kClip] = clip_loss(s_emb, gather_rows(class_emb, labels), student.temperature);
      }
      if (cfg.training == LossTag::kMultiPositive) {
        terms[LossTag::kMultiPositive] = multi_positive_loss(s_emb, class_emb, labels, student.temperature);
      }
      if (cfg.distillation == LossTag::kL2Feature) {
        terms[LossTag::kL2Feature] = scale(feature_l2(s_emb, t_emb), 1.0f / n);
      }
      if (cfg.distillation == LossTag::kContrastiveImage) {
        terms[LossTag::kContrastiveImage] =
            scale(contrastive_image_loss(s_emb, t_emb, student.temperature), 1.0f / n);
      }
    }
    auto loss = combined_loss(cfg, terms);
    const double l = loss.item();
    detail::check_finite("finetune", step, l);
    if (step == 0) stats.first_loss = l;
    stats.last_loss = l;
    loss.backward();
    adam.step(params);
    student.temperature.clamp();
    if (log && opt.train.log_every && (step % opt.train.log_every == 0 || step + 1 == opt.train.steps)) {
      log("finetune/" + opt.tag, step, l);
    }
  }
  stats.steps = opt.train.steps;
  return stats;
}

}  // namespace zsd
