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

// Training and distillation objectives over row-normalized embeddings.
//
// Conventions: I_* are (N, d) image embeddings, T are (N, d) caption
// embeddings, Z are (M, d) class-prompt embeddings. Teacher-side arguments
// are detached inside each loss, so no gradient ever reaches them.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zsd/tensor.hpp"

namespace zsd {

// Learnable inverse temperature stored as s with 1/tau = exp(s), exp(s) <= ceiling.
class Temperature {
 public:
  static constexpr double kDefaultInit = 14.3;
  static constexpr double kDefaultCeiling = 100.0;

  explicit Temperature(double inverse_tau = kDefaultInit, bool learnable = true,
                       double ceiling = kDefaultCeiling)
      : log_scale_(Tensor::scalar(static_cast<float>(std::log(inverse_tau)), learnable)),
        ceiling_(ceiling) {
    clamp();
  }

  static Temperature fixed(double inverse_tau) { return Temperature(inverse_tau, false); }

  // exp(s) as a graph node; gradient flows into s when learnable.
  Tensor scale() const { return exp(log_scale_); }
  double inverse_tau() const { return std::exp(static_cast<double>(log_scale_[0])); }
  double ceiling() const { return ceiling_; }

  Tensor& log_scale() { return log_scale_; }
  const Tensor& log_scale() const { return log_scale_; }

  // Enforces exp(s) <= ceiling; call after every optimizer step.
  void clamp() {
    const auto cap = static_cast<float>(std::log(ceiling_));
    auto d = log_scale_.mutable_data();
    if (d[0] > cap) d[0] = cap;
  }

 private:
  Tensor log_scale_;
  double ceiling_;
};

namespace detail {

inline void require_pair(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline void require_labels(const char* op, const std::vector<std::size_t>& labels, std::size_t n,
                           std::size_t classes) {
  if (labels.size() != n) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  for (auto l : labels) {
    if (l >= classes) {
      throw Error(std::string(op) + ": label " + std::to_string(l) + " out of range [0, " +
                  std::to_string(classes) + ")");
    }
  }
}

inline std::vector<std::size_t> iota_index(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace detail

// Sum over the batch of ||I_S_i - I_T_i||_2 (unsquared).
inline Tensor feature_l2(const Tensor& student, const Tensor& teacher) {
  detail::require_pair("feature_l2", student, teacher);
  return sum(row_norm(sub(student, teacher.detach())));
}

// Symmetric InfoNCE over logits (1/tau) I T^T, averaged over both directions
// and over the batch.
inline Tensor clip_loss(const Tensor& image, const Tensor& text, const Temperature& temp) {
  detail::require_pair("clip_loss", image, text);
  const auto n = image.dim(0);
  const auto diag = detail::iota_index(n);
  auto logits = mul_scalar(matmul(image, transpose(text)), temp.scale());
  auto i2t = mean(pick(log_softmax(logits, 1), diag));
  auto t2i = mean(pick(transpose(log_softmax(logits, 0)), diag));
  return scale(add(i2t, t2i), -0.5f);
}

// Multi-positive contrastive loss against class-prompt embeddings Z.
//
// q_ik = softmax_k(<I_i, Z_k> / tau). The target p_ik is uniform over the
// prompt rows whose class equals labels[i]; `prompt_classes` maps each row of
// Z to a class (defaults to row k <-> class k, giving a one-hot p).
inline Tensor multi_positive_loss(const Tensor& image, const Tensor& prompts,
                                  const std::vector<std::size_t>& labels, const Temperature& temp,
                                  std::optional<std::vector<std::size_t>> prompt_classes = std::nullopt) {
  if (image.rank() != 2 || prompts.rank() != 2 || image.dim(1) != prompts.dim(1)) {
    throw ShapeError("multi_positive_loss: shape mismatch " + shape_str(image.shape()) + " vs " +
                     shape_str(prompts.shape()));
  }
  const auto n = image.dim(0), m = prompts.dim(0);
  const auto classes = prompt_classes ? *prompt_classes : detail::iota_index(m);
  if (classes.size() != m) {
    throw ShapeError("multi_positive_loss: " + std::to_string(classes.size()) +
                     " prompt classes for " + std::to_string(m) + " prompts");
  }
  std::size_t num_classes = 0;
  for (auto c : classes) num_classes = std::max(num_classes, c + 1);
  detail::require_labels("multi_positive_loss", labels, n, num_classes);

  std::vector<float> target(n * m, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t matches = 0;
    for (std::size_t k = 0; k < m; ++k) matches += classes[k] == labels[i];
    if (matches == 0) {
      throw Error("multi_positive_loss: no prompt for label " + std::to_string(labels[i]));
    }
    for (std::size_t k = 0; k < m; ++k) {
      if (classes[k] == labels[i]) target[i * m + k] = 1.0f / static_cast<float>(matches);
    }
  }
  auto logits = mul_scalar(matmul(image, transpose(prompts)), temp.scale());
  auto p = Tensor::from_data({n, m}, std::move(target));
  return scale(sum(mul(p, log_softmax(logits, 1))), -1.0f / static_cast<float>(n));
}

// Image-only InfoNCE: student rows against the batch of teacher rows, summed
// over the batch.
inline Tensor contrastive_image_loss(const Tensor& student, const Tensor& teacher,
                                     const Temperature& temp) {
  detail::require_pair("contrastive_image_loss", student, teacher);
  const auto diag = detail::iota_index(student.dim(0));
  auto logits = mul_scalar(matmul(student, transpose(teacher.detach())), temp.scale());
  return scale(sum(pick(log_softmax(logits, 1), diag)), -1.0f);
}

// Mean negative log-likelihood of integer labels.
inline Tensor cross_entropy_head(const Tensor& logits, const std::vector<std::size_t>& labels) {
  detail::require_rank("cross_entropy_head", logits, 2);
  detail::require_labels("cross_entropy_head", labels, logits.dim(0), logits.dim(1));
  return scale(mean(pick(log_softmax(logits, 1), labels)), -1.0f);
}

// T^2 * mean_i KL(softmax(teacher/T) || softmax(student/T)).
inline Tensor hinton_kd(const Tensor& student_logits, const Tensor& teacher_logits, double softening) {
  detail::require_pair("hinton_kd", student_logits, teacher_logits);
  if (!(softening > 0.0)) throw Error("hinton_kd: softening temperature must be positive");
  const auto inv = static_cast<float>(1.0 / softening);
  Tensor log_pt, pt;
  {
    NoGradGuard no_grad;
    log_pt = log_softmax(scale(teacher_logits.detach(), inv), 1);
    pt = exp(log_pt);
  }
  auto log_ps = log_softmax(scale(student_logits, inv), 1);
  auto kl = sum(mul(pt, sub(log_pt, log_ps)));
  const auto n = static_cast<float>(student_logits.dim(0));
  return scale(kl, static_cast<float>(softening * softening) / n);
}

// ---------------------------------------------------------------------------
// Loss composition: L = L_training + lambda * L_distillation.

enum class LossTag { kNone, kL2Feature, kClip, kMultiPositive, kContrastiveImage, kCrossEntropy, kHintonKd };

inline const char* loss_tag_name(LossTag tag) {
  switch (tag) {
    case LossTag::kNone: return "none";
    case LossTag::kL2Feature: return "l2_feature";
    case LossTag::kClip: return "clip";
    case LossTag::kMultiPositive: return "mp";
    case LossTag::kContrastiveImage: return "contrastive_image";
    case LossTag::kCrossEntropy: return "ce";
    case LossTag::kHintonKd: return "hinton_kd";
  }
  return "?";
}

inline LossTag parse_loss_tag(const std::string& name) {
  for (auto tag : {LossTag::kNone, LossTag::kL2Feature, LossTag::kClip, LossTag::kMultiPositive,
                   LossTag::kContrastiveImage, LossTag::kCrossEntropy, LossTag::kHintonKd}) {
    if (name == loss_tag_name(tag)) return tag;
  }
  throw Error("unknown loss tag '" + name + "'");
}

struct LossConfig {
  double lambda = 1.0;
  LossTag training = LossTag::kNone;
  LossTag distillation = LossTag::kL2Feature;

  void validate() const {
    if (!(lambda >= 0.0)) throw Error("loss config: lambda must be non-negative");
    if (training == LossTag::kNone && distillation == LossTag::kNone) {
      throw Error("loss config: training and distillation are both 'none'");
    }
  }
};

using LossTerms = std::map<LossTag, Tensor>;

inline Tensor combined_loss(const LossConfig& cfg, const LossTerms& terms) {
  cfg.validate();
  auto term = [&](LossTag tag) -> const Tensor& {
    auto it = terms.find(tag);
    if (it == terms.end()) {
      throw Error(std::string("combined_loss: missing term '") + loss_tag_name(tag) + "'");
    }
    return it->second;
  };
  if (cfg.distillation == LossTag::kNone) return term(cfg.training);
  auto distill = scale(term(cfg.distillation), static_cast<float>(cfg.lambda));
  if (cfg.training == LossTag::kNone) return distill;
  return add(term(cfg.training), distill);
}

}  // namespace zsd
