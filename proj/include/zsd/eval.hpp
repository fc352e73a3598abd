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

// Zero-shot classification, linear probing and robustness protocols.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "zsd/common.hpp"
#include "zsd/models.hpp"
#include "zsd/optim.hpp"
#include "zsd/tensor.hpp"
#include "zsd/world.hpp"

namespace zsd {

// (M, d) class embeddings from one prompt per class.
inline Tensor class_embeddings(const TextTower& tower, const std::vector<std::string>& prompts) {
  if (prompts.empty()) throw Error("class_embeddings: no classes");
  NoGradGuard no_grad;
  return tower.embed(prompts);
}

// (M, d) class embeddings from prompt ensembles: the normalized template
// embeddings of a class are averaged and renormalized.
inline Tensor class_embeddings(const TextTower& tower, const std::vector<std::vector<std::string>>& ensembles) {
  if (ensembles.empty()) throw Error("class_embeddings: no classes");
  NoGradGuard no_grad;
  std::vector<float> rows;
  for (const auto& templates : ensembles) {
    auto e = tower.embed(templates);
    std::vector<float> avg(kEmbedDim, 0.0f);
    for (std::size_t r = 0; r < e.dim(0); ++r) {
      for (std::size_t j = 0; j < kEmbedDim; ++j) avg[j] += e.at(r, j);
    }
    rows.insert(rows.end(), avg.begin(), avg.end());
  }
  return l2_normalize(Tensor::from_data({ensembles.size(), kEmbedDim}, std::move(rows)));
}

// Class indices sorted by descending score; equal scores keep the lower index
// first.
inline std::vector<std::size_t> rank_classes(std::span<const float> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

struct ZeroShotResult {
  std::vector<std::size_t> predictions;
  std::vector<std::vector<std::size_t>> order;  // per sample, best class first
};

// Ranks classes by <I_i, Z_k> for unit rows I (B, d) and Z (M, d).
inline ZeroShotResult zero_shot_classify(const Tensor& images, const Tensor& classes) {
  if (classes.rank() != 2 || classes.dim(0) == 0) throw Error("zero_shot_classify: no classes");
  if (images.rank() != 2 || images.dim(1) != classes.dim(1)) {
    throw ShapeError("zero_shot_classify: shape mismatch " + shape_str(images.shape()) + " vs " +
                     shape_str(classes.shape()));
  }
  NoGradGuard no_grad;
  const auto scores = matmul(images, transpose(classes));
  const auto m = classes.dim(0);
  ZeroShotResult r;
  for (std::size_t i = 0; i < images.dim(0); ++i) {
    r.order.push_back(rank_classes(scores.data().subspan(i * m, m)));
    r.predictions.push_back(r.order.back().front());
  }
  return r;
}

inline double topk_accuracy(const std::vector<std::vector<std::size_t>>& order, const std::vector<std::size_t>& labels,
                            std::size_t k) {
  if (order.size() != labels.size()) throw Error("topk_accuracy: size mismatch");
  if (order.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (k > order[i].size()) throw Error("topk_accuracy: k exceeds the number of classes");
    hits += std::find(order[i].begin(), order[i].begin() + static_cast<std::ptrdiff_t>(k), labels[i]) !=
            order[i].begin() + static_cast<std::ptrdiff_t>(k);
  }
  return static_cast<double>(hits) / static_cast<double>(order.size());
}

struct ProbeInfo {
  double reg = 0.0;
  double val_accuracy = 0.0;
};

struct EvalReport {
  std::string model;
  std::string testset;
  std::string condition = "clean";
  double top1 = 0.0;
  double top5 = 0.0;
  std::size_t n = 0;
  std::vector<double> per_class;
  std::map<std::string, double> per_corruption;
  std::optional<ProbeInfo> probe;
};

// Maps a (B, pixels) batch to (B, M) class scores.
using ScoreFn = std::function<Tensor(const Tensor&)>;

inline ScoreFn zero_shot_scorer(const ImageModel& model, const Tensor& class_emb) {
  return [&model, class_emb](const Tensor& pixels) { return matmul(model.encode(pixels), transpose(class_emb)); };
}

inline ZeroShotResult rank_dataset(const ScoreFn& score, const Dataset& ds, std::size_t batch = 256) {
  NoGradGuard no_grad;
  ZeroShotResult r;
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + batch); ++i) idx.push_back(i);
    const auto s = score(batch_pixels(ds, idx));
    const auto m = s.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      r.order.push_back(rank_classes(s.data().subspan(i * m, m)));
      r.predictions.push_back(r.order.back().front());
    }
  }
  return r;
}

inline EvalReport report_from_ranking(const ZeroShotResult& ranked, const std::vector<std::size_t>& labels,
                                      std::size_t num_classes, std::string model, std::string testset,
                                      std::string condition = "clean") {
  EvalReport rep;
  rep.model = std::move(model);
  rep.testset = std::move(testset);
  rep.condition = std::move(condition);
  rep.n = labels.size();
  rep.top1 = topk_accuracy(ranked.order, labels, 1);
  rep.top5 = topk_accuracy(ranked.order, labels, std::min<std::size_t>(5, num_classes));
  std::vector<std::size_t> hit(num_classes, 0), total(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++total[labels[i]];
    hit[labels[i]] += ranked.predictions[i] == labels[i];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    rep.per_class.push_back(total[c] ? static_cast<double>(hit[c]) / static_cast<double>(total[c]) : 0.0);
  }
  return rep;
}

inline EvalReport evaluate(const ScoreFn& score, const Dataset& ds, std::string model, std::string testset,
                           std::string condition = "clean") {
  return report_from_ranking(rank_dataset(score, ds), ds.labels(), ds.spec.classes.size(), std::move(model),
                             std::move(testset), std::move(condition));
}

inline Dataset corrupt_dataset(const Dataset& clean, CorruptionKind kind, int severity) {
  Dataset out{clean.spec, {}};
  out.spec.corruption = Corruption{kind, severity};
  out.samples.reserve(clean.size());
  for (const auto& s : clean.samples) out.samples.push_back(apply_corruption(s, kind, severity));
  return out;
}

// Per-kind top1 at one severity; top1/top5 of the report are the means over
// kinds.
inline EvalReport corruption_sweep(const ScoreFn& score, const Dataset& clean, const std::vector<CorruptionKind>& kinds,
                                   int severity, std::string model, std::string testset) {
  if (kinds.empty()) throw Error("corruption_sweep: no corruption kinds");
  EvalReport rep;
  rep.model = std::move(model);
  rep.testset = std::move(testset);
  rep.condition = "corruption_mean_s" + std::to_string(severity);
  rep.n = clean.size();
  for (auto kind : kinds) {
    const auto r = evaluate(score, corrupt_dataset(clean, kind, severity), rep.model, rep.testset);
    rep.per_corruption[corruption_name(kind)] = r.top1;
    rep.top1 += r.top1;
    rep.top5 += r.top5;
  }
  rep.top1 /= static_cast<double>(kinds.size());
  rep.top5 /= static_cast<double>(kinds.size());
  return rep;
}

struct NamedSet {
  std::string id;
  std::string condition;
  const Dataset* data;
};

// Evaluates one model over several test sets sharing a class list.
inline std::vector<EvalReport> cross_domain_eval(const ScoreFn& score, const std::string& model,
                                                 const std::vector<NamedSet>& sets) {
  std::vector<EvalReport> out;
  for (const auto& s : sets) {
    const auto& ref = sets.front().data->spec.classes;
    const auto& cls = s.data->spec.classes;
    bool same = ref.size() == cls.size();
    for (std::size_t i = 0; same && i < cls.size(); ++i) same = cls[i].name == ref[i].name;
    if (!same) throw Error("cross_domain_eval: class list of '" + s.id + "' differs from '" + sets.front().id + "'");
    out.push_back(evaluate(score, *s.data, model, s.id, s.condition));
  }
  return out;
}

// top1(a) - top1(b), in fraction units.
inline double accuracy_gap(const EvalReport& a, const EvalReport& b) { return a.top1 - b.top1; }

// ---------------------------------------------------------------------------
// Linear probe

struct LinearProbe {
  std::vector<float> mean, inv_std;  // feature standardization from the fit set
  Tensor weight, bias;
  double reg = 0.0;
  double val_accuracy = 0.0;

  std::vector<std::size_t> predict(const Tensor& features) const;
};

inline const std::vector<double>& default_reg_grid() {
  static const std::vector<double> g = {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0};
  return g;
}

struct ProbeOptions {
  std::vector<double> reg_grid = default_reg_grid();
  double val_fraction = 0.2;
  std::size_t steps = 500;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

namespace detail {

inline Tensor standardize(const Tensor& x, const std::vector<float>& mean, const std::vector<float>& inv_std) {
  std::vector<float> out(x.data().begin(), x.data().end());
  const auto d = x.dim(1);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean[i % d]) * inv_std[i % d];
  return Tensor::from_data(x.shape(), std::move(out));
}

// Multinomial logistic regression, full-batch AdamW, loss = CE + reg * ||W||^2.
inline std::pair<Tensor, Tensor> fit_logistic(const Tensor& x, const std::vector<std::size_t>& y, std::size_t classes,
                                              double reg, const ProbeOptions& opt) {
  ParamStore ps;
  ps.add("w", Tensor::zeros({x.dim(1), classes}, true), false);
  ps.add("b", Tensor::zeros({classes}, true), false);
  AdamW adam({opt.lr, 0.9, 0.999, 1e-8, 0.0});
  for (std::size_t step = 0; step < opt.steps; ++step) {
    ps.zero_grad();
    const auto& w = ps.at("w");
    auto logits = add_bias(matmul(x, w), ps.at("b"));
    auto ce = scale(mean(pick(log_softmax(logits, 1), y)), -1.0f);
    auto loss = add(ce, scale(sum(mul(w, w)), static_cast<float>(reg)));
    loss.backward();
    adam.step(ps);
  }
  return {ps.at("w").detach(), ps.at("b").detach()};
}

inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  std::vector<std::size_t> out;
  const auto m = logits.dim(1);
  for (std::size_t i = 0; i < logits.dim(0); ++i) out.push_back(rank_classes(logits.data().subspan(i * m, m)).front());
  return out;
}

inline double accuracy(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& y) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += pred[i] == y[i];
  return y.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(y.size());
}

}  // namespace detail

inline std::vector<std::size_t> LinearProbe::predict(const Tensor& features) const {
  NoGradGuard no_grad;
  return detail::argmax_rows(add_bias(matmul(detail::standardize(features, mean, inv_std), weight), bias));
}

// Sweeps the reg grid on a held-out validation split of (features, labels),
// then refits on all of it with the best value.
inline LinearProbe linear_probe(const Tensor& features, const std::vector<std::size_t>& labels,
                                const ProbeOptions& opt = {}) {
  if (features.rank() != 2 || features.dim(0) != labels.size()) {
    throw ShapeError("linear_probe: features " + shape_str(features.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  std::size_t classes = 0;
  for (auto l : labels) classes = std::max(classes, l + 1);
  {
    std::vector<std::size_t> distinct(labels);
    std::sort(distinct.begin(), distinct.end());
    if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2) {
      throw Error("linear_probe: need at least two classes");
    }
  }
  if (opt.reg_grid.empty()) throw Error("linear_probe: empty reg grid");

  const auto n = features.dim(0), d = features.dim(1);
  LinearProbe probe;
  probe.mean.assign(d, 0.0f);
  probe.inv_std.assign(d, 1.0f);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = features.at(i, j);
      s += v;
      s2 += v * v;
    }
    const double mu = s / n, var = std::max(0.0, s2 / n - mu * mu);
    probe.mean[j] = static_cast<float>(mu);
    probe.inv_std[j] = static_cast<float>(1.0 / std::sqrt(var + 1e-8));
  }
  const auto x = detail::standardize(features, probe.mean, probe.inv_std);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed_of(opt.seed, 0x9b0eULL));
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(n) * opt.val_fraction));
  std::vector<std::size_t> tr(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end()),
      va(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  auto labels_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> out;
    for (auto i : idx) out.push_back(labels[i]);
    return out;
  };
  const auto x_tr = gather_rows(x, tr), x_va = gather_rows(x, va);
  const auto y_tr = labels_of(tr), y_va = labels_of(va);

  double best = -1.0;
  for (double reg : opt.reg_grid) {
    auto [w, b] = detail::fit_logistic(x_tr, y_tr, classes, reg, opt);
    NoGradGuard no_grad;
    const double acc = detail::accuracy(detail::argmax_rows(add_bias(matmul(x_va, w), b)), y_va);
    if (acc > best) {
      best = acc;
      probe.reg = reg;
    }
  }
  probe.val_accuracy = best;
  std::tie(probe.weight, probe.bias) = detail::fit_logistic(x, labels, classes, probe.reg, opt);
  return probe;
}

inline double probe_accuracy(const LinearProbe& probe, const Tensor& features, const std::vector<std::size_t>& labels) {
  return detail::accuracy(probe.predict(features), labels);
}

// Unnormalized post-head features of a whole dataset.
inline Tensor dataset_features(const ImageModel& model, const Dataset& ds, std::size_t batch = 256) {
  NoGradGuard no_grad;
  std::vector<float> out;
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + batch); ++i) idx.push_back(i);
    const auto f = model.features(batch_pixels(ds, idx));
    out.insert(out.end(), f.data().begin(), f.data().end());
  }
  return Tensor::from_data({ds.size(), kEmbedDim}, std::move(out));
}

// ---------------------------------------------------------------------------
// Serialization. CSV columns: model,testset,condition,top1,top5,n with
// accuracies in percent, one decimal.

inline std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
  return buf;
}

inline std::string reports_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << "model,testset,condition,top1,top5,n\n";
  for (const auto& r : reports) {
    os << r.model << ',' << r.testset << ',' << r.condition << ',' << format_percent(r.top1) << ','
       << format_percent(r.top5) << ',' << r.n << '\n';
  }
  return os.str();
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["model"] = r.model;
  j["testset"] = r.testset;
  j["condition"] = r.condition;
  j["top1"] = std::stod(format_percent(r.top1));
  j["top5"] = std::stod(format_percent(r.top5));
  j["n"] = r.n;
  j["per_class"] = nlohmann::json::array();
  for (double a : r.per_class) j["per_class"].push_back(std::stod(format_percent(a)));
  if (!r.per_corruption.empty()) {
    for (const auto& [k, v] : r.per_corruption) j["per_corruption"][k] = std::stod(format_percent(v));
  }
  if (r.probe) j["probe"] = {{"reg", r.probe->reg}, {"val_top1", std::stod(format_percent(r.probe->val_accuracy))}};
  return j;
}

}  // namespace zsd
