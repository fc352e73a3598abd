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

// Image encoders, the linear projection head and the hashed text tower.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "zsd/common.hpp"
#include "zsd/optim.hpp"
#include "zsd/prompts.hpp"
#include "zsd/tensor.hpp"

namespace zsd {

inline constexpr std::size_t kImageSide = 24;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide * kImageChannels;
inline constexpr std::size_t kEmbedDim = 32;
inline constexpr std::size_t kTokenBuckets = 4096;

enum class Arch { kMlpSmall, kMlpLarge, kConvSmall };

inline const char* arch_name(Arch a) {
  switch (a) {
    case Arch::kMlpSmall: return "mlp-small";
    case Arch::kMlpLarge: return "mlp-large";
    case Arch::kConvSmall: return "conv-small";
  }
  return "?";
}

inline Arch parse_arch(const std::string& name) {
  for (auto a : {Arch::kMlpSmall, Arch::kMlpLarge, Arch::kConvSmall}) {
    if (name == arch_name(a)) return a;
  }
  throw Error("unknown architecture '" + name + "'");
}

namespace detail {

// He-normal for layers followed by ReLU, LeCun-normal otherwise.
inline Tensor init_weight(Shape shape, std::size_t fan_in, bool relu, std::mt19937_64& rng) {
  const double sd = std::sqrt((relu ? 2.0 : 1.0) / static_cast<double>(fan_in));
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(dist(rng));
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace detail

class ImageEncoder {
 public:
  ImageEncoder(Arch arch, std::uint64_t seed) : arch_(arch) {
    std::mt19937_64 rng(seed_of(seed, 0x656e63ULL));
    auto dense = [&](const std::string& name, std::size_t in, std::size_t out, bool relu) {
      add(name + ".w", detail::init_weight({in, out}, in, relu, rng));
      add(name + ".b", Tensor::zeros({out}, true));
    };
    switch (arch) {
      case Arch::kMlpSmall:
        dense("l0", kImagePixels, 64, true);
        dense("l1", 64, kOutDim, false);
        break;
      case Arch::kMlpLarge:
        dense("l0", kImagePixels, 256, true);
        dense("l1", 256, 128, true);
        dense("l2", 128, kOutDim, false);
        break;
      case Arch::kConvSmall:
        add("c0.w", detail::init_weight({3, 3, kImageChannels, 8}, 9 * kImageChannels, true, rng));
        add("c0.b", Tensor::zeros({8}, true));
        add("c1.w", detail::init_weight({3, 3, 8, 16}, 9 * 8, true, rng));
        add("c1.b", Tensor::zeros({16}, true));
        dense("l0", 6 * 6 * 16, kOutDim, false);
        break;
    }
  }

  static constexpr std::size_t kOutDim = 32;

  Arch arch() const { return arch_; }
  std::size_t out_dim() const { return kOutDim; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }

  // (B, 24*24*3) pixels in HWC order -> (B, d_enc).
  Tensor forward(const Tensor& pixels) const {
    if (pixels.rank() != 2 || pixels.dim(1) != kImagePixels) {
      throw ShapeError("image encoder: expected (B, " + std::to_string(kImagePixels) + "), got " +
                       shape_str(pixels.shape()));
    }
    auto dense = [&](const Tensor& x, const char* name) {
      const std::string n(name);
      return add_bias(matmul(x, p(n + ".w")), p(n + ".b"));
    };
    switch (arch_) {
      case Arch::kMlpSmall:
        return dense(relu(dense(pixels, "l0")), "l1");
      case Arch::kMlpLarge:
        return dense(relu(dense(relu(dense(pixels, "l0")), "l1")), "l2");
      case Arch::kConvSmall: {
        const auto b = pixels.dim(0);
        auto x = reshape(pixels, {b, kImageSide, kImageSide, kImageChannels});
        x = avg_pool2(relu(conv3x3(x, p("c0.w"), p("c0.b"))));
        x = avg_pool2(relu(conv3x3(x, p("c1.w"), p("c1.b"))));
        return dense(reshape(x, {b, 6 * 6 * 16}), "l0");
      }
    }
    throw Error("image encoder: bad architecture");
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

 private:
  void add(std::string name, Tensor t) { params_.emplace_back(std::move(name), std::move(t)); }
  const Tensor& p(const std::string& name) const {
    for (const auto& [n, t] : params_) {
      if (n == name) return t;
    }
    throw Error("image encoder: missing parameter '" + name + "'");
  }

  Arch arch_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

// Bias-free linear map d_enc -> d_emb.
class ProjectionHead {
 public:
  ProjectionHead(std::size_t in, std::size_t out, std::uint64_t seed) {
    std::mt19937_64 rng(seed_of(seed, 0x68656164ULL));
    weight_ = detail::init_weight({in, out}, in, false, rng);
  }
  Tensor forward(const Tensor& x) const { return matmul(x, weight_); }
  const Tensor& weight() const { return weight_; }
  std::size_t out_dim() const { return weight_.dim(1); }

 private:
  Tensor weight_;
};

// Encoder followed by the projection head. Parameters are named
// "<prefix>.enc.*" and "<prefix>.head.w".
class ImageModel {
 public:
  ImageModel(Arch arch, std::uint64_t seed, std::string prefix)
      : prefix_(std::move(prefix)), encoder_(arch, seed), head_(encoder_.out_dim(), kEmbedDim, seed) {}

  Arch arch() const { return encoder_.arch(); }
  const std::string& prefix() const { return prefix_; }
  const ImageEncoder& encoder() const { return encoder_; }
  const ProjectionHead& head() const { return head_; }

  // Unnormalized post-head features (B, d_emb).
  Tensor features(const Tensor& pixels) const { return head_.forward(encoder_.forward(pixels)); }
  // Unit-norm embeddings (B, d_emb).
  Tensor encode(const Tensor& pixels) const { return l2_normalize(features(pixels)); }

  ParamStore param_store() const {
    ParamStore store;
    for (const auto& [n, t] : encoder_.params()) store.add(prefix_ + ".enc." + n, t, n.back() == 'w');
    store.add(prefix_ + ".head.w", head_.weight());
    return store;
  }

  std::size_t parameter_count() const { return encoder_.parameter_count() + head_.weight().size(); }

 private:
  std::string prefix_;
  ImageEncoder encoder_;
  ProjectionHead head_;
};

inline Tensor encode_image(const ImageModel& model, const Tensor& pixels) { return model.encode(pixels); }

// Bag-of-tokens text encoder over FNV-1a hashed buckets.
class TextTower {
 public:
  explicit TextTower(std::uint64_t seed) {
    std::mt19937_64 rng(seed_of(seed, 0x74657874ULL));
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<float> table(kTokenBuckets * kEmbedDim);
    for (auto& x : table) x = static_cast<float>(dist(rng));
    tokens_ = Tensor::from_data({kTokenBuckets, kEmbedDim}, std::move(table), true);
    proj_ = detail::init_weight({kEmbedDim, kEmbedDim}, kEmbedDim, false, rng);
  }

  static std::size_t bucket(std::string_view token) { return fnv1a(token) % kTokenBuckets; }

  void freeze() {
    frozen_ = true;
    tokens_.set_requires_grad(false);
    proj_.set_requires_grad(false);
  }
  bool frozen() const { return frozen_; }

  const Tensor& token_table() const { return tokens_; }
  const Tensor& projection() const { return proj_; }

  ParamStore param_store() const {
    ParamStore store;
    store.add("text.tokens", tokens_, false);
    store.add("text.proj", proj_);
    return store;
  }

  // Hash of the raw parameter bytes; used to check the frozen invariant.
  std::uint64_t fingerprint() const {
    Fnv1a h;
    h.update(tokens_.data().data(), tokens_.size() * sizeof(float));
    h.update(proj_.data().data(), proj_.size() * sizeof(float));
    return h.digest();
  }

  // (P, d_emb) unit rows. Each prompt may use the weighted segment format.
  Tensor embed(const std::vector<std::string>& prompts) const {
    if (prompts.empty()) throw Error("embed_text: no prompts");
    std::vector<std::size_t> rows;
    std::map<std::size_t, std::size_t> slot;
    std::vector<std::map<std::size_t, double>> weights(prompts.size());
    for (std::size_t p = 0; p < prompts.size(); ++p) {
      double count = 0.0;
      for (const auto& seg : parse_weighted_prompt(prompts[p])) {
        for (const auto& tok : tokenize(seg.text)) {
          const auto b = bucket(tok);
          auto [it, fresh] = slot.emplace(b, rows.size());
          if (fresh) rows.push_back(b);
          weights[p][it->second] += seg.weight;
          count += 1.0;
        }
      }
      if (count == 0.0) throw Error("embed_text: empty prompt '" + prompts[p] + "'");
      for (auto& [_, w] : weights[p]) w /= count;
    }
    std::vector<float> mix(prompts.size() * rows.size(), 0.0f);
    for (std::size_t p = 0; p < prompts.size(); ++p) {
      for (const auto& [s, w] : weights[p]) mix[p * rows.size() + s] = static_cast<float>(w);
    }
    auto a = Tensor::from_data({prompts.size(), rows.size()}, std::move(mix));
    return l2_normalize(matmul(matmul(a, gather_rows(tokens_, rows)), proj_));
  }

 private:
  Tensor tokens_, proj_;
  bool frozen_ = false;
};

// Single-prompt convenience; returns a (d_emb) vector.
inline Tensor embed_text(const TextTower& tower, const std::string& prompt) {
  return reshape(tower.embed({prompt}), {kEmbedDim});
}

}  // namespace zsd
