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

// Prompt diversification: contextual dimensions, greedy covering arrays, the
// weighted prompt wire format, and zero-shot prompt templates.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "zsd/common.hpp"

namespace zsd {

struct ContextualDimension {
  std::string name;
  double weight = 1.0;
  std::vector<std::string> options;

  void validate() const {
    if (options.size() < 2) throw Error("dimension '" + name + "': needs at least 2 options");
    if (!(weight > 0.0)) throw Error("dimension '" + name + "': weight must be positive");
    std::set<std::string> seen;
    for (const auto& o : options) {
      if (!seen.insert(o).second) throw Error("dimension '" + name + "': duplicate option '" + o + "'");
      if (o.find_first_of(",():") != std::string::npos) {
        throw Error("dimension '" + name + "': option '" + o + "' contains a reserved character");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Covering arrays

struct CoveringArray {
  std::size_t factors = 0;
  std::size_t levels = 0;
  std::size_t strength = 0;
  std::vector<std::vector<std::uint16_t>> rows;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> factor_subsets(std::size_t k, std::size_t t) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur(t);
  for (std::size_t i = 0; i < t; ++i) cur[i] = i;
  while (true) {
    out.push_back(cur);
    std::size_t i = t;
    while (i > 0 && cur[i - 1] == k - t + (i - 1)) --i;
    if (i == 0) break;
    ++cur[i - 1];
    for (std::size_t j = i; j < t; ++j) cur[j] = cur[j - 1] + 1;
  }
  return out;
}

inline std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  while (exp--) r *= base;
  return r;
}

// Tracks which t-tuples are still uncovered.
class CoverageState {
 public:
  CoverageState(std::size_t k, std::size_t v, std::size_t t)
      : v_(v), subsets_(factor_subsets(k, t)), per_subset_(ipow(v, t)) {
    covered_.assign(subsets_.size() * per_subset_, 0);
    remaining_ = covered_.size();
    // Every (factor, level) pair appears in C(k-1, t-1) * v^(t-1) tuples.
    const std::size_t per_level = subsets_.size() * per_subset_ * t / (k * v);
    level_load_.assign(k * v, per_level);
    subsets_of_factor_.resize(k);
    for (std::size_t s = 0; s < subsets_.size(); ++s) {
      for (auto f : subsets_[s]) subsets_of_factor_[f].push_back(s);
    }
  }

  std::size_t remaining() const { return remaining_; }
  std::size_t load(std::size_t factor, std::size_t level) const { return level_load_[factor * v_ + level]; }
  const std::vector<std::size_t>& subsets_of(std::size_t factor) const { return subsets_of_factor_[factor]; }
  const std::vector<std::size_t>& subset(std::size_t s) const { return subsets_[s]; }
  std::size_t subset_count() const { return subsets_.size(); }

  std::size_t tuple_index(std::size_t s, const std::vector<int>& row) const {
    std::size_t idx = 0;
    for (auto f : subsets_[s]) idx = idx * v_ + static_cast<std::size_t>(row[f]);
    return s * per_subset_ + idx;
  }

  bool is_covered(std::size_t s, const std::vector<int>& row) const { return covered_[tuple_index(s, row)]; }

  std::size_t gain(const std::vector<int>& row) const {
    std::size_t g = 0;
    for (std::size_t s = 0; s < subsets_.size(); ++s) g += !is_covered(s, row);
    return g;
  }

  void mark(const std::vector<int>& row) {
    for (std::size_t s = 0; s < subsets_.size(); ++s) {
      auto idx = tuple_index(s, row);
      if (covered_[idx]) continue;
      covered_[idx] = 1;
      --remaining_;
      for (auto f : subsets_[s]) --level_load_[f * v_ + static_cast<std::size_t>(row[f])];
    }
  }

 private:
  std::size_t v_;
  std::vector<std::vector<std::size_t>> subsets_;
  std::size_t per_subset_;
  std::vector<std::uint8_t> covered_;
  std::size_t remaining_ = 0;
  std::vector<std::size_t> level_load_;
  std::vector<std::vector<std::size_t>> subsets_of_factor_;
};

}  // namespace detail

inline constexpr std::size_t kCandidatesPerRow = 50;

// Greedy AETG-style construction. Each row is the best of 50 candidates; a
// candidate seeds the (factor, level) with the most uncovered tuples, visits
// the remaining factors in random order and gives each the level completing
// the most uncovered tuples with the factors fixed so far. Ties are broken by
// the seeded PRNG.
inline CoveringArray build_covering_array(std::size_t factors, std::size_t levels, std::size_t strength,
                                          std::uint64_t seed) {
  if (strength < 2 || factors < strength || levels < 2) {
    throw Error("covering array: need k >= t >= 2 and v >= 2 (got k=" + std::to_string(factors) +
                ", v=" + std::to_string(levels) + ", t=" + std::to_string(strength) + ")");
  }
  if (levels > 65535) throw Error("covering array: too many levels");
  detail::CoverageState state(factors, levels, strength);
  std::mt19937_64 rng(seed);
  CoveringArray ca{factors, levels, strength, {}};

  std::vector<int> row(factors), best(factors);
  std::vector<std::size_t> order(factors);
  std::vector<std::size_t> ties;
  while (state.remaining() > 0) {
    std::size_t best_gain = 0;
    for (std::size_t cand = 0; cand < kCandidatesPerRow; ++cand) {
      std::fill(row.begin(), row.end(), -1);
      // Seed pair.
      std::size_t top = 0;
      ties.clear();
      for (std::size_t f = 0; f < factors; ++f) {
        for (std::size_t l = 0; l < levels; ++l) {
          const auto load = state.load(f, l);
          if (load > top) {
            top = load;
            ties.clear();
          }
          if (load == top) ties.push_back(f * levels + l);
        }
      }
      const auto seed_pick = ties[rng() % ties.size()];
      const auto first = seed_pick / levels;
      row[first] = static_cast<int>(seed_pick % levels);

      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      for (auto f : order) {
        if (row[f] >= 0) continue;
        std::size_t top_gain = 0;
        ties.clear();
        for (std::size_t l = 0; l < levels; ++l) {
          row[f] = static_cast<int>(l);
          std::size_t g = 0;
          for (auto s : state.subsets_of(f)) {
            bool complete = true;
            for (auto g2 : state.subset(s)) complete = complete && row[g2] >= 0;
            if (complete && !state.is_covered(s, row)) ++g;
          }
          if (g > top_gain) {
            top_gain = g;
            ties.clear();
          }
          if (g == top_gain) ties.push_back(l);
        }
        row[f] = static_cast<int>(ties[rng() % ties.size()]);
      }
      const auto g = state.gain(row);
      if (g > best_gain) {
        best_gain = g;
        best = row;
      }
    }
    state.mark(best);
    std::vector<std::uint16_t> out(factors);
    for (std::size_t f = 0; f < factors; ++f) out[f] = static_cast<std::uint16_t>(best[f]);
    ca.rows.push_back(std::move(out));
  }
  return ca;
}

struct CoverageReport {
  std::size_t total = 0;
  std::size_t covered = 0;
  bool complete() const { return covered == total; }
};

// Counts covered t-tuples over every factor subset.
inline CoverageReport coverage_of(const CoveringArray& ca) {
  CoverageReport rep;
  for (const auto& subset : detail::factor_subsets(ca.factors, ca.strength)) {
    std::unordered_set<std::size_t> seen;
    for (const auto& row : ca.rows) {
      std::size_t idx = 0;
      for (auto f : subset) {
        if (row[f] >= ca.levels) throw Error("covering array: level out of range");
        idx = idx * ca.levels + row[f];
      }
      seen.insert(idx);
    }
    rep.total += detail::ipow(ca.levels, ca.strength);
    rep.covered += seen.size();
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Weighted prompts

struct WeightedSegment {
  std::string text;
  double weight = 1.0;
  bool operator==(const WeightedSegment&) const = default;
};

struct PromptSpec {
  std::string class_name;
  double class_weight = 1.0;
  std::string superclass;
  double superclass_weight = 1.0;
  // One selected option per dimension, in declared dimension order.
  std::vector<WeightedSegment> options;

  std::vector<WeightedSegment> segments() const {
    std::vector<WeightedSegment> out{{class_name, class_weight}, {superclass, superclass_weight}};
    out.insert(out.end(), options.begin(), options.end());
    return out;
  }
};

inline std::string format_weight(double w) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", w);
  return buf;
}

// "(text:W), (text:W), ..." with one decimal per weight.
inline std::string serialize_segments(const std::vector<WeightedSegment>& segments) {
  std::string out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i) out += ", ";
    out += "(" + segments[i].text + ":" + format_weight(segments[i].weight) + ")";
  }
  return out;
}

inline std::string serialize_prompt(const PromptSpec& spec) { return serialize_segments(spec.segments()); }

// Parses the weighted format. A string not starting with '(' is one segment of
// weight 1.
inline std::vector<WeightedSegment> parse_weighted_prompt(std::string_view text) {
  const auto body = trim(text);
  if (body.empty()) return {};
  if (body.front() != '(') return {{std::string(body), 1.0}};
  std::vector<WeightedSegment> out;
  std::size_t i = 0;
  while (i < body.size()) {
    while (i < body.size() && (body[i] == ' ' || body[i] == ',')) ++i;
    if (i >= body.size()) break;
    if (body[i] != '(') throw Error("weighted prompt: expected '(' at offset " + std::to_string(i));
    const auto close = body.find(')', i);
    if (close == std::string_view::npos) throw Error("weighted prompt: unterminated segment");
    const auto inner = body.substr(i + 1, close - i - 1);
    const auto colon = inner.rfind(':');
    if (colon == std::string_view::npos) throw Error("weighted prompt: segment without weight");
    const std::string weight_str(trim(inner.substr(colon + 1)));
    char* end = nullptr;
    const double w = std::strtod(weight_str.c_str(), &end);
    if (weight_str.empty() || end != weight_str.c_str() + weight_str.size()) {
      throw Error("weighted prompt: bad weight '" + weight_str + "'");
    }
    out.push_back({std::string(trim(inner.substr(0, colon))), w});
    i = close + 1;
  }
  return out;
}

// Lowercases and splits on whitespace and commas.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == ',') {
      if (!cur.empty()) out.push_back(to_lower(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(to_lower(cur));
  return out;
}

struct AssembledPrompts {
  std::vector<PromptSpec> specs;
  std::vector<std::string> lines;
};

inline AssembledPrompts assemble_prompts(const std::string& class_name, double class_weight,
                                         const std::string& superclass, double superclass_weight,
                                         const std::vector<ContextualDimension>& dimensions,
                                         const CoveringArray& array) {
  if (array.factors != dimensions.size()) {
    throw Error("assemble_prompts: array has " + std::to_string(array.factors) + " factors but " +
                std::to_string(dimensions.size()) + " dimensions were given");
  }
  AssembledPrompts out;
  for (const auto& row : array.rows) {
    if (row.size() != dimensions.size()) throw Error("assemble_prompts: row arity mismatch");
    PromptSpec spec{class_name, class_weight, superclass, superclass_weight, {}};
    for (std::size_t d = 0; d < dimensions.size(); ++d) {
      const auto& dim = dimensions[d];
      if (row[d] >= dim.options.size()) {
        throw Error("assemble_prompts: level " + std::to_string(row[d]) + " exceeds the options of '" +
                    dim.name + "'");
      }
      spec.options.push_back({dim.options[row[d]], dim.weight});
    }
    out.lines.push_back(serialize_prompt(spec));
    out.specs.push_back(std::move(spec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Zero-shot prompts

inline std::string zero_shot_prompt(const std::string& class_name, const std::string& superclass) {
  if (trim(class_name).empty() || trim(superclass).empty()) {
    throw Error("zero_shot_prompt: class name and superclass must be non-empty");
  }
  return "a photo of a " + class_name + ", which is a type of " + superclass;
}

inline std::vector<std::string> simple_prompt_bank(const std::vector<std::string>& class_names,
                                                   const std::vector<std::string>& superclasses,
                                                   std::size_t copies) {
  if (copies < 1) throw Error("simple_prompt_bank: copies must be >= 1");
  if (class_names.size() != superclasses.size()) {
    throw Error("simple_prompt_bank: class and superclass lists differ in length");
  }
  std::vector<std::string> out;
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const auto p = zero_shot_prompt(class_names[c], superclasses[c]);
    for (std::size_t i = 0; i < copies; ++i) out.push_back(p);
  }
  return out;
}

// Instantiates "{class}" (required) and "{superclass}" (optional) placeholders.
inline std::vector<std::string> prompt_ensemble(const std::vector<std::string>& templates,
                                                const std::string& class_name, const std::string& superclass) {
  if (templates.empty()) throw Error("prompt_ensemble: no templates");
  auto replace_all = [](std::string s, const std::string& key, const std::string& value) {
    for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size())) {
      s.replace(pos, key.size(), value);
    }
    return s;
  };
  std::vector<std::string> out;
  for (const auto& t : templates) {
    if (t.find("{class}") == std::string::npos) {
      throw Error("prompt_ensemble: template '" + t + "' lacks a {class} placeholder");
    }
    out.push_back(replace_all(replace_all(t, "{class}", class_name), "{superclass}", superclass));
  }
  return out;
}

inline const std::vector<std::string>& default_templates() {
  static const std::vector<std::string> kTemplates = {
      "a photo of a {class}, which is a type of {superclass}",
      "a photo of a {class}",
      "a picture of a {class}",
      "a bright photo of a {class}",
      "a dark photo of a {class}",
      "a close-up photo of a {class}",
      "a photo of a small {class}",
      "a photo of a large {class}",
      "a cropped photo of a {class}",
      "a rendering of a {class}",
      "a drawing of a {class}",
      "a blurry photo of a {class}",
      "a good photo of a {class}",
      "a photo of the {class}",
      "itap of a {class}",
      "a {class} which is a type of {superclass}",
  };
  return kTemplates;
}

// ---------------------------------------------------------------------------
// Built-in option banks (30 options; the 15-option banks are their prefixes).

inline const std::map<std::string, std::vector<std::string>>& builtin_option_banks() {
  static const std::map<std::string, std::vector<std::string>> kBanks = {
      {"locations",
       {"garden", "beach", "living room", "kitchen", "forest", "park", "snowy field", "city street",
        "sofa", "backyard", "mountain trail", "lake shore", "desert", "barn", "meadow", "library", "porch",
        "bedroom", "riverbank", "playground", "office", "cafe", "rooftop", "vineyard", "harbor", "farmyard",
        "hallway", "autumn woods", "wheat field", "stone courtyard"}},
      {"position",
       {"sitting", "standing", "lying down", "running", "jumping", "sleeping", "curled up", "stretching",
        "looking up", "walking", "playing", "rolling over", "crouching", "leaning", "peeking", "resting",
        "trotting", "perched", "turning around", "sniffing", "yawning", "pouncing", "begging", "lounging",
        "tilting head", "crawling", "leaping", "sprawled", "alert", "hiding"}},
      {"daytime",
       {"morning", "noon", "afternoon", "evening", "night", "dawn", "dusk", "sunrise", "sunset", "midnight",
        "golden hour", "blue hour", "overcast day", "rainy afternoon", "foggy morning", "starry night",
        "bright midday", "late evening", "early morning", "twilight", "moonlit night", "cloudy noon",
        "stormy evening", "misty dawn", "snowy morning", "hazy afternoon", "clear night", "windy morning",
        "warm afternoon", "cool evening"}},
      {"camera angle",
       {"low angle", "high angle", "eye level", "close-up", "wide shot", "bird's eye view", "side view",
        "front view", "rear view", "over the shoulder", "dutch angle", "macro shot", "medium shot",
        "full body shot", "aerial view", "worm's eye view", "three-quarter view", "profile view", "top down",
        "panoramic", "telephoto shot", "fisheye", "tracking shot", "candid shot", "portrait shot", "long shot",
        "extreme close-up", "tilted frame", "handheld shot", "symmetrical frame"}},
  };
  return kBanks;
}

inline const std::vector<std::string>& builtin_dimension_order() {
  static const std::vector<std::string> kOrder = {"locations", "position", "daytime", "camera angle"};
  return kOrder;
}

// The four varying dimensions with `options` entries each (at most 30).
inline std::vector<ContextualDimension> builtin_dimensions(std::size_t options) {
  if (options < 2 || options > 30) throw Error("builtin dimensions: options must be in [2, 30]");
  std::vector<ContextualDimension> out;
  for (const auto& name : builtin_dimension_order()) {
    const auto& bank = builtin_option_banks().at(name);
    out.push_back({name, 1.0, std::vector<std::string>(bank.begin(), bank.begin() + static_cast<long>(options))});
  }
  return out;
}

}  // namespace zsd
