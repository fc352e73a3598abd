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

#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "zsd/prompts.hpp"

namespace zsd {
namespace {

// Exhaustive check written against the definition: every choice of t factors
// and every assignment of levels to them must appear in some row.
bool covers_all(const std::vector<std::vector<std::uint16_t>>& rows, std::size_t k, std::size_t v, std::size_t t) {
  std::vector<std::size_t> cols(t);
  std::function<bool(std::size_t, std::size_t)> choose = [&](std::size_t start, std::size_t depth) -> bool {
    if (depth == t) {
      std::set<std::vector<std::uint16_t>> seen;
      for (const auto& r : rows) {
        std::vector<std::uint16_t> key;
        for (auto c : cols) key.push_back(r[c]);
        seen.insert(key);
      }
      std::size_t expected = 1;
      for (std::size_t i = 0; i < t; ++i) expected *= v;
      return seen.size() == expected;
    }
    for (std::size_t c = start; c < k; ++c) {
      cols[depth] = c;
      if (!choose(c + 1, depth + 1)) return false;
    }
    return true;
  };
  for (const auto& r : rows) {
    if (r.size() != k) return false;
    for (auto x : r) {
      if (x >= v) return false;
    }
  }
  return choose(0, 0);
}

TEST(CoveringArray, OracleAcceptsOptimalWitness) {
  const std::vector<std::vector<std::uint16_t>> witness = {
      {0, 0, 0, 0}, {0, 1, 1, 1}, {1, 0, 1, 1}, {1, 1, 0, 1}, {1, 1, 1, 0}};
  EXPECT_TRUE(covers_all(witness, 4, 2, 2));
  EXPECT_FALSE(covers_all({witness.begin(), witness.end() - 1}, 4, 2, 2));
}

TEST(CoveringArray, BinaryFourFactors) {
  const auto ca = build_covering_array(4, 2, 2, 0);
  EXPECT_TRUE(covers_all(ca.rows, 4, 2, 2));
  EXPECT_LE(ca.rows.size(), 7u);
  EXPECT_GE(ca.rows.size(), 5u);
  const auto cov = coverage_of(ca);
  EXPECT_EQ(cov.total, 24u);
  EXPECT_EQ(cov.covered, 24u);
}

TEST(CoveringArray, FifteenLevels) {
  const auto ca = build_covering_array(4, 15, 2, 1);
  EXPECT_TRUE(covers_all(ca.rows, 4, 15, 2));
  EXPECT_EQ(coverage_of(ca).total, 1350u);
  EXPECT_LE(ca.rows.size(), 320u);
  EXPECT_GE(ca.rows.size(), 225u);
}

TEST(CoveringArray, ThirtyLevels) {
  const auto ca = build_covering_array(4, 30, 2, 2);
  EXPECT_TRUE(covers_all(ca.rows, 4, 30, 2));
  EXPECT_LE(ca.rows.size(), 1200u);
  EXPECT_GE(ca.rows.size(), 900u);
}

TEST(CoveringArray, HigherStrength) {
  const auto ca = build_covering_array(5, 3, 3, 4);
  EXPECT_TRUE(covers_all(ca.rows, 5, 3, 3));
  EXPECT_GE(ca.rows.size(), 27u);
}

TEST(CoveringArray, InvalidParameters) {
  EXPECT_THROW(build_covering_array(4, 1, 2, 0), Error);
  EXPECT_THROW(build_covering_array(1, 3, 2, 0), Error);
  EXPECT_THROW(build_covering_array(4, 3, 1, 0), Error);
  EXPECT_THROW(build_covering_array(2, 3, 3, 0), Error);
}

TEST(CoveringArray, CoverageCountsMissingTuples) {
  auto ca = build_covering_array(4, 3, 2, 9);
  ca.rows.resize(1);
  const auto cov = coverage_of(ca);
  EXPECT_EQ(cov.total, 54u);
  EXPECT_EQ(cov.covered, 6u);  // one row covers one pair per factor pair
}

TEST(CoveringArrayProperty, RandomShapesAreCoveredAndDeterministic) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t t = 2 + rng() % 2;
    const std::size_t k = t + rng() % 4;
    const std::size_t v = 2 + rng() % (t == 2 ? 8 : 3);
    const auto seed = rng();
    const auto a = build_covering_array(k, v, t, seed);
    EXPECT_TRUE(covers_all(a.rows, k, v, t)) << k << "," << v << "," << t;
    std::size_t floor = 1;
    for (std::size_t i = 0; i < t; ++i) floor *= v;
    EXPECT_GE(a.rows.size(), floor);
    EXPECT_EQ(a.rows, build_covering_array(k, v, t, seed).rows);
  }
}

// --- prompt assembly

std::vector<ContextualDimension> example_dimensions() {
  return {{"locations", 1.0, {"garden", "beach"}},
          {"activity", 1.0, {"sitting", "running"}},
          {"time of day", 1.0, {"morning", "night"}},
          {"camera angle", 1.0, {"low angle", "top view"}}};
}

TEST(AssemblePrompts, FormatMatchesExample) {
  CoveringArray ca;
  ca.factors = 4;
  ca.levels = 2;
  ca.strength = 2;
  ca.rows = {{0, 0, 0, 0}};
  const auto out = assemble_prompts("saint bernard", 1.5, "dog", 1.2, example_dimensions(), ca);
  ASSERT_EQ(out.lines.size(), 1u);
  EXPECT_EQ(out.lines[0], "(saint bernard:1.5), (dog:1.2), (garden:1.0), (sitting:1.0), (morning:1.0), (low angle:1.0)");
}

TEST(AssemblePrompts, OnePromptPerRowAndArityChecked) {
  const auto dims = example_dimensions();
  const auto ca = build_covering_array(4, 2, 2, 3);
  const auto out = assemble_prompts("cat", 1.0, "animal", 1.0, dims, ca);
  EXPECT_EQ(out.lines.size(), ca.rows.size());
  EXPECT_EQ(out.specs.size(), ca.rows.size());
  for (const auto& l : out.lines) EXPECT_THAT(l, ::testing::StartsWith("(cat:1.0), (animal:1.0), "));
  auto bad = ca;
  bad.factors = 3;
  EXPECT_THROW(assemble_prompts("cat", 1.0, "animal", 1.0, dims, bad), Error);
  auto bad_row = ca;
  bad_row.rows[0].pop_back();
  EXPECT_THROW(assemble_prompts("cat", 1.0, "animal", 1.0, dims, bad_row), Error);
}

TEST(AssemblePrompts, SerializationRoundTrip) {
  const auto dims = builtin_dimensions(15);
  const auto ca = build_covering_array(dims.size(), 15, 2, 5);
  const auto out = assemble_prompts("spiral", 1.5, "curve", 1.2, dims, ca);
  for (std::size_t i = 0; i < out.lines.size(); ++i) {
    EXPECT_EQ(parse_weighted_prompt(out.lines[i]), out.specs[i].segments());
  }
  EXPECT_EQ(out.lines, assemble_prompts("spiral", 1.5, "curve", 1.2, dims, build_covering_array(dims.size(), 15, 2, 5)).lines);
}

TEST(AssemblePrompts, ParserRejectsMalformed) {
  EXPECT_THROW(parse_weighted_prompt("(cat:1.0), dog"), Error);
  EXPECT_THROW(parse_weighted_prompt("(cat:1.0"), Error);
  EXPECT_THROW(parse_weighted_prompt("(cat)"), Error);
  EXPECT_THROW(parse_weighted_prompt("(cat:x)"), Error);
  const auto plain = parse_weighted_prompt("a photo of a cat");
  ASSERT_EQ(plain.size(), 1u);
  EXPECT_EQ(plain[0].weight, 1.0);
}

TEST(Dimensions, BuiltinBanks) {
  for (std::size_t n : {2u, 15u, 30u}) {
    const auto dims = builtin_dimensions(n);
    EXPECT_EQ(dims.size(), 4u);
    for (const auto& d : dims) {
      EXPECT_EQ(d.options.size(), n);
      EXPECT_NO_THROW(d.validate());
    }
  }
  EXPECT_THROW(builtin_dimensions(31), Error);
  ContextualDimension dup{"x", 1.0, {"a", "a"}};
  EXPECT_THROW(dup.validate(), Error);
  ContextualDimension one{"x", 1.0, {"a"}};
  EXPECT_THROW(one.validate(), Error);
}

// --- zero-shot, simple and ensemble prompts

TEST(ZeroShotPrompt, Examples) {
  EXPECT_EQ(zero_shot_prompt("saint bernard", "dog"), "a photo of a saint bernard, which is a type of dog");
  EXPECT_EQ(zero_shot_prompt("rose", "flower"), "a photo of a rose, which is a type of flower");
  EXPECT_THROW(zero_shot_prompt("", "dog"), Error);
  EXPECT_THROW(zero_shot_prompt("dog", ""), Error);
}

TEST(SimplePromptBank, Examples) {
  const auto bank = simple_prompt_bank({"cat", "dog"}, {"animal", "animal"}, 3);
  EXPECT_EQ(bank.size(), 6u);
  EXPECT_EQ(std::set<std::string>(bank.begin(), bank.end()).size(), 2u);
  const auto single = simple_prompt_bank({"cat"}, {"animal"}, 4);
  EXPECT_EQ(std::set<std::string>(single.begin(), single.end()).size(), 1u);
  EXPECT_THROW(simple_prompt_bank({"cat"}, {"animal"}, 0), Error);
}

TEST(PromptEnsemble, Examples) {
  EXPECT_EQ(prompt_ensemble({"a {class}"}, "cat", "animal"), (std::vector<std::string>{"a cat"}));
  EXPECT_EQ(prompt_ensemble({"x {class}", "{class}, a {superclass}", "x {class}"}, "cat", "animal"),
            (std::vector<std::string>{"x cat", "cat, a animal", "x cat"}));
  EXPECT_THROW(prompt_ensemble({"no placeholder"}, "cat", "animal"), Error);
  EXPECT_THROW(prompt_ensemble({}, "cat", "animal"), Error);
  for (const auto& t : default_templates()) EXPECT_THAT(t, ::testing::HasSubstr("{class}"));
}

}  // namespace
}  // namespace zsd
