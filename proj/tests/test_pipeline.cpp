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

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "test_util.hpp"
#include "zsd/experiment.hpp"

namespace zsd {
namespace {

using ::testing::HasSubstr;
using testing::TempDir;

// --- config parsing

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "t.ini");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, ErrorsNameLineAndKey) {
  EXPECT_THAT(error_of("[experiment]\nseed = 1\nbogus = 2\n"), HasSubstr("t.ini:3: unknown key 'bogus' in [experiment]"));
  EXPECT_THAT(error_of("[nowhere]\n"), HasSubstr("t.ini:1: unknown section [nowhere]"));
  EXPECT_THAT(error_of("\n[finetune]\nlr = fast\n"), HasSubstr("t.ini:3: bad value 'fast' for key 'finetune.lr'"));
  EXPECT_THAT(error_of("seed = 1\n"), HasSubstr("t.ini:1: key 'seed' outside of any section"));
  EXPECT_THAT(error_of("[eval]\n[eval]\n"), HasSubstr("t.ini:2: duplicate section [eval]"));
  EXPECT_THAT(error_of("[eval]\nprobe = 1\nprobe = 0\n"), HasSubstr("t.ini:3: duplicate key 'probe'"));
  EXPECT_THAT(error_of("[eval\n"), HasSubstr("unterminated section header"));
  EXPECT_THAT(error_of("[experiment]\njust words\n"), HasSubstr("expected 'key = value'"));
  EXPECT_THAT(error_of("[eval]\ntestsets = nope\n"), HasSubstr("unknown dataset 'nope'"));
  EXPECT_THAT(error_of("[experiment]\nstages = teacher, deploy\n"), HasSubstr("unknown stage 'deploy'"));
  EXPECT_THAT(error_of("[report]\nmatrix = synthetic_train\n"), HasSubstr("must be 'finetune_set:testset'"));
  EXPECT_THAT(error_of("[eval]\ncorruptions = fog\n"), HasSubstr("eval.corruptions"));
  EXPECT_THROW(load_config("/nonexistent/x.ini"), ConfigError);
}

TEST(Config, DefaultsAndComments) {
  const auto cfg = parse_config("# comment\n[experiment] ; trailing\nseed = 11\n\n[set.extra]\ndomain = sketch\n");
  EXPECT_EQ(cfg.seed, 11u);
  EXPECT_EQ(cfg.sets.at("extra").domain, Domain::kSketch);
  EXPECT_EQ(cfg.sets.count("synthetic_train"), 1u);
  EXPECT_EQ(cfg.checkpoint_dir(), cfg.out + "/checkpoints");
}

TEST(Config, IniRoundTripIsExact) {
  auto cfg = parse_config(
      "[experiment]\nname = rt\nseeds = 2\n[world]\nnatural_cast_min = 0.8\n[finetune]\nlr = 0.0003\n"
      "tags = l2_feature, ce+hinton_kd\n[eval]\ncorruptions = all\ncorruption_sets = natural_test\n"
      "[set.s]\ndomain = natural\nspurious = background\nshuffled = true\nseed = 5\n");
  const auto text = to_ini(cfg);
  EXPECT_EQ(to_ini(parse_config(text)), text);
  const auto back = parse_config(text);
  EXPECT_EQ(back.finetune_opt.lr, 0.0003);
  EXPECT_EQ(back.corruptions.size(), all_corruptions().size());
  EXPECT_TRUE(back.sets.at("s").shuffled);
  EXPECT_FLOAT_EQ(back.style.natural_cast_min, 0.8f);
}

TEST(Config, BundledConfigsLoad) {
  for (const auto& entry : std::filesystem::directory_iterator(std::string(ZSD_SOURCE_DIR) + "/configs")) {
    if (entry.path().extension() != ".ini") continue;
    EXPECT_NO_THROW(Pipeline(load_config(entry.path().string()), {})) << entry.path();
  }
}

TEST(Config, SetSeedsDependOnName) {
  const auto cfg = parse_config("[set.a]\n[set.b]\n[set.c]\nseed = 9\n");
  EXPECT_NE(cfg.dataset_spec("a").split_seed, cfg.dataset_spec("b").split_seed);
  EXPECT_EQ(cfg.dataset_spec("c").split_seed, 9u);
  EXPECT_THROW(cfg.dataset_spec("zzz"), ConfigError);
}

// --- pipeline on a tiny world

ExperimentConfig tiny(const TempDir& dir) {
  auto cfg = parse_config(
      "[experiment]\nname = tiny\nseeds = 1\n"
      "[world]\nclasses = 3\n"
      "[teacher]\nsteps = 40\nnatural_per_class = 4\nsynthetic_per_class = 4\nsketch_per_class = 0\n"
      "gate_per_class = 4\nmin_top1 = 0\nmin_probe_top1 = 0\nprobe = false\n"
      "[pretrain]\nsteps = 20\nnatural_per_class = 2\nsynthetic_per_class = 2\nsketch_per_class = 0\n"
      "heldout_per_class = 2\nmin_loss_reduction = -10\nmin_cosine = -1\n"
      "[finetune]\nsteps = 6\nbatch = 8\ntags = l2_feature, clip\n"
      "[eval]\ncorruptions = contrast\ncorruption_sets = natural_test\n"
      "[report]\nmatrix = synthetic_train:train, synthetic_train:natural_test\n"
      "[set.synthetic_train]\nper_class = 4\n[set.natural_test]\nper_class = 2\n[set.synthetic_test]\nper_class = 2\n");
  cfg.out = dir.str() + "/out";
  cfg.cache = dir.str() + "/cache";
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

TEST(Pipeline, RerunIsCachedAndIdentical) {
  TempDir dir("pipe");
  const auto cfg = tiny(dir);
  const auto first = run_experiment(cfg);
  EXPECT_EQ(first.training_steps(), 40u + 20u + 2 * 6u);
  EXPECT_TRUE(first.gates_passed());
  const auto csv = slurp(first.report_dir + "/reports.csv");
  EXPECT_THAT(csv, HasSubstr("student:clip:synthetic_train:s0,natural_test,corruption_mean_s3,"));
  EXPECT_THAT(csv, HasSubstr("teacher,natural_test,clean,"));
  for (const auto* f : {"matrix.csv", "matrix.svg", "summary.json", "config.ini"}) {
    EXPECT_TRUE(std::filesystem::exists(first.report_dir + "/" + f)) << f;
  }

  const auto second = run_experiment(cfg);
  EXPECT_EQ(second.training_steps(), 0u);
  for (const auto& s : second.stages) EXPECT_TRUE(s.cached) << s.stage;
  EXPECT_EQ(slurp(second.report_dir + "/reports.csv"), csv);

  // Same config from a fresh cache reproduces the bytes.
  auto fresh = cfg;
  fresh.cache = dir.str() + "/cache2";
  fresh.out = dir.str() + "/out2";
  EXPECT_EQ(slurp(run_experiment(fresh).report_dir + "/reports.csv"), csv);

  // Changing a gate floor reuses the teacher; changing the fine-tune lr
  // retrains only the students.
  auto tweaked = cfg;
  tweaked.teacher_floor = 0.01;
  tweaked.finetune_opt.lr = 1e-3;
  const auto third = run_experiment(tweaked);
  EXPECT_EQ(third.training_steps(), 2 * 6u);
}

TEST(Pipeline, MissingDependencyNamesStage) {
  TempDir dir("dep");
  auto cfg = tiny(dir);
  cfg.stages = {"finetune"};
  try {
    run_experiment(cfg);
    FAIL() << "expected MissingDependencyError";
  } catch (const MissingDependencyError& e) {
    EXPECT_THAT(std::string(e.what()), HasSubstr("run stage 'teacher' first"));
  }
  cfg.stages = {"teacher"};
  EXPECT_EQ(run_experiment(cfg).training_steps(), 40u);
  cfg.stages = {"eval"};
  EXPECT_THROW(run_experiment(cfg), MissingDependencyError);
  EXPECT_THROW(regenerate_reports(cfg), MissingDependencyError);
}

TEST(Pipeline, UntrainedTeacherFailsGate) {
  TempDir dir("gate");
  auto cfg = tiny(dir);
  cfg.teacher_opt.steps = 0;
  cfg.teacher_floor = 0.9;
  cfg.stages = {"teacher"};
  try {
    run_experiment(cfg);
    FAIL() << "expected GateError";
  } catch (const GateError& e) {
    EXPECT_THAT(std::string(e.what()), HasSubstr("steps 0"));
  }
}

TEST(Pipeline, RejectsUnknownTag) {
  TempDir dir("tag");
  auto cfg = tiny(dir);
  cfg.tags = {"l2_feature", "hinge"};
  EXPECT_THROW(run_experiment(cfg), Error);
  EXPECT_FALSE(std::filesystem::exists(cfg.cache));
}

}  // namespace
}  // namespace zsd
