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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Experiments run from scratch in --work.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "zsd/zsd.hpp"

namespace fs = std::filesystem;
using namespace zsd;

namespace {

int failures = 0;

void verdict(int id, const std::string& name, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
}

std::string fmt(double v, int digits = 1) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(2);
  os << v;
  return os.str();
}

std::string pct(double v) { return fmt(100.0 * v); }

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

Tensor unit_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::vector<float> v(n * d);
  for (auto& x : v) x = nd(rng);
  return l2_normalize(Tensor::from_data({n, d}, std::move(v)));
}

Tensor gaussian(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::vector<float> v(n * d);
  for (auto& x : v) x = nd(rng);
  return Tensor::from_data({n, d}, std::move(v));
}

// ---- 1

void gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr std::size_t d = 8, m = 3;
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  for (std::size_t n : {2u, 4u}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed_of(seed, n));
      const auto x = unit_rows(n, d, rng), t = unit_rows(n, d, rng), z = unit_rows(m, d, rng);
      const auto logits = gaussian(n, m, rng), t_logits = gaussian(n, m, rng);
      std::vector<std::size_t> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = (i + seed) % m;
      const Temperature temp(3.0);
      const std::vector<std::tuple<std::string, Tensor, std::function<Tensor(const Tensor&)>>> cases = {
          {"feature_l2", x, [&](const Tensor& s) { return feature_l2(s, t); }},
          {"clip_loss", x, [&](const Tensor& s) { return clip_loss(s, t, temp); }},
          {"multi_positive", x, [&](const Tensor& s) { return multi_positive_loss(s, z, labels, temp); }},
          {"contrastive_image", x, [&](const Tensor& s) { return contrastive_image_loss(s, t, temp); }},
          {"cross_entropy_head", logits, [&](const Tensor& s) { return cross_entropy_head(s, labels); }},
          {"hinton_kd", logits, [&](const Tensor& s) { return hinton_kd(s, t_logits, 2.0); }},
      };
      for (const auto& [name, input, f] : cases) {
        const auto r = grad_check(f, input, 1e-3, 1e-3);
        ++checks;
        if (r.max_rel_error > worst || !r.passed) {
          worst = std::max(worst, r.max_rel_error);
          worst_name = name;
        }
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  verdict(1, "gradient correctness", worst < 1e-3 && secs < 10.0,
          std::to_string(checks) + " checks, max rel error " + sci(worst) + " (" + worst_name +
              "), " + fmt(secs, 2) + " s");
}

// ---- 2

void loss_identities() {
  std::mt19937_64 rng(11);
  const auto x = unit_rows(4, 8, rng);
  const auto one = unit_rows(1, 8, rng);
  std::vector<double> err;
  err.push_back(std::abs(feature_l2(x, x).item()));
  err.push_back(std::abs(clip_loss(one, one, Temperature()).item()));
  {
    // Identical prompt rows: every class is equally likely.
    const auto row = unit_rows(1, 8, rng);
    const auto z = concat({row, row, row}, 0);
    err.push_back(std::abs(multi_positive_loss(x, z, {0, 1, 2, 0}, Temperature()).item() - std::log(3.0)));
  }
  err.push_back(std::abs(contrastive_image_loss(one, one, Temperature()).item()));
  {
    const auto l = gaussian(4, 3, rng);
    err.push_back(std::abs(hinton_kd(l, l, 4.0).item()));
  }
  {
    const auto z = unit_rows(3, 8, rng);
    const std::vector<std::size_t> labels = {2, 0, 1, 1};
    const Temperature temp;
    const auto logits = mul_scalar(matmul(x, transpose(z)), temp.scale());
    err.push_back(std::abs(multi_positive_loss(x, z, labels, temp).item() - cross_entropy_head(logits, labels).item()));
  }
  const double worst = *std::max_element(err.begin(), err.end());
  verdict(2, "loss identities", worst <= 1e-6, "6 identities, max deviation " + sci(worst));
}

// ---- 3

// Exhaustive pair enumeration, independent of the library's coverage count.
std::pair<std::size_t, std::size_t> pair_coverage(const CoveringArray& ca, std::size_t k, std::size_t v) {
  std::size_t total = 0, covered = 0;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      std::vector<char> seen(v * v, 0);
      for (const auto& r : ca.rows) seen[r.at(a) * v + r.at(b)] = 1;
      total += v * v;
      for (char s : seen) covered += s;
    }
  }
  return {covered, total};
}

void covering_arrays() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  for (auto [v, cap] : {std::pair<std::size_t, std::size_t>{15, 320}, {30, 1200}, {2, 7}}) {
    const auto ca = build_covering_array(4, v, 2, 0);
    const auto [covered, total] = pair_coverage(ca, 4, v);
    ok = ok && covered == total && ca.rows.size() <= cap;
    detail += "v=" + std::to_string(v) + ": " + std::to_string(covered) + "/" + std::to_string(total) + " pairs, " +
              std::to_string(ca.rows.size()) + " rows (cap " + std::to_string(cap) + "); ";
  }
  CoveringArray witness;
  witness.factors = 4;
  witness.levels = 2;
  witness.strength = 2;
  witness.rows = {{0, 0, 0, 0}, {0, 1, 1, 1}, {1, 0, 1, 1}, {1, 1, 0, 1}, {1, 1, 1, 0}};
  const auto [wc, wt] = pair_coverage(witness, 4, 2);
  ok = ok && wc == wt;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ok = ok && secs < 5.0;
  verdict(3, "covering arrays", ok, detail + "5-row witness " + (wc == wt ? "verifies" : "fails") + ", " + fmt(secs, 2) + " s");
}

// ---- experiments

struct Experiment {
  RunResult result;
  double cpu = 0.0;
  std::string csv_path;
};

ExperimentConfig load_into(const fs::path& config, const fs::path& work, const std::string& cache) {
  auto cfg = load_config(config.string());
  cfg.out = (work / cfg.name).string();
  cfg.cache = (work / cache).string();
  return cfg;
}

Experiment run(const ExperimentConfig& cfg) {
  Experiment e;
  const double c0 = cpu_seconds();
  std::cerr << "running " << cfg.name << " into " << cfg.out << std::endl;
  e.result = run_experiment(cfg, [](const std::string& line) { std::cerr << line << std::endl; });
  e.cpu = cpu_seconds() - c0;
  e.csv_path = e.result.report_dir + "/reports.csv";
  return e;
}

double gate_value(const RunResult& r, const std::string& name) {
  for (const auto& g : r.gates) {
    if (g.name == name) return g.value;
  }
  return std::nan("");
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zsd acceptance suite"};
  std::string configs = "configs", work = "acceptance";
  bool keep = false;
  bool quick = false;
  app.add_option("--configs", configs, "Directory with the bundled experiment configs");
  app.add_option("--work", work, "Scratch directory for runs and checkpoints");
  app.add_flag("--keep", keep, "Reuse checkpoints already in --work instead of starting fresh");
  app.add_flag("--quick", quick, "Only the criteria that need no training (1-3)");
  CLI11_PARSE(app, argc, argv);

  gradient_correctness();
  loss_identities();
  covering_arrays();
  if (quick) return failures ? 1 : 0;

  const fs::path cdir(configs), wdir(work);
  if (!keep) fs::remove_all(wdir);
  fs::create_directories(wdir);

  try {
    // 4: teacher stage alone, timed.
    auto tcfg = load_into(cdir / "table2_toy.ini", wdir, "cache");
    tcfg.stages = {"teacher"};
    tcfg.out = (wdir / "teacher_only").string();
    const auto teacher = run(tcfg);
    const double zs_nat = gate_value(teacher.result, "teacher_zero_shot_natural");
    const double zs_syn = gate_value(teacher.result, "teacher_zero_shot_synthetic");
    const double probe = gate_value(teacher.result, "teacher_linear_probe");
    verdict(4, "teacher sanity gate", zs_nat >= 0.90 && zs_syn >= 0.90 && probe >= 0.95 && teacher.cpu < 180.0,
            "zero-shot natural " + pct(zs_nat) + "%, synthetic " + pct(zs_syn) + "%, probe " + pct(probe) + "%, " +
                fmt(teacher.cpu) + " s CPU");

    // 5 and 10: the spurious-feature table, twice from independent caches.
    const auto t2cfg = load_into(cdir / "table2_toy.ini", wdir, "cache");
    const auto t2 = run(t2cfg);
    {
      const auto& r = t2.result.reports;
      const std::string set = "spurious_train";
      const double teacher_nat = mean_top1(r, "teacher", "", "natural_test");
      const double clip_train = mean_top1(r, "clip", set, set), mp_train = mean_top1(r, "mp", set, set);
      const double clip_nat = mean_top1(r, "clip", set, "natural_test"), l2_nat = mean_top1(r, "l2_feature", set, "natural_test");
      const double clip_shuf = mean_top1(r, "clip", set, "shuffled_test"), l2_shuf = mean_top1(r, "l2_feature", set, "shuffled_test");
      const double total_cpu = teacher.cpu + t2.cpu;
      const bool a = clip_train >= 0.95 && mp_train >= 0.95;
      const bool b = teacher_nat - clip_nat >= 0.25;
      const bool c = teacher_nat - l2_nat <= 0.10;
      const bool d = l2_shuf - clip_shuf >= 0.15;
      verdict(5, "spurious features", a && b && c && d && total_cpu < 600.0,
              std::string("(a) train clip ") + pct(clip_train) + " mp " + pct(mp_train) + (a ? " ok" : " no") +
                  "; (b) natural teacher " + pct(teacher_nat) + " clip " + pct(clip_nat) + (b ? " ok" : " no") +
                  "; (c) l2 " + pct(l2_nat) + (c ? " ok" : " no") + "; (d) shuffled l2 " + pct(l2_shuf) + " clip " +
                  pct(clip_shuf) + (d ? " ok" : " no") + "; " + fmt(total_cpu) + " s CPU");
    }

    // 6 and 9: domain gap and prompt diversity. 9 is printed after 8.
    double diversity_clip_drop = 0.0, diversity_l2_drop = 0.0;
    const auto t3 = run(load_into(cdir / "table3_toy.ini", wdir, "cache"));
    {
      const auto& r = t3.result.reports;
      const double l2_nat = mean_top1(r, "l2_feature", "synthetic_train", "natural_test");
      const double clip_nat = mean_top1(r, "clip", "synthetic_train", "natural_test");
      const double clip_syn = mean_top1(r, "clip", "synthetic_train", "synthetic_test");
      verdict(6, "cross-domain generalization", l2_nat - clip_nat >= 0.10 && clip_syn >= clip_nat,
              "natural l2 " + pct(l2_nat) + " vs clip " + pct(clip_nat) + " (gap " + pct(l2_nat - clip_nat) +
                  "); clip synthetic " + pct(clip_syn) + " vs natural " + pct(clip_nat));
      const double l2_simple = mean_top1(r, "l2_feature", "simple_train", "natural_test");
      const double clip_simple = mean_top1(r, "clip", "simple_train", "natural_test");
      diversity_clip_drop = clip_nat - clip_simple;
      diversity_l2_drop = l2_nat - l2_simple;
    }

    // 7 and 8: corruption and sketch robustness.
    const auto rb = run(load_into(cdir / "robustness_toy.ini", wdir, "cache"));
    {
      const auto& r = rb.result.reports;
      const std::string set = "synthetic_train";
      const std::string cond = "corruption_mean_s3";
      const double l2_c = mean_top1(r, "l2_feature", set, "natural_test", cond);
      const double clip_c = mean_top1(r, "clip", set, "natural_test", cond);
      verdict(7, "corruption robustness", l2_c >= clip_c,
              "mean top1 over 6 corruptions at severity 3: l2 " + pct(l2_c) + " vs clip " + pct(clip_c));
      const double l2_drop = mean_top1(r, "l2_feature", set, "synthetic_test") - mean_top1(r, "l2_feature", set, "sketch_test");
      const double clip_drop = mean_top1(r, "clip", set, "synthetic_test") - mean_top1(r, "clip", set, "sketch_test");
      verdict(8, "sketch domain shift", clip_drop - l2_drop >= 0.05,
              "clean-to-sketch drop l2 " + pct(l2_drop) + " vs clip " + pct(clip_drop) + " (difference " +
                  pct(clip_drop - l2_drop) + ")");
    }

    {
      const bool clip_ok = diversity_clip_drop >= 0.10, l2_ok = diversity_l2_drop <= 0.05;
      verdict(9, "simple vs diversified prompts", clip_ok && l2_ok,
              "natural drop clip " + fmt(100.0 * diversity_clip_drop, 2) + (clip_ok ? " ok" : " no") +
                  " (need >= 10), l2 " + fmt(100.0 * diversity_l2_drop, 2) + (l2_ok ? " ok" : " no") +
                  " (need <= 5)");
    }

    auto again = load_into(cdir / "table2_toy.ini", wdir, "cache_rerun");
    again.out = (wdir / "table2_toy_rerun").string();
    const auto t2b = run(again);
    const auto first = slurp(t2.csv_path), second = slurp(t2b.csv_path);
    verdict(10, "determinism", !first.empty() && first == second && t2b.result.training_steps() > 0,
            "independent rerun of table2_toy (" + std::to_string(t2b.result.training_steps()) +
                " training steps): reports.csv " + (first == second ? "byte-identical" : "differs") + " (" +
                std::to_string(first.size()) + " bytes)");
  } catch (const std::exception& e) {
    std::cout << "FAIL experiments aborted: " << e.what() << std::endl;
    return 1;
  }
  return failures ? 1 : 0;
}
