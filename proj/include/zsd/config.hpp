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

// Experiment configuration: an INI-style text format plus the typed
// ExperimentConfig it maps onto.
//
//   # comment
//   [section]
//   key = value
//
// Dataset sections are named "set.<name>" and referenced by name from the
// [finetune] and [eval] sections.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "zsd/common.hpp"
#include "zsd/models.hpp"
#include "zsd/world.hpp"

namespace zsd {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct IniEntry {
  std::string value;
  std::size_t line = 0;
};

// Sections in file order; keys in file order within each section.
struct IniFile {
  struct Section {
    std::string name;
    std::size_t line = 0;
    std::vector<std::pair<std::string, IniEntry>> entries;
  };
  std::vector<Section> sections;

  const Section* find(const std::string& name) const {
    for (const auto& s : sections) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }
};

inline IniFile parse_ini(const std::string& text, const std::string& origin = "config") {
  IniFile ini;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (const auto hash = line.find_first_of("#;"); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header '" + std::string(line) + "'");
      const auto name = std::string(trim(line.substr(1, line.size() - 2)));
      if (name.empty()) fail("empty section name");
      if (ini.find(name)) fail("duplicate section [" + name + "]");
      ini.sections.push_back({name, lineno, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected 'key = value', got '" + std::string(line) + "'");
    const auto key = std::string(trim(line.substr(0, eq)));
    const auto value = std::string(trim(line.substr(eq + 1)));
    if (key.empty()) fail("missing key before '='");
    if (ini.sections.empty()) fail("key '" + key + "' outside of any section");
    auto& sec = ini.sections.back();
    for (const auto& [k, _] : sec.entries) {
      if (k == key) fail("duplicate key '" + key + "' in [" + sec.name + "]");
    }
    sec.entries.push_back({key, {value, lineno}});
  }
  return ini;
}

// One named dataset.
struct SetConfig {
  Domain domain = Domain::kSynthetic;
  std::size_t per_class = 64;
  Diversity diversity = Diversity::kDiversified;
  SpuriousKind spurious = SpuriousKind::kNone;
  bool shuffled = false;
  std::uint64_t seed = 0;  // 0: derived from the global seed and the set name
};

struct StageOptimizer {
  std::size_t steps = 0;
  std::size_t batch = 64;
  double lr = 5e-4;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.01;
  bool crop = true;
};

struct ExperimentConfig {
  std::string name = "default";
  std::uint64_t seed = 7;
  std::size_t seeds = 3;  // fine-tune repetitions per (set, tag)
  std::string out = "runs/default";
  std::string cache;  // checkpoint directory; empty means <out>/checkpoints
  std::vector<std::string> stages = {"teacher", "pretrain", "finetune", "eval"};
  std::size_t log_every = 0;

  // [world]
  std::size_t classes = 8;
  std::size_t options_per_dimension = 8;
  RenderStyle style;

  // [teacher]
  Arch teacher_arch = Arch::kMlpLarge;
  StageOptimizer teacher_opt{2000, 64, 1e-3, 0.98, 1e-6, 0.01, true};
  std::size_t teacher_natural = 512, teacher_synthetic = 256, teacher_sketch = 512;
  std::size_t teacher_gate_per_class = 64;
  double teacher_floor = 0.90;
  double teacher_probe_floor = 0.95;
  bool teacher_probe = true;

  // [pretrain]
  Arch student_arch = Arch::kMlpSmall;
  StageOptimizer pretrain_opt{4000, 64, 1e-3, 0.999, 1e-8, 0.01, false};
  std::size_t pretrain_natural = 4, pretrain_synthetic = 256, pretrain_sketch = 256;
  std::size_t pretrain_heldout = 32;
  double pretrain_min_reduction = 0.5;
  double pretrain_min_cosine = 0.8;

  // [finetune]
  std::vector<std::string> finetune_sets = {"synthetic_train"};
  std::vector<std::string> tags = {"l2_feature", "clip", "mp"};
  double lambda = 1.0;
  double inverse_tau = 14.3;
  double kd_softening = 4.0;
  StageOptimizer finetune_opt{1000, 64, 5e-4, 0.98, 1e-6, 0.01, true};

  // [eval]
  std::vector<std::string> testsets = {"natural_test", "synthetic_test"};
  bool eval_train = true;  // also score each student on its own fine-tune set
  std::vector<CorruptionKind> corruptions;
  std::vector<std::string> corruption_sets;
  int corruption_severity = 3;
  bool probe = false;

  // [report]
  // Matrix rows "finetune_set:testset"; testset "train" is the fine-tune set.
  std::vector<std::string> matrix;

  std::map<std::string, SetConfig> sets = default_sets();

  static std::map<std::string, SetConfig> default_sets() {
    std::map<std::string, SetConfig> s;
    s["synthetic_train"] = {Domain::kSynthetic, 128, Diversity::kDiversified, SpuriousKind::kNone, false, 0};
    s["natural_test"] = {Domain::kNatural, 64, Diversity::kDiversified, SpuriousKind::kNone, false, 0};
    s["synthetic_test"] = {Domain::kSynthetic, 64, Diversity::kDiversified, SpuriousKind::kNone, false, 0};
    return s;
  }

  std::string checkpoint_dir() const { return cache.empty() ? out + "/checkpoints" : cache; }

  // Dataset spec for a named set, seeded from the global seed unless pinned.
  DatasetSpec dataset_spec(const std::string& set_name) const;
  // Clean train/test pools that are not named sets (teacher, pre-training).
  DatasetSpec pool_spec(const std::string& tag, Domain domain, std::size_t per_class) const;

  void validate() const;
};

namespace detail {

// Shortest text that parses back to the same value.
template <typename T>
std::string fmt_real(T v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i];
  return out;
}

inline double parse_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

inline std::uint64_t parse_uint(const std::string& s) {
  if (s.empty() || s.front() == '-') throw std::invalid_argument("not a non-negative integer");
  std::size_t pos = 0;
  const auto v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

inline bool parse_bool(const std::string& s) {
  const auto l = to_lower(s);
  if (l == "true" || l == "yes" || l == "on" || l == "1") return true;
  if (l == "false" || l == "no" || l == "off" || l == "0") return false;
  throw std::invalid_argument("not a boolean");
}

// A typed view of one config key: how to read it from text and print it.
struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

inline Field f_size(std::string key, std::size_t& ref) {
  return {std::move(key), [&ref](const std::string& s) { ref = static_cast<std::size_t>(parse_uint(s)); },
          [&ref] { return std::to_string(ref); }};
}
inline Field f_u64(std::string key, std::uint64_t& ref) {
  return {std::move(key), [&ref](const std::string& s) { ref = parse_uint(s); },
          [&ref] { return std::to_string(ref); }};
}
inline Field f_int(std::string key, int& ref) {
  return {std::move(key), [&ref](const std::string& s) { ref = static_cast<int>(parse_uint(s)); },
          [&ref] { return std::to_string(ref); }};
}
inline Field f_double(std::string key, double& ref) {
  return {std::move(key), [&ref](const std::string& s) { ref = parse_double(s); },
          [&ref] { return fmt_real(ref); }};
}
inline Field f_float(std::string key, float& ref) {
  return {std::move(key), [&ref](const std::string& s) { ref = static_cast<float>(parse_double(s)); },
          [&ref] { return fmt_real(ref); }};
}
inline Field f_bool(std::string key, bool& ref) {
  return {std::move(key), [&ref](const std::string& s) { ref = parse_bool(s); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}
inline Field f_string(std::string key, std::string& ref) {
  return {std::move(key), [&ref](const std::string& s) { ref = s; }, [&ref] { return ref; }};
}
inline Field f_list(std::string key, std::vector<std::string>& ref) {
  return {std::move(key), [&ref](const std::string& s) { ref = split_list(s); }, [&ref] { return join(ref); }};
}
inline Field f_arch(std::string key, Arch& ref) {
  return {std::move(key), [&ref](const std::string& s) { ref = parse_arch(s); },
          [&ref] { return std::string(arch_name(ref)); }};
}

inline std::vector<Field> optimizer_fields(StageOptimizer& o) {
  return {f_size("steps", o.steps),   f_size("batch", o.batch),   f_double("lr", o.lr),
          f_double("beta2", o.beta2), f_double("eps", o.eps),     f_double("weight_decay", o.weight_decay),
          f_bool("crop", o.crop)};
}

inline std::vector<Field> set_fields(SetConfig& s) {
  return {
      {"domain", [&s](const std::string& v) { s.domain = parse_domain(v); },
       [&s] { return std::string(domain_name(s.domain)); }},
      f_size("per_class", s.per_class),
      {"diversity", [&s](const std::string& v) { s.diversity = parse_diversity(v); },
       [&s] { return std::string(diversity_name(s.diversity)); }},
      {"spurious", [&s](const std::string& v) { s.spurious = parse_spurious_kind(v); },
       [&s] { return std::string(spurious_kind_name(s.spurious)); }},
      f_bool("shuffled", s.shuffled),
      f_u64("seed", s.seed),
  };
}

// Fixed sections in print order.
inline std::vector<std::pair<std::string, std::vector<Field>>> config_fields(ExperimentConfig& c) {
  std::vector<std::pair<std::string, std::vector<Field>>> out;
  out.push_back({"experiment",
                 {f_string("name", c.name), f_u64("seed", c.seed), f_size("seeds", c.seeds), f_string("out", c.out),
                  f_string("cache", c.cache), f_list("stages", c.stages), f_size("log_every", c.log_every)}});
  auto& st = c.style;
  out.push_back({"world",
                 {f_size("classes", c.classes), f_size("options_per_dimension", c.options_per_dimension),
                  f_float("natural_color_shift_min", st.natural_color_shift_min),
                  f_float("natural_color_shift_max", st.natural_color_shift_max),
                  f_float("natural_shading", st.natural_shading), f_float("natural_cast_min", st.natural_cast_min),
                  f_float("natural_cast_max", st.natural_cast_max),
                  f_float("natural_pixel_noise", st.natural_pixel_noise),
                  f_float("natural_brightness_min", st.natural_brightness_min),
                  f_float("natural_brightness_max", st.natural_brightness_max), f_float("scale_min", st.scale_min),
                  f_float("scale_max", st.scale_max), f_float("natural_max_offset", st.natural_max_offset),
                  f_float("rotation_max", st.rotation_max)}});
  std::vector<Field> teacher = {f_arch("arch", c.teacher_arch)};
  for (auto& f : optimizer_fields(c.teacher_opt)) teacher.push_back(std::move(f));
  for (auto& f : std::vector<Field>{f_size("natural_per_class", c.teacher_natural),
                                    f_size("synthetic_per_class", c.teacher_synthetic),
                                    f_size("sketch_per_class", c.teacher_sketch),
                                    f_size("gate_per_class", c.teacher_gate_per_class),
                                    f_double("min_top1", c.teacher_floor), f_bool("probe", c.teacher_probe),
                                    f_double("min_probe_top1", c.teacher_probe_floor)}) {
    teacher.push_back(std::move(f));
  }
  out.push_back({"teacher", std::move(teacher)});
  std::vector<Field> pre = {f_arch("arch", c.student_arch)};
  for (auto& f : optimizer_fields(c.pretrain_opt)) pre.push_back(std::move(f));
  for (auto& f : std::vector<Field>{f_size("natural_per_class", c.pretrain_natural),
                                    f_size("synthetic_per_class", c.pretrain_synthetic),
                                    f_size("sketch_per_class", c.pretrain_sketch),
                                    f_size("heldout_per_class", c.pretrain_heldout),
                                    f_double("min_loss_reduction", c.pretrain_min_reduction),
                                    f_double("min_cosine", c.pretrain_min_cosine)}) {
    pre.push_back(std::move(f));
  }
  out.push_back({"pretrain", std::move(pre)});
  std::vector<Field> ft = {f_list("sets", c.finetune_sets), f_list("tags", c.tags), f_double("lambda", c.lambda),
                           f_double("inverse_tau", c.inverse_tau), f_double("kd_softening", c.kd_softening)};
  for (auto& f : optimizer_fields(c.finetune_opt)) ft.push_back(std::move(f));
  out.push_back({"finetune", std::move(ft)});
  out.push_back({"eval",
                 {f_list("testsets", c.testsets), f_bool("train", c.eval_train),
                  {"corruptions",
                   [&c](const std::string& v) {
                     c.corruptions.clear();
                     for (const auto& k : split_list(v)) {
                       if (k == "all") {
                         c.corruptions = all_corruptions();
                         break;
                       }
                       c.corruptions.push_back(parse_corruption(k));
                     }
                   },
                   [&c] {
                     std::vector<std::string> names;
                     for (auto k : c.corruptions) names.emplace_back(corruption_name(k));
                     return join(names);
                   }},
                  f_list("corruption_sets", c.corruption_sets), f_int("corruption_severity", c.corruption_severity),
                  f_bool("probe", c.probe)}});
  out.push_back({"report", {f_list("matrix", c.matrix)}});
  return out;
}

}  // namespace detail

inline DatasetSpec ExperimentConfig::dataset_spec(const std::string& set_name) const {
  const auto it = sets.find(set_name);
  if (it == sets.end()) throw ConfigError("unknown dataset '" + set_name + "' (no [set." + set_name + "] section)");
  const auto& s = it->second;
  DatasetSpec spec;
  spec.name = set_name;
  spec.classes = default_classes();
  spec.classes.resize(classes);
  spec.domain = s.domain;
  spec.per_class = s.per_class;
  spec.diversity = s.diversity;
  spec.spurious = s.spurious;
  spec.shuffled_spurious = s.shuffled;
  spec.split_seed = s.seed ? s.seed : seed_of(seed, fnv1a("set." + set_name));
  spec.options_per_dimension = options_per_dimension;
  spec.style = style;
  return spec;
}

inline DatasetSpec ExperimentConfig::pool_spec(const std::string& tag, Domain domain, std::size_t per_class) const {
  DatasetSpec spec;
  spec.name = tag;
  spec.classes = default_classes();
  spec.classes.resize(classes);
  spec.domain = domain;
  spec.per_class = per_class;
  spec.split_seed = seed_of(seed, fnv1a("pool." + tag));
  spec.options_per_dimension = options_per_dimension;
  spec.style = style;
  return spec;
}

inline void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(classes >= 2 && classes <= default_classes().size(),
          "world.classes must be in [2, " + std::to_string(default_classes().size()) + "]");
  require(options_per_dimension >= 2, "world.options_per_dimension must be >= 2");
  require(seeds >= 1, "experiment.seeds must be >= 1");
  static const std::vector<std::string> kStages = {"teacher", "pretrain", "finetune", "eval"};
  for (const auto& s : stages) {
    require(std::find(kStages.begin(), kStages.end(), s) != kStages.end(), "experiment.stages: unknown stage '" + s + "'");
  }
  for (const auto* opt : {&teacher_opt, &pretrain_opt, &finetune_opt}) {
    require(opt->batch >= 1, "batch must be >= 1");
    require(opt->lr > 0.0, "lr must be > 0");
  }
  auto known_set = [&](const std::string& n, const std::string& where) {
    require(sets.count(n) > 0, where + ": unknown dataset '" + n + "' (no [set." + n + "] section)");
  };
  for (const auto& n : finetune_sets) known_set(n, "finetune.sets");
  for (const auto& n : testsets) known_set(n, "eval.testsets");
  for (const auto& n : corruption_sets) known_set(n, "eval.corruption_sets");
  for (const auto& [n, s] : sets) require(s.per_class >= 1, "set." + n + ".per_class must be >= 1");
  for (const auto& row : matrix) {
    const auto parts = split_list(row, ':');
    require(parts.size() == 2, "report.matrix: row '" + row + "' must be 'finetune_set:testset'");
    known_set(parts[0], "report.matrix");
    if (parts[1] != "train") known_set(parts[1], "report.matrix");
  }
  require(lambda >= 0.0, "finetune.lambda must be >= 0");
  require(corruption_severity >= 0 && corruption_severity <= 5, "eval.corruption_severity must be in [0, 5]");
}

// Applies an INI document on top of `base`. Unknown sections or keys and
// malformed values raise ConfigError naming the key and line.
inline ExperimentConfig apply_ini(const IniFile& ini, ExperimentConfig base = {}, const std::string& origin = "config") {
  auto fields = detail::config_fields(base);
  for (const auto& sec : ini.sections) {
    const auto where = [&](std::size_t line) { return origin + ":" + std::to_string(line) + ": "; };
    std::vector<detail::Field> set_fields;
    std::vector<detail::Field>* target = nullptr;
    if (sec.name.rfind("set.", 0) == 0) {
      const auto name = sec.name.substr(4);
      if (name.empty()) throw ConfigError(where(sec.line) + "empty dataset name in [" + sec.name + "]");
      set_fields = detail::set_fields(base.sets[name]);
      target = &set_fields;
    } else {
      for (auto& [n, f] : fields) {
        if (n == sec.name) target = &f;
      }
      if (!target) throw ConfigError(where(sec.line) + "unknown section [" + sec.name + "]");
    }
    for (const auto& [key, e] : sec.entries) {
      detail::Field* field = nullptr;
      for (auto& f : *target) {
        if (f.key == key) field = &f;
      }
      if (!field) throw ConfigError(where(e.line) + "unknown key '" + key + "' in [" + sec.name + "]");
      try {
        field->set(e.value);
      } catch (const std::exception& ex) {
        throw ConfigError(where(e.line) + "bad value '" + e.value + "' for key '" + sec.name + "." + key +
                          "': " + ex.what());
      }
    }
  }
  return base;
}

inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config") {
  auto cfg = apply_ini(parse_ini(text, origin), {}, origin);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path);
}

// Full configuration in INI form; parse_config(to_ini(c)) reproduces c.
inline std::string to_ini(const ExperimentConfig& cfg) {
  auto copy = cfg;
  std::ostringstream os;
  bool first = true;
  for (auto& [section, fields] : detail::config_fields(copy)) {
    os << (first ? "" : "\n") << "[" << section << "]\n";
    first = false;
    for (auto& f : fields) os << f.key << " = " << f.get() << "\n";
  }
  for (auto& [name, set] : copy.sets) {
    os << "\n[set." << name << "]\n";
    for (auto& f : detail::set_fields(set)) os << f.key << " = " << f.get() << "\n";
  }
  return os.str();
}

// One section as "key = value" lines, skipping keys that start with any of
// `skip`. Used for cache keys.
inline std::string section_ini(const ExperimentConfig& cfg, const std::string& section,
                               const std::vector<std::string>& skip = {}) {
  auto copy = cfg;
  std::vector<detail::Field> fields;
  if (section.rfind("set.", 0) == 0) {
    auto it = copy.sets.find(section.substr(4));
    if (it == copy.sets.end()) throw ConfigError("unknown section [" + section + "]");
    fields = detail::set_fields(it->second);
  } else {
    for (auto& [n, f] : detail::config_fields(copy)) {
      if (n == section) fields = std::move(f);
    }
  }
  std::string out = "[" + section + "]\n";
  for (auto& f : fields) {
    bool skipped = false;
    for (const auto& p : skip) skipped = skipped || f.key.rfind(p, 0) == 0;
    if (!skipped) out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

}  // namespace zsd
