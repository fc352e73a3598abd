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

// zsd: command-line driver for the distillation pipeline.
//
//   zsd print-config [--config FILE]
//   zsd run --config FILE [--seed N] [--out DIR] [--stage NAME]
//   zsd train-teacher | pretrain | finetune | eval  --config FILE ...
//   zsd report --config FILE
//   zsd gen-data --config FILE --set NAME [--png FILE]
//   zsd gen-prompts [--class NAME] [--options N] [--strength T]

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "zsd/zsd.hpp"

#ifdef ZSD_HAVE_PNG
#include <png.h>
#endif

namespace {

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::string stage;
};

zsd::ExperimentConfig resolve_config(const CommonFlags& f) {
  zsd::ExperimentConfig cfg = f.config.empty() ? zsd::ExperimentConfig{} : zsd::load_config(f.config);
  if (f.seed_set) cfg.seed = f.seed;
  if (!f.out.empty()) cfg.out = f.out;
  if (!f.stage.empty()) cfg.stages = {f.stage};
  cfg.validate();
  return cfg;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

int run_pipeline(zsd::ExperimentConfig cfg) {
  const auto result = zsd::run_experiment(cfg, log_line);
  std::size_t cached = 0;
  for (const auto& s : result.stages) cached += s.cached;
  std::cerr << "training steps run: " << result.training_steps() << " (" << cached << " of "
            << result.stages.size() << " checkpoints cached)" << std::endl;
  if (!result.gates_passed()) {
    std::cerr << "one or more gates failed" << std::endl;
    return 1;
  }
  return 0;
}

#ifdef ZSD_HAVE_PNG
// libpng reports errors by longjmp, so this keeps no locals live across setjmp.
void write_png_rgb(const std::string& path, const std::vector<unsigned char>& img, std::size_t w, std::size_t h) {
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = const_cast<png_bytep>(img.data() + y * w * 3);
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw zsd::Error("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw zsd::Error("libpng failed writing '" + path + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// Writes up to 64 samples as an 8-column contact sheet.
void write_contact_sheet(const zsd::Dataset& ds, const std::string& path) {
  const std::size_t side = zsd::kImageSide, cols = 8;
  const std::size_t n = std::min<std::size_t>(ds.size(), 64);
  const std::size_t rows = (n + cols - 1) / cols;
  const std::size_t w = cols * (side + 1), h = rows * (side + 1);
  std::vector<unsigned char> img(w * h * 3, 255);
  for (std::size_t i = 0; i < n; ++i) {
    // Class-major datasets: stride through so every class shows up.
    const auto& px = ds.samples[(i * ds.size()) / n].pixels;
    const std::size_t ox = (i % cols) * (side + 1), oy = (i / cols) * (side + 1);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          const float v = px[(y * side + x) * 3 + c];
          img[((oy + y) * w + ox + x) * 3 + c] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255));
        }
      }
    }
  }
  write_png_rgb(path, img, w, h);
}
#endif

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot distillation of small image encoders on a procedural toy world"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonFlags flags;
  app.add_option("--config", flags.config, "Experiment config file (INI)");
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { flags.seed = s, flags.seed_set = true; }, "Override the global seed");
  app.add_option("--out", flags.out, "Override the output directory");
  app.add_option("--stage", flags.stage, "Run only this stage (teacher, pretrain, finetune, eval)");

  auto* print_cfg = app.add_subcommand("print-config", "Print the effective configuration with all defaults");
  auto* run = app.add_subcommand("run", "Run the configured stages and write reports");
  auto* teacher = app.add_subcommand("train-teacher", "Train (or load) the teacher and check its gates");
  auto* pretrain = app.add_subcommand("pretrain", "Feature pre-training of the student");
  auto* finetune = app.add_subcommand("finetune", "Fine-tune students for every configured set, tag and seed");
  auto* eval = app.add_subcommand("eval", "Evaluate cached checkpoints and write reports");
  auto* report = app.add_subcommand("report", "Rebuild matrix reports from reports/reports.csv");

  auto* gen_data = app.add_subcommand("gen-data", "Render a configured dataset to CSV + raw float32");
  std::string set_name, png_path;
  gen_data->add_option("--set", set_name, "Dataset name ([set.NAME] section)")->required();
  gen_data->add_option("--png", png_path, "Also write a contact sheet PNG");

  auto* gen_prompts = app.add_subcommand("gen-prompts", "Covering-array prompt diversification for one class");
  std::string class_name = "circle", superclass = "round shape";
  std::size_t options = 15, strength = 2;
  std::uint64_t prompt_seed = 0;
  gen_prompts->add_option("--class", class_name, "Class name");
  gen_prompts->add_option("--superclass", superclass, "Superclass name");
  gen_prompts->add_option("--options", options, "Options per contextual dimension (2..30)");
  gen_prompts->add_option("--strength", strength, "Covering strength t");
  gen_prompts->add_option("--prompt-seed", prompt_seed, "Covering array seed");

  CLI11_PARSE(app, argc, argv);

  try {
    auto stage_only = [&](const char* stage) {
      auto cfg = resolve_config(flags);
      cfg.stages = {stage};
      return run_pipeline(cfg);
    };
    if (*print_cfg) {
      std::cout << zsd::to_ini(resolve_config(flags));
      return 0;
    }
    if (*run) return run_pipeline(resolve_config(flags));
    if (*teacher) return stage_only("teacher");
    if (*pretrain) return stage_only("pretrain");
    if (*finetune) return stage_only("finetune");
    if (*eval) return stage_only("eval");
    if (*report) {
      zsd::regenerate_reports(resolve_config(flags), log_line);
      return 0;
    }
    if (*gen_data) {
      const auto cfg = resolve_config(flags);
      const auto ds = zsd::make_dataset(cfg.dataset_spec(set_name));
      std::filesystem::create_directories(cfg.out + "/data");
      const auto stem = cfg.out + "/data/" + set_name;
      zsd::export_dataset(ds, stem);
      std::cerr << "wrote " << stem << ".csv and " << stem << ".bin (" << ds.size() << " samples)" << std::endl;
      if (!png_path.empty()) {
#ifdef ZSD_HAVE_PNG
        write_contact_sheet(ds, png_path);
        std::cerr << "wrote " << png_path << std::endl;
#else
        std::cerr << "PNG export unavailable: built without libpng" << std::endl;
        return 2;
#endif
      }
      return 0;
    }
    if (*gen_prompts) {
      const auto dims = zsd::builtin_dimensions(options);
      const auto ca = zsd::build_covering_array(dims.size(), options, strength, prompt_seed);
      const auto cov = zsd::coverage_of(ca);
      std::cerr << ca.rows.size() << " rows, " << cov.covered << "/" << cov.total << " " << strength
                << "-tuples covered" << std::endl;
      for (const auto& line : zsd::assemble_prompts(class_name, 1.0, superclass, 1.0, dims, ca).lines) {
        std::cout << line << "\n";
      }
      return 0;
    }
  } catch (const zsd::Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
