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

// Procedural 24x24 RGB shapes world.
//
// Every image shows one class glyph. The Synthetic domain draws it flat and
// crisp in the class base color on a flat background whose nuisances come from
// covering-array rows over the builtin contextual dimensions. The Natural
// domain draws it anti-aliased with shifted, shaded color on a value-noise
// texture with pixel noise. Sketch is the binarized edge map of a Synthetic
// render. Pixels are stored HWC, row-major, in [0, 1].

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "zsd/common.hpp"
#include "zsd/models.hpp"
#include "zsd/prompts.hpp"
#include "zsd/tensor.hpp"

namespace zsd {

inline constexpr std::size_t kSide = kImageSide;
inline constexpr std::size_t kNumPixels = kSide * kSide;

struct Rgb {
  float r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline double rgb_distance(const Rgb& a, const Rgb& b) {
  const double dr = a.r - b.r, dg = a.g - b.g, db = a.b - b.b;
  return std::sqrt(dr * dr + dg * dg + db * db);
}

// The 8 corners of the RGB cube, shared by glyphs and spurious features.
inline const std::array<Rgb, 8>& palette() {
  static const std::array<Rgb, 8> p = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0},
                                        {1, 0, 1}, {0, 1, 1}, {1, 1, 1}, {0, 0, 0}}};
  return p;
}

enum class Domain { kNatural, kSynthetic, kSketch };
enum class Glyph { kCircle, kSquare, kTriangle, kCross, kRing, kBar, kDiamond, kStar };
enum class Diversity { kSimple, kDiversified };
enum class SpuriousKind { kNone, kMarker, kBackground };
enum class CorruptionKind { kGaussianNoise, kShotNoise, kGaussianBlur, kBrightness, kContrast, kPixelate };

inline const char* domain_name(Domain d) {
  switch (d) {
    case Domain::kNatural: return "natural";
    case Domain::kSynthetic: return "synthetic";
    case Domain::kSketch: return "sketch";
  }
  return "?";
}

inline Domain parse_domain(const std::string& s) {
  for (auto d : {Domain::kNatural, Domain::kSynthetic, Domain::kSketch}) {
    if (s == domain_name(d)) return d;
  }
  throw Error("unknown domain '" + s + "'");
}

inline const char* glyph_name(Glyph g) {
  static const char* names[] = {"circle", "square", "triangle", "cross", "ring", "bar", "diamond", "star"};
  return names[static_cast<int>(g)];
}

inline const char* diversity_name(Diversity d) { return d == Diversity::kSimple ? "simple" : "diversified"; }

inline Diversity parse_diversity(const std::string& s) {
  if (s == "simple") return Diversity::kSimple;
  if (s == "diversified") return Diversity::kDiversified;
  throw Error("unknown diversity '" + s + "'");
}

inline const char* spurious_kind_name(SpuriousKind k) {
  switch (k) {
    case SpuriousKind::kNone: return "none";
    case SpuriousKind::kMarker: return "marker";
    case SpuriousKind::kBackground: return "background";
  }
  return "?";
}

inline SpuriousKind parse_spurious_kind(const std::string& s) {
  for (auto k : {SpuriousKind::kNone, SpuriousKind::kMarker, SpuriousKind::kBackground}) {
    if (s == spurious_kind_name(k)) return k;
  }
  throw Error("unknown spurious mode '" + s + "'");
}

inline const char* corruption_name(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::kGaussianNoise: return "gaussian_noise";
    case CorruptionKind::kShotNoise: return "shot_noise";
    case CorruptionKind::kGaussianBlur: return "gaussian_blur";
    case CorruptionKind::kBrightness: return "brightness";
    case CorruptionKind::kContrast: return "contrast";
    case CorruptionKind::kPixelate: return "pixelate";
  }
  return "?";
}

inline const std::vector<CorruptionKind>& all_corruptions() {
  static const std::vector<CorruptionKind> v = {CorruptionKind::kGaussianNoise, CorruptionKind::kShotNoise,
                                                CorruptionKind::kGaussianBlur,  CorruptionKind::kBrightness,
                                                CorruptionKind::kContrast,      CorruptionKind::kPixelate};
  return v;
}

inline CorruptionKind parse_corruption(const std::string& s) {
  for (auto k : all_corruptions()) {
    if (s == corruption_name(k)) return k;
  }
  throw Error("unknown corruption kind '" + s + "'");
}

struct ClassInfo {
  std::string name;
  std::string superclass;
  Glyph glyph = Glyph::kCircle;
  Rgb base_color;
};

// The 8 glyph classes. Class k is drawn in palette[(k + 3) % 8], so a
// Background(c) or Marker(c) feature with c in {k, k + 1} never matches the
// glyph color.
inline std::vector<ClassInfo> default_classes() {
  static const char* supers[] = {"round shape", "polygon", "polygon", "line figure",
                                 "round shape", "line figure", "polygon", "polygon"};
  std::vector<ClassInfo> out;
  for (int k = 0; k < 8; ++k) {
    const auto g = static_cast<Glyph>(k);
    out.push_back({glyph_name(g), supers[k], g, palette()[(k + 3) % 8]});
  }
  return out;
}

struct SpuriousTag {
  SpuriousKind kind = SpuriousKind::kNone;
  std::size_t class_id = 0;

  std::string str() const {
    if (kind == SpuriousKind::kNone) return "none";
    return std::string(spurious_kind_name(kind)) + ":" + std::to_string(class_id);
  }
};

struct Corruption {
  CorruptionKind kind = CorruptionKind::kGaussianNoise;
  int severity = 0;
};

// Continuous nuisance record. `options` holds the contextual-dimension option
// indices of the covering-array row used, or -1 when not row-driven.
struct Nuisance {
  float cx = 12, cy = 12;  // glyph center in pixels
  float scale = 7;         // glyph radius in pixels
  float rotation = 0;      // radians
  float brightness = 1;
  Rgb background{0.5f, 0.5f, 0.5f};
  Rgb background_alt{0.5f, 0.5f, 0.5f};
  std::uint64_t background_seed = 0;
  std::array<int, 4> options{-1, -1, -1, -1};
};

struct ImageSample {
  std::vector<float> pixels;               // kNumPixels * 3, HWC
  std::vector<std::uint8_t> foreground;    // kNumPixels, 1 where the glyph covers >= half the pixel
  std::size_t class_id = 0;
  Domain domain = Domain::kSynthetic;
  SpuriousTag spurious;
  Nuisance nuisance;
  std::uint64_t sample_seed = 0;
  std::optional<Corruption> corruption;

  float& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * kSide + x) * 3 + c]; }
  float at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * kSide + x) * 3 + c]; }
  Rgb rgb(std::size_t x, std::size_t y) const { return {at(x, y, 0), at(x, y, 1), at(x, y, 2)}; }
};

// Tunable look of the two domains.
struct RenderStyle {
  float natural_color_shift_min = 0.0f;   // blend of the glyph color toward a random color
  float natural_color_shift_max = 0.3f;
  float natural_shading = 0.2f;
  Rgb natural_cast{1.0f, 0.7f, 0.3f};  // lighting color multiplied into the whole scene
  float natural_cast_min = 0.8f, natural_cast_max = 1.0f;
  float natural_pixel_noise = 0.04f;
  float natural_brightness_min = 0.7f;
  float natural_brightness_max = 1.15f;
  float scale_min = 5.0f, scale_max = 8.5f;
  float natural_max_offset = 6.5f;  // glyph center offset from the image center, pixels
  float rotation_max = 0.35f;
};

struct DatasetSpec {
  std::string name = "dataset";
  std::vector<ClassInfo> classes = default_classes();
  Domain domain = Domain::kSynthetic;
  std::size_t per_class = 64;
  Diversity diversity = Diversity::kDiversified;
  SpuriousKind spurious = SpuriousKind::kNone;
  bool shuffled_spurious = false;  // feature class = (label + 1) mod M instead of label
  std::optional<Corruption> corruption;
  std::uint64_t split_seed = 0;
  std::size_t options_per_dimension = 8;
  RenderStyle style;

  void validate() const {
    if (classes.empty()) throw Error("dataset '" + name + "': no classes");
    if (per_class < 1) throw Error("dataset '" + name + "': size per class must be >= 1");
    if (options_per_dimension < 2) throw Error("dataset '" + name + "': need >= 2 options per dimension");
    if (corruption && (corruption->severity < 0 || corruption->severity > 5)) {
      throw Error("dataset '" + name + "': corruption severity must be in 0..5");
    }
  }
};

namespace detail {

inline float smoothstep(float t) { return t * t * (3.0f - 2.0f * t); }

// Two-octave value noise in [0, 1] over the 24x24 grid.
inline std::vector<float> value_noise(std::uint64_t seed) {
  std::vector<float> out(kNumPixels, 0.0f);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const std::pair<std::size_t, float> octaves[] = {{6, 0.65f}, {3, 0.35f}};
  for (auto [cell, amp] : octaves) {
    const std::size_t n = kSide / cell + 1;
    std::vector<float> lattice(n * n);
    for (auto& v : lattice) v = u(rng);
    for (std::size_t y = 0; y < kSide; ++y) {
      for (std::size_t x = 0; x < kSide; ++x) {
        const float fx = static_cast<float>(x) / cell, fy = static_cast<float>(y) / cell;
        const auto ix = std::min<std::size_t>(static_cast<std::size_t>(fx), n - 2);
        const auto iy = std::min<std::size_t>(static_cast<std::size_t>(fy), n - 2);
        const float tx = smoothstep(fx - ix), ty = smoothstep(fy - iy);
        const float a = lattice[iy * n + ix], b = lattice[iy * n + ix + 1];
        const float c = lattice[(iy + 1) * n + ix], d = lattice[(iy + 1) * n + ix + 1];
        out[y * kSide + x] += amp * ((a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty);
      }
    }
  }
  return out;
}

// Flat background bank for the Synthetic domain; every entry is at least 0.5
// from each palette color.
inline const std::array<Rgb, 16>& background_bank() {
  static const std::array<Rgb, 16> bank = [] {
    std::array<Rgb, 16> b{};
    for (int i = 0; i < 16; ++i) {
      const float h = static_cast<float>(i) / 16.0f * 6.0f;
      const float s = i % 2 ? 0.45f : 0.65f;
      const float v = i % 4 < 2 ? 0.55f : 0.75f;
      const int sector = static_cast<int>(h) % 6;
      const float f = h - std::floor(h);
      const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
      const Rgb table[] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
      b[i] = table[sector];
    }
    return b;
  }();
  return bank;
}

// Shared covering array that drives diversified Synthetic nuisances.
inline std::shared_ptr<const CoveringArray> diversity_array(std::size_t options) {
  static std::mutex mu;
  static std::map<std::size_t, std::shared_ptr<const CoveringArray>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[options];
  if (!slot) slot = std::make_shared<const CoveringArray>(build_covering_array(4, options, 2, 0x5eed));
  return slot;
}

inline bool glyph_inside(Glyph g, float u, float v) {
  const float au = std::abs(u), av = std::abs(v);
  switch (g) {
    case Glyph::kCircle: return u * u + v * v <= 0.85f * 0.85f;
    case Glyph::kSquare: return au <= 0.72f && av <= 0.72f;
    case Glyph::kTriangle: return v >= -0.6f && v <= 0.9f - 1.732f * au;
    case Glyph::kCross: return (au <= 0.28f && av <= 0.9f) || (av <= 0.28f && au <= 0.9f);
    case Glyph::kRing: {
      const float r2 = u * u + v * v;
      return r2 >= 0.5f * 0.5f && r2 <= 0.92f * 0.92f;
    }
    case Glyph::kBar: return au <= 0.95f && av <= 0.3f;
    case Glyph::kDiamond: return au + av <= 0.95f;
    case Glyph::kStar: {
      const float r = std::sqrt(u * u + v * v);
      const float kPi = 3.14159265f;
      // Angle from the upward tip, folded into one 72-degree sector.
      float a = std::atan2(u, v);
      a = std::fmod(a + 2 * kPi, 2 * kPi / 5);
      const float tri = std::abs(a - kPi / 5) / (kPi / 5);  // 1 at tips, 0 between
      return r <= 0.42f + 0.56f * tri;
    }
  }
  return false;
}

// A point well inside each glyph, in glyph units.
inline std::pair<float, float> glyph_anchor_local(Glyph g) {
  return g == Glyph::kRing ? std::pair{0.71f, 0.0f} : std::pair{0.0f, 0.0f};
}

inline void to_local(const Nuisance& nu, float px, float py, float& u, float& v) {
  const float dx = (px - nu.cx) / nu.scale, dy = (nu.cy - py) / nu.scale;
  const float c = std::cos(nu.rotation), s = std::sin(nu.rotation);
  u = c * dx + s * dy;
  v = -s * dx + c * dy;
}

inline float clamp01(float x) { return x < 0.0f ? 0.0f : (x > 1.0f ? 1.0f : x); }

inline Rgb lerp(const Rgb& a, const Rgb& b, float t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

inline void clamp_center(Nuisance& nu) {
  const float lo = nu.scale + 0.5f, hi = static_cast<float>(kSide) - nu.scale - 0.5f;
  nu.cx = std::clamp(nu.cx, lo, hi);
  nu.cy = std::clamp(nu.cy, lo, hi);
}

// Nuisance of a synthetic image from one option per contextual dimension.
// Without `rng` every value sits at the center of its option.
inline void synthetic_nuisance(Nuisance& nu, const DatasetSpec& spec, const std::array<int, 4>& options,
                               std::mt19937_64* rng) {
  std::uniform_real_distribution<float> u01(0.0f, 1.0f);
  auto uni = [&](float lo, float hi) { return rng ? lo + (hi - lo) * u01(*rng) : 0.5f * (lo + hi); };
  const auto& st = spec.style;
  const float v = static_cast<float>(spec.options_per_dimension);
  nu.options = options;
  const auto j = [&](int d) { return static_cast<float>(options[static_cast<std::size_t>(d)]); };

  const auto& bank = background_bank();
  const auto b = bank[static_cast<std::size_t>(j(0) * 16.0f / v) % bank.size()];
  const float jit = 0.05f;
  nu.background = {clamp01(b.r + uni(-jit, jit)), clamp01(b.g + uni(-jit, jit)), clamp01(b.b + uni(-jit, jit))};
  nu.background_alt = nu.background;

  const float angle = (j(3) + uni(-0.4f, 0.4f)) / (v - 1.0f);  // camera angle in [0, 1]
  nu.scale = st.scale_min + (st.scale_max - st.scale_min) * std::fmod(angle * 2.3f + 0.15f, 1.0f);
  nu.rotation = st.rotation_max * (2.0f * angle - 1.0f);

  const auto pos = options[1];
  const float gx = static_cast<float>(pos % 3) - 1.0f, gy = static_cast<float>((pos / 3) % 3) - 1.0f;
  nu.cx = 12.0f + 4.0f * gx + uni(-1.5f, 1.5f);
  nu.cy = 12.0f + 4.0f * gy + uni(-1.5f, 1.5f);
  clamp_center(nu);

  nu.brightness = 0.7f + 0.4f * (j(2) + uni(-0.3f, 0.3f)) / (v - 1.0f);
}

inline Nuisance sample_nuisance(const DatasetSpec& spec, std::size_t class_id, Domain draw,
                                std::uint64_t sample_seed, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u01(0.0f, 1.0f);
  auto uni = [&](float lo, float hi) { return lo + (hi - lo) * u01(rng); };
  const auto& st = spec.style;
  Nuisance nu;
  if (spec.diversity == Diversity::kSimple) {
    // The middle option of every dimension, centered and without jitter.
    const int mid = static_cast<int>(spec.options_per_dimension - 1) / 2;
    nu.background_seed = seed_of(spec.split_seed, 0x51ULL, class_id);
    synthetic_nuisance(nu, spec, {mid, 4, mid, mid}, nullptr);
    return nu;
  }
  nu.background_seed = seed_of(sample_seed, 0xb6ULL);
  if (draw == Domain::kNatural) {
    nu.scale = uni(st.scale_min, st.scale_max);
    nu.cx = 12.0f + uni(-st.natural_max_offset, st.natural_max_offset);
    nu.cy = 12.0f + uni(-st.natural_max_offset, st.natural_max_offset);
    clamp_center(nu);
    nu.rotation = uni(-st.rotation_max, st.rotation_max);
    nu.brightness = uni(st.natural_brightness_min, st.natural_brightness_max);
    nu.background = {uni(0.05f, 0.95f), uni(0.05f, 0.95f), uni(0.05f, 0.95f)};
    nu.background_alt = {uni(0.05f, 0.95f), uni(0.05f, 0.95f), uni(0.05f, 0.95f)};
    return nu;
  }
  // Synthetic: one covering-array row picks the option of each dimension
  // (locations, position, daytime, camera angle); jitter stays inside the option.
  const auto ca = diversity_array(spec.options_per_dimension);
  const auto& row = ca->rows[sample_seed % ca->rows.size()];
  synthetic_nuisance(nu, spec, {row[0], row[1], row[2], row[3]}, &rng);
  return nu;
}

}  // namespace detail

// Pixel containing a point well inside the glyph.
inline std::pair<std::size_t, std::size_t> glyph_anchor(const ClassInfo& cls, const Nuisance& nu) {
  const auto [lu, lv] = detail::glyph_anchor_local(cls.glyph);
  const float c = std::cos(nu.rotation), s = std::sin(nu.rotation);
  const float dx = c * lu - s * lv, dy = s * lu + c * lv;
  const float px = nu.cx + dx * nu.scale, py = nu.cy - dy * nu.scale;
  return {static_cast<std::size_t>(std::clamp(px, 0.0f, kSide - 1.0f)),
          static_cast<std::size_t>(std::clamp(py, 0.0f, kSide - 1.0f))};
}

// Marker: 4x4 block of palette[c] in a corner chosen from the sample seed.
// Background: every non-glyph pixel set to palette[c].
inline ImageSample inject_spurious(ImageSample sample, SpuriousTag tag) {
  sample.spurious = tag;
  if (tag.kind == SpuriousKind::kNone) return sample;
  const auto& col = palette()[tag.class_id % palette().size()];
  auto paint = [&](std::size_t x, std::size_t y) {
    sample.at(x, y, 0) = col.r;
    sample.at(x, y, 1) = col.g;
    sample.at(x, y, 2) = col.b;
  };
  if (tag.kind == SpuriousKind::kMarker) {
    const auto corner = seed_of(sample.sample_seed, 0x3a7ULL) % 4;
    const std::size_t x0 = corner % 2 ? kSide - 4 : 0, y0 = corner / 2 ? kSide - 4 : 0;
    for (std::size_t y = y0; y < y0 + 4; ++y) {
      for (std::size_t x = x0; x < x0 + 4; ++x) paint(x, y);
    }
  } else {
    for (std::size_t y = 0; y < kSide; ++y) {
      for (std::size_t x = 0; x < kSide; ++x) {
        if (!sample.foreground[y * kSide + x]) paint(x, y);
      }
    }
  }
  return sample;
}

// Gradient-magnitude edge map (Sobel, max over channels, a unit step maps to
// 1), binarized at 0.15 and drawn dark on light.
inline ImageSample render_sketch(ImageSample sample) {
  constexpr float kThreshold = 0.15f;
  auto px = [&](int x, int y, int c) {
    x = std::clamp(x, 0, static_cast<int>(kSide) - 1);
    y = std::clamp(y, 0, static_cast<int>(kSide) - 1);
    return sample.pixels[(static_cast<std::size_t>(y) * kSide + static_cast<std::size_t>(x)) * 3 + c];
  };
  std::vector<float> out(sample.pixels.size());
  for (int y = 0; y < static_cast<int>(kSide); ++y) {
    for (int x = 0; x < static_cast<int>(kSide); ++x) {
      float mag = 0.0f;
      for (int c = 0; c < 3; ++c) {
        const float gx = (px(x + 1, y - 1, c) + 2 * px(x + 1, y, c) + px(x + 1, y + 1, c)) -
                         (px(x - 1, y - 1, c) + 2 * px(x - 1, y, c) + px(x - 1, y + 1, c));
        const float gy = (px(x - 1, y + 1, c) + 2 * px(x, y + 1, c) + px(x + 1, y + 1, c)) -
                         (px(x - 1, y - 1, c) + 2 * px(x, y - 1, c) + px(x + 1, y - 1, c));
        mag = std::max(mag, std::sqrt(gx * gx + gy * gy) / 4.0f);
      }
      const float v = mag > kThreshold ? 0.0f : 1.0f;
      for (int c = 0; c < 3; ++c) out[(static_cast<std::size_t>(y) * kSide + x) * 3 + c] = v;
    }
  }
  sample.pixels = std::move(out);
  sample.domain = Domain::kSketch;
  return sample;
}

// Severity table per kind; index 0 is the identity sentinel.
inline double corruption_parameter(CorruptionKind kind, int severity) {
  static const std::map<CorruptionKind, std::array<double, 5>> table = {
      {CorruptionKind::kGaussianNoise, {0.04, 0.08, 0.12, 0.18, 0.26}},
      {CorruptionKind::kShotNoise, {60, 25, 12, 5, 3}},
      {CorruptionKind::kGaussianBlur, {0.5, 0.75, 1.0, 1.5, 2.0}},
      {CorruptionKind::kBrightness, {0.1, 0.2, 0.3, 0.4, 0.5}},
      {CorruptionKind::kContrast, {0.75, 0.5, 0.4, 0.3, 0.15}},
      {CorruptionKind::kPixelate, {2, 3, 4, 5, 6}},
  };
  if (severity < 1 || severity > 5) throw Error("corruption severity must be in 1..5");
  return table.at(kind)[static_cast<std::size_t>(severity - 1)];
}

inline ImageSample apply_corruption(ImageSample sample, CorruptionKind kind, int severity) {
  if (severity < 0 || severity > 5) throw Error("corruption severity must be in 0..5");
  if (severity == 0) return sample;
  const double p = corruption_parameter(kind, severity);
  auto& px = sample.pixels;
  std::mt19937_64 rng(seed_of(sample.sample_seed, 0xc0ULL, static_cast<std::uint64_t>(kind),
                              static_cast<std::uint64_t>(severity)));
  switch (kind) {
    case CorruptionKind::kGaussianNoise: {
      std::normal_distribution<double> n(0.0, p);
      for (auto& v : px) v = detail::clamp01(static_cast<float>(v + n(rng)));
      break;
    }
    case CorruptionKind::kShotNoise: {
      for (auto& v : px) {
        std::poisson_distribution<int> pois(std::max(0.0, v * p));
        v = detail::clamp01(static_cast<float>(pois(rng) / p));
      }
      break;
    }
    case CorruptionKind::kGaussianBlur: {
      const int radius = static_cast<int>(std::ceil(3.0 * p));
      std::vector<double> k(2 * radius + 1);
      double total = 0.0;
      for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (p * p));
      for (auto& w : k) w /= total;
      const int n = static_cast<int>(kSide);
      auto pass = [&](const std::vector<float>& in, bool horizontal) {
        std::vector<float> out(in.size());
        for (int y = 0; y < n; ++y) {
          for (int x = 0; x < n; ++x) {
            for (int c = 0; c < 3; ++c) {
              double acc = 0.0;
              for (int i = -radius; i <= radius; ++i) {
                const int sx = horizontal ? std::clamp(x + i, 0, n - 1) : x;
                const int sy = horizontal ? y : std::clamp(y + i, 0, n - 1);
                acc += k[i + radius] * in[(static_cast<std::size_t>(sy) * kSide + sx) * 3 + c];
              }
              out[(static_cast<std::size_t>(y) * kSide + x) * 3 + c] = static_cast<float>(acc);
            }
          }
        }
        return out;
      };
      px = pass(pass(px, true), false);
      for (auto& v : px) v = detail::clamp01(v);
      break;
    }
    case CorruptionKind::kBrightness:
      for (auto& v : px) v = detail::clamp01(static_cast<float>(v + p));
      break;
    case CorruptionKind::kContrast: {
      double mean = 0.0;
      for (auto v : px) mean += v;
      mean /= static_cast<double>(px.size());
      for (auto& v : px) v = detail::clamp01(static_cast<float>((v - mean) * p + mean));
      break;
    }
    case CorruptionKind::kPixelate: {
      const auto b = static_cast<std::size_t>(p);
      for (std::size_t y0 = 0; y0 < kSide; y0 += b) {
        for (std::size_t x0 = 0; x0 < kSide; x0 += b) {
          const std::size_t y1 = std::min(y0 + b, kSide), x1 = std::min(x0 + b, kSide);
          for (std::size_t c = 0; c < 3; ++c) {
            double acc = 0.0;
            for (std::size_t y = y0; y < y1; ++y) {
              for (std::size_t x = x0; x < x1; ++x) acc += sample.at(x, y, c);
            }
            const auto avg = static_cast<float>(acc / static_cast<double>((y1 - y0) * (x1 - x0)));
            for (std::size_t y = y0; y < y1; ++y) {
              for (std::size_t x = x0; x < x1; ++x) sample.at(x, y, c) = avg;
            }
          }
        }
      }
      break;
    }
  }
  sample.corruption = Corruption{kind, severity};
  return sample;
}

// Deterministic render of one sample; see the file comment for the styles.
inline ImageSample render_sample(const DatasetSpec& spec, std::size_t class_id, std::uint64_t sample_seed) {
  if (class_id >= spec.classes.size()) {
    throw Error("render_sample: class " + std::to_string(class_id) + " out of range");
  }
  const auto& cls = spec.classes[class_id];
  const Domain draw = spec.domain == Domain::kNatural ? Domain::kNatural : Domain::kSynthetic;
  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<float> u01(0.0f, 1.0f);

  ImageSample s;
  s.class_id = class_id;
  s.domain = draw;
  s.sample_seed = sample_seed;
  s.nuisance = detail::sample_nuisance(spec, class_id, draw, sample_seed, rng);
  s.pixels.assign(kNumPixels * 3, 0.0f);
  s.foreground.assign(kNumPixels, 0);
  const auto& nu = s.nuisance;

  if (draw == Domain::kSynthetic) {
    for (std::size_t y = 0; y < kSide; ++y) {
      for (std::size_t x = 0; x < kSide; ++x) {
        float u, v;
        detail::to_local(nu, x + 0.5f, y + 0.5f, u, v);
        const bool in = detail::glyph_inside(cls.glyph, u, v);
        s.foreground[y * kSide + x] = in;
        const Rgb bg{nu.background.r * nu.brightness, nu.background.g * nu.brightness,
                     nu.background.b * nu.brightness};
        const Rgb c = in ? cls.base_color : bg;
        s.at(x, y, 0) = detail::clamp01(c.r);
        s.at(x, y, 1) = detail::clamp01(c.g);
        s.at(x, y, 2) = detail::clamp01(c.b);
      }
    }
  } else {
    const auto& st = spec.style;
    const auto texture = detail::value_noise(nu.background_seed);
    const auto shading = detail::value_noise(seed_of(sample_seed, 0x5badeULL));
    const Rgb random_color{u01(rng), u01(rng), u01(rng)};
    const float shift = st.natural_color_shift_min + (st.natural_color_shift_max - st.natural_color_shift_min) * u01(rng);
    const Rgb glyph = detail::lerp(cls.base_color, random_color, shift);
    const float cast = st.natural_cast_min + (st.natural_cast_max - st.natural_cast_min) * u01(rng);
    const Rgb light = detail::lerp({1.0f, 1.0f, 1.0f}, st.natural_cast, cast);
    std::normal_distribution<float> noise(0.0f, st.natural_pixel_noise);
    for (std::size_t y = 0; y < kSide; ++y) {
      for (std::size_t x = 0; x < kSide; ++x) {
        int hits = 0;
        for (int sy = 0; sy < 4; ++sy) {
          for (int sx = 0; sx < 4; ++sx) {
            float u, v;
            detail::to_local(nu, x + (sx + 0.5f) / 4.0f, y + (sy + 0.5f) / 4.0f, u, v);
            hits += detail::glyph_inside(cls.glyph, u, v);
          }
        }
        const float cover = static_cast<float>(hits) / 16.0f;
        s.foreground[y * kSide + x] = cover >= 0.5f;
        const Rgb bg = detail::lerp(nu.background, nu.background_alt, texture[y * kSide + x]);
        const float shade = 1.0f + st.natural_shading * (shading[y * kSide + x] - 0.5f);
        const Rgb fg{glyph.r * shade, glyph.g * shade, glyph.b * shade};
        const Rgb c = detail::lerp(bg, fg, cover);
        s.at(x, y, 0) = detail::clamp01(c.r * light.r * nu.brightness + noise(rng));
        s.at(x, y, 1) = detail::clamp01(c.g * light.g * nu.brightness + noise(rng));
        s.at(x, y, 2) = detail::clamp01(c.b * light.b * nu.brightness + noise(rng));
      }
    }
  }

  if (spec.spurious != SpuriousKind::kNone) {
    const auto m = spec.classes.size();
    const auto c = spec.shuffled_spurious ? (class_id + 1) % m : class_id;
    s = inject_spurious(std::move(s), {spec.spurious, c});
  }
  if (spec.domain == Domain::kSketch) s = render_sketch(std::move(s));
  if (spec.corruption) s = apply_corruption(std::move(s), spec.corruption->kind, spec.corruption->severity);
  return s;
}

struct ManifestRow {
  std::size_t sample_id;
  std::size_t class_id;
  std::string domain;
  std::string spurious_tag;
  std::uint64_t seed;
  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<ImageSample> samples;

  std::size_t size() const { return samples.size(); }
  std::vector<std::size_t> labels() const {
    std::vector<std::size_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.class_id);
    return out;
  }
  std::vector<ManifestRow> manifest() const {
    std::vector<ManifestRow> rows;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      rows.push_back({i, s.class_id, domain_name(s.domain), s.spurious.str(), s.sample_seed});
    }
    return rows;
  }
};

inline std::uint64_t sample_seed_for(std::uint64_t split_seed, std::size_t class_id, std::size_t index) {
  return seed_of(split_seed, class_id, index);
}

// Class-major order: all samples of class 0, then class 1, ...
inline Dataset make_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds{spec, {}};
  ds.samples.reserve(spec.classes.size() * spec.per_class);
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      ds.samples.push_back(render_sample(spec, c, sample_seed_for(spec.split_seed, c, i)));
    }
  }
  return ds;
}

// Stacks the selected samples into a (B, 24*24*3) tensor.
inline Tensor batch_pixels(const Dataset& ds, const std::vector<std::size_t>& index) {
  std::vector<float> data;
  data.reserve(index.size() * kImagePixels);
  for (auto i : index) data.insert(data.end(), ds.samples.at(i).pixels.begin(), ds.samples.at(i).pixels.end());
  return Tensor::from_data({index.size(), kImagePixels}, std::move(data));
}

inline Tensor all_pixels(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return batch_pixels(ds, idx);
}

// Random square crop of side in [min_side, 24], resized back to 24x24 with
// bilinear sampling.
inline std::vector<float> random_square_crop(const std::vector<float>& px, std::mt19937_64& rng,
                                             std::size_t min_side = 20) {
  std::uniform_int_distribution<std::size_t> side_dist(min_side, kSide);
  const auto side = side_dist(rng);
  std::uniform_int_distribution<std::size_t> off(0, kSide - side);
  const auto x0 = off(rng), y0 = off(rng);
  if (side == kSide) return px;
  std::vector<float> out(px.size());
  const float ratio = static_cast<float>(side) / static_cast<float>(kSide);
  for (std::size_t y = 0; y < kSide; ++y) {
    for (std::size_t x = 0; x < kSide; ++x) {
      const float sx = std::clamp((x + 0.5f) * ratio - 0.5f, 0.0f, static_cast<float>(side - 1));
      const float sy = std::clamp((y + 0.5f) * ratio - 0.5f, 0.0f, static_cast<float>(side - 1));
      const auto ix = std::min(static_cast<std::size_t>(sx), side - 2);
      const auto iy = std::min(static_cast<std::size_t>(sy), side - 2);
      const float tx = sx - ix, ty = sy - iy;
      for (std::size_t c = 0; c < 3; ++c) {
        auto at = [&](std::size_t xx, std::size_t yy) { return px[((y0 + yy) * kSide + x0 + xx) * 3 + c]; };
        out[(y * kSide + x) * 3 + c] = (at(ix, iy) * (1 - tx) + at(ix + 1, iy) * tx) * (1 - ty) +
                                       (at(ix, iy + 1) * (1 - tx) + at(ix + 1, iy + 1) * tx) * ty;
      }
    }
  }
  return out;
}

inline std::string manifest_csv(const Dataset& ds) {
  std::ostringstream os;
  os << "sample_id,class,domain,spurious_tag,seed\n";
  for (const auto& r : ds.manifest()) {
    os << r.sample_id << ',' << r.class_id << ',' << r.domain << ',' << r.spurious_tag << ',' << r.seed << '\n';
  }
  return os.str();
}

// Writes <stem>.csv and <stem>.bin (little-endian float32, sample-major HWC).
inline void export_dataset(const Dataset& ds, const std::string& stem) {
  {
    std::ofstream f(stem + ".csv", std::ios::trunc);
    if (!f) throw Error("export_dataset: cannot write '" + stem + ".csv'");
    f << manifest_csv(ds);
  }
  std::ofstream f(stem + ".bin", std::ios::binary | std::ios::trunc);
  if (!f) throw Error("export_dataset: cannot write '" + stem + ".bin'");
  for (const auto& s : ds.samples) {
    f.write(reinterpret_cast<const char*>(s.pixels.data()), static_cast<std::streamsize>(s.pixels.size() * 4));
  }
}

}  // namespace zsd
