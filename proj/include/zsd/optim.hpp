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

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "zsd/common.hpp"
#include "zsd/tensor.hpp"

namespace zsd {

// Named parameters, iterated in name order.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    bool decay = true;
  };

  void add(const std::string& name, Tensor value, bool decay = true) {
    if (!value.requires_grad()) value.set_requires_grad(true);
    auto [it, inserted] = entries_.emplace(name, Entry{std::move(value), decay});
    if (!inserted) throw Error("param store: duplicate parameter '" + name + "'");
  }

  void merge(const ParamStore& other) {
    for (const auto& [name, e] : other.entries_) add(name, e.value, e.decay);
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("param store: unknown parameter '" + name + "'");
    return it->second.value;
  }
  Tensor& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("param store: unknown parameter '" + name + "'");
    return it->second.value;
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.value.zero_grad();
  }

  // Content hash over names, shapes and raw values.
  std::uint64_t fingerprint() const {
    Fnv1a h;
    for (const auto& [name, e] : entries_) {
      h.update(name);
      for (auto d : e.value.shape()) {
        const auto v = static_cast<std::uint64_t>(d);
        h.update(&v, sizeof v);
      }
      h.update(e.value.data().data(), e.value.size() * sizeof(float));
    }
    return h.digest();
  }

 private:
  std::map<std::string, Entry> entries_;
};

struct AdamWOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay and bias correction:
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  const AdamWOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }
  std::int64_t step_count() const { return t_; }

  // Updates every parameter of `params` that has a gradient. Parameters
  // without a gradient are skipped but keep their moment buffers.
  void step(ParamStore& params) {
    for (const auto& [name, e] : params.entries()) {
      if (!e.value.has_grad()) continue;
      for (float g : e.value.grad()) {
        if (!std::isfinite(g)) throw Error("adamw: non-finite gradient in parameter '" + name + "'");
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (auto& [name, e] : params.entries()) {
      if (!e.value.has_grad()) continue;
      auto& st = state_[name];
      const auto n = e.value.size();
      if (st.m.size() != n) {
        st.m.assign(n, 0.0);
        st.v.assign(n, 0.0);
      }
      const double wd = e.decay ? options_.weight_decay : 0.0;
      auto p = e.value.mutable_data();
      const auto g = e.value.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = g[i];
        st.m[i] = options_.beta1 * st.m[i] + (1.0 - options_.beta1) * gi;
        st.v[i] = options_.beta2 * st.v[i] + (1.0 - options_.beta2) * gi * gi;
        const double m_hat = st.m[i] / bc1;
        const double v_hat = st.v[i] / bc2;
        const double pi = p[i];
        p[i] = static_cast<float>(pi - options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps) -
                                  options_.lr * wd * pi);
      }
    }
  }

  struct Moments {
    std::vector<double> m, v;
  };
  const std::map<std::string, Moments>& state() const { return state_; }

 private:
  AdamWOptions options_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace zsd
