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

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "zsd/tensor.hpp"

namespace zsd {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
  bool passed = false;
};

// Compares backward() against central differences of a scalar function.
//
// The error of entry i is |a_i - n_i| / max(1, |a_i|, |n_i|): relative for
// gradients of magnitude above one and absolute below, which keeps float32
// round-off in the difference quotient from dominating near-zero entries.
inline GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  double h = 1e-3, double tol = 1e-3) {
  GradCheckReport report;
  auto leaf = Tensor::from_data(x.shape(), std::vector<float>(x.data().begin(), x.data().end()), true);
  {
    auto loss = f(leaf);
    loss.backward();
  }
  report.analytic.assign(leaf.size(), 0.0);
  if (leaf.has_grad()) {
    for (std::size_t i = 0; i < leaf.size(); ++i) report.analytic[i] = leaf.grad()[i];
  }

  NoGradGuard no_grad;
  report.numeric.resize(leaf.size());
  auto probe = Tensor::from_data(x.shape(), std::vector<float>(x.data().begin(), x.data().end()));
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const float orig = probe[i];
    const auto hi = static_cast<float>(orig + h);
    const auto lo = static_cast<float>(orig - h);
    probe.mutable_data()[i] = hi;
    const double fp = f(probe).item();
    probe.mutable_data()[i] = lo;
    const double fm = f(probe).item();
    probe.mutable_data()[i] = orig;
    // Divide by the representable step, not the nominal 2h.
    report.numeric[i] = (fp - fm) / (static_cast<double>(hi) - static_cast<double>(lo));
    const double a = report.analytic[i], n = report.numeric[i];
    const double err = std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)});
    if (err > report.max_rel_error || !std::isfinite(err)) {
      report.max_rel_error = std::isfinite(err) ? err : INFINITY;
      report.worst_index = i;
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace zsd
