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

// Dense float32 tensors with reverse-mode automatic differentiation.
//
// Every op records its inputs and a backward closure when at least one input
// requires a gradient and grad mode is enabled. `Tensor::backward()` orders the
// recorded graph topologically (the tape), runs the closures in reverse, and
// then releases the intermediate nodes. Leaves accumulate gradients across
// calls until `zero_grad()`.
//
// Storage is float32, reductions accumulate in double.

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "zsd/common.hpp"

namespace zsd {

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  std::vector<float>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    return grad;
  }
};

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
  }

  static Tensor full(Shape shape, float value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<float>(n, value), requires_grad);
  }

  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false) {
    if (shape.empty()) throw ShapeError("tensor: shape must have at least one dimension");
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(float value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  // Row-major 2-D literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows,
                       bool requires_grad = false) {
    std::vector<float> data;
    const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("tensor: ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return from_data({rows.size(), cols}, std::move(data), requires_grad);
  }

  static Tensor vector(std::initializer_list<float> values, bool requires_grad = false) {
    return from_data({values.size()}, std::vector<float>(values), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const float> data() const { return node_->data; }
  std::span<float> mutable_data() { return node_->data; }
  float operator[](std::size_t i) const { return node_->data[i]; }
  float at(std::size_t r, std::size_t c) const { return node_->data[r * node_->shape.back() + c]; }

  float item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const float> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Leaf copy of the values, disconnected from any graph.
  Tensor detach() const { return from_data(shape(), node_->data, false); }

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
  void backward() const;

  const char* op_name() const { return node_->op; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Allocates the output node and wires it into the graph when needed. The
// backward closure receives the output node; parents are in `out.parents`.
inline Tensor make_result(Shape shape, std::vector<float> data, const char* op,
                          std::initializer_list<const Tensor*> inputs,
                          std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto* t : inputs) needs = needs || t->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto* t : inputs) node->parents.push_back(t->node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

inline Tensor make_result_n(Shape shape, std::vector<float> data, const char* op,
                            const std::vector<Tensor>& inputs,
                            std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Deriv deriv) {
  std::vector<float> out(a.size());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(a.shape(), std::move(out), op, {&a}, [deriv](Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
    }
  });
}

}  // namespace detail

inline void Tensor::backward() const {
  if (size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(shape()));
  }
  if (!requires_grad()) return;

  // Post-order DFS gives a topological order with parents first.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      auto* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  auto& g = node_->grad_buffer();
  g[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (n->backward && n->grad.size() == n->data.size()) n->backward(*n);
  }
  // Release the tape: interior nodes drop their closures, parents and grads.
  for (auto* n : order) {
    if (!n->is_leaf()) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad.clear();
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), "add", {&a, &b}, [](detail::Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), "sub", {&a, &b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const float sign = k == 0 ? 1.0f : -1.0f;
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), "mul", {&a, &b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

inline Tensor scale(const Tensor& a, float c) {
  return detail::unary(
      a, "scale", [c](float x) { return c * x; }, [c](float, float) { return c; });
}

// Multiplies every element by a one-element tensor (e.g. a learnable logit scale).
inline Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) {
    throw ShapeError("mul_scalar: scale must have one element, got " + shape_str(s.shape()) +
                     " for operand " + shape_str(a.shape()));
  }
  const float c = s[0];
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return detail::make_result(a.shape(), std::move(out), "mul_scalar", {&a, &s},
                             [](detail::Node& self) {
                               auto& pa = *self.parents[0];
                               auto& ps = *self.parents[1];
                               const float c = ps.data[0];
                               if (pa.requires_grad) {
                                 auto& g = pa.grad_buffer();
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
                               }
                               if (ps.requires_grad) {
                                 double acc = 0.0;
                                 for (std::size_t i = 0; i < pa.data.size(); ++i) {
                                   acc += static_cast<double>(self.grad[i]) * pa.data[i];
                                 }
                                 ps.grad_buffer()[0] += static_cast<float>(acc);
                               }
                             });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, "relu", [](float x) { return x > 0.0f ? x : 0.0f; },
      [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      a, "exp", [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(
      a, "log", [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

inline Tensor sqrt(const Tensor& a) {
  return detail::unary(
      a, "sqrt", [](float x) { return std::sqrt(x); },
      [](float, float y) { return y > 0.0f ? 0.5f / y : 0.0f; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  return detail::make_result({1}, {static_cast<float>(acc)}, "sum", {&a}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  const double n = static_cast<double>(a.size());
  return detail::make_result({1}, {static_cast<float>(acc / n)}, "mean", {&a},
                             [](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               auto& g = p.grad_buffer();
                               const float w = self.grad[0] / static_cast<float>(g.size());
                               for (auto& v : g) v += w;
                             });
}

// Sum of a 2-D tensor along `axis`: axis 0 gives (cols), axis 1 gives (rows).
inline Tensor sum(const Tensor& a, std::size_t axis) {
  detail::require_rank("sum", a, 2);
  if (axis > 1) throw ShapeError("sum: axis must be 0 or 1 for shape " + shape_str(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const std::size_t n = axis == 0 ? cols : rows;
  std::vector<double> acc(n, 0.0);
  const auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) acc[axis == 0 ? c : r] += d[r * cols + c];
  }
  std::vector<float> out(acc.begin(), acc.end());
  return detail::make_result({n}, std::move(out), "sum_axis", {&a},
                             [axis, rows, cols](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               auto& g = p.grad_buffer();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t c = 0; c < cols; ++c) {
                                   g[r * cols + c] += self.grad[axis == 0 ? c : r];
                                 }
                               }
                             });
}

// Euclidean norm of every row of a 2-D tensor, shape (rows). The subgradient
// at a zero row is taken as zero.
inline Tensor row_norm(const Tensor& a) {
  detail::require_rank("row_norm", a, 2);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<float> out(rows);
  const auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += static_cast<double>(d[r * cols + c]) * d[r * cols + c];
    out[r] = static_cast<float>(std::sqrt(acc));
  }
  return detail::make_result({rows}, std::move(out), "row_norm", {&a},
                             [rows, cols](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               auto& g = p.grad_buffer();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const float n = self.data[r];
                                 if (n <= 0.0f) continue;
                                 const float w = self.grad[r] / n;
                                 for (std::size_t c = 0; c < cols; ++c) {
                                   g[r * cols + c] += w * p.data[r * cols + c];
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<float> out(a.data().begin(), a.data().end());
  return detail::make_result(std::move(shape), std::move(out), "reshape", {&a},
                             [](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               auto& g = p.grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                             });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank("transpose", a, 2);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<float> out(a.size());
  const auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = d[r * cols + c];
  }
  return detail::make_result({cols, rows}, std::move(out), "transpose", {&a},
                             [rows, cols](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               auto& g = p.grad_buffer();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t c = 0; c < cols; ++c) {
                                   g[r * cols + c] += self.grad[c * rows + r];
                                 }
                               }
                             });
}

// Concatenates tensors of equal rank along `axis`; all other dims must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const auto& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : parts) {
    const auto& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s) +
                       " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

  std::vector<std::size_t> widths;
  for (const auto& t : parts) widths.push_back(t.dim(axis) * inner);
  const std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t{0});

  std::vector<float> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto src = parts[k].data();
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(o * total + off));
      off += widths[k];
    }
  }
  return detail::make_result_n(out_shape, std::move(out), "concat", parts,
                               [widths, outer, total](detail::Node& self) {
                                 std::size_t off = 0;
                                 for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                   auto& p = *self.parents[k];
                                   if (p.requires_grad) {
                                     auto& g = p.grad_buffer();
                                     for (std::size_t o = 0; o < outer; ++o) {
                                       for (std::size_t i = 0; i < widths[k]; ++i) {
                                         g[o * widths[k] + i] += self.grad[o * total + off + i];
                                       }
                                     }
                                   }
                                   off += widths[k];
                                 }
                               });
}

// Selects rows of a 2-D tensor by index (repeats allowed).
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index) {
  detail::require_rank("gather_rows", a, 2);
  if (index.empty()) throw ShapeError("gather_rows: empty index for " + shape_str(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<float> out(index.size() * cols);
  const auto d = a.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                       shape_str(a.shape()));
    }
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(index[i] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  return detail::make_result({index.size(), cols}, std::move(out), "gather_rows", {&a},
                             [index, cols](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               auto& g = p.grad_buffer();
                               for (std::size_t i = 0; i < index.size(); ++i) {
                                 for (std::size_t c = 0; c < cols; ++c) {
                                   g[index[i] * cols + c] += self.grad[i * cols + c];
                                 }
                               }
                             });
}

// Picks element (i, index[i]) of every row: (rows, cols) -> (rows).
inline Tensor pick(const Tensor& a, const std::vector<std::size_t>& index) {
  detail::require_rank("pick", a, 2);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (index.size() != rows) {
    throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " + shape_str(a.shape()));
  }
  std::vector<float> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= cols) {
      throw ShapeError("pick: index " + std::to_string(index[r]) + " out of range for " +
                       shape_str(a.shape()));
    }
    out[r] = a[r * cols + index[r]];
  }
  return detail::make_result({rows}, std::move(out), "pick", {&a},
                             [index, cols](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               auto& g = p.grad_buffer();
                               for (std::size_t r = 0; r < index.size(); ++r) {
                                 g[r * cols + index[r]] += self.grad[r];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {

// out(n, m) += A(n, k) * B(k, m), row-major, double accumulation in p order.
// Rows are processed in blocks so each row of B is reused across the block.
inline void gemm_accumulate(const float* A, const float* B, float* out, std::size_t n, std::size_t k,
                            std::size_t m) {
  constexpr std::size_t kRows = 8;
  std::vector<double> acc(kRows * m);
  for (std::size_t i0 = 0; i0 < n; i0 += kRows) {
    const std::size_t rows = std::min(kRows, n - i0);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const float* brow = B + p * m;
      for (std::size_t r = 0; r < rows; ++r) {
        const double av = A[(i0 + r) * k + p];
        if (av == 0.0) continue;
        double* arow = acc.data() + r * m;
        for (std::size_t j = 0; j < m; ++j) arow[j] += av * brow[j];
      }
    }
    for (std::size_t r = 0; r < rows; ++r) {
      float* orow = out + (i0 + r) * m;
      const double* arow = acc.data() + r * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += static_cast<float>(arow[j]);
    }
  }
}

inline std::vector<float> transposed(const float* A, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kTile = 32;
  std::vector<float> t(rows * cols);
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    const std::size_t r1 = std::min(rows, r0 + kTile);
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) t[c * rows + r] = A[r * cols + c];
      }
    }
  }
  return t;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<float> out(n * m, 0.0f);
  detail::gemm_accumulate(a.data().data(), b.data().data(), out.data(), n, k, m);
  return detail::make_result({n, m}, std::move(out), "matmul", {&a, &b}, [n, k, m](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const float* G = self.grad.data();
    if (pa.requires_grad) {
      // dA = G * B^T
      const auto bt = detail::transposed(pb.data.data(), k, m);
      detail::gemm_accumulate(G, bt.data(), pa.grad_buffer().data(), n, m, k);
    }
    if (pb.requires_grad) {
      // dB = A^T * G
      const auto at = detail::transposed(pa.data.data(), n, k);
      detail::gemm_accumulate(at.data(), G, pb.grad_buffer().data(), k, n, m);
    }
  });
}

// Adds a bias vector (cols) to every row of a 2-D tensor.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  detail::require_rank("add_bias", a, 2);
  if (bias.rank() != 1 || bias.dim(0) != a.dim(1)) {
    throw ShapeError("add_bias: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(bias.shape()));
  }
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<float> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = a[r * cols + c] + bias[c];
  }
  return detail::make_result(a.shape(), std::move(out), "add_bias", {&a, &bias},
                             [rows, cols](detail::Node& self) {
                               auto& pa = *self.parents[0];
                               auto& pb = *self.parents[1];
                               if (pa.requires_grad) {
                                 auto& g = pa.grad_buffer();
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                               }
                               if (pb.requires_grad) {
                                 auto& g = pb.grad_buffer();
                                 for (std::size_t c = 0; c < cols; ++c) {
                                   double acc = 0.0;
                                   for (std::size_t r = 0; r < rows; ++r) acc += self.grad[r * cols + c];
                                   g[c] += static_cast<float>(acc);
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Normalization and softmax

inline constexpr float kNormEpsilon = 1e-12f;

// Divides each row by max(||row||_2, 1e-12).
inline Tensor l2_normalize(const Tensor& a) {
  detail::require_rank("l2_normalize", a, 2);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<float> out(a.size());
  std::vector<float> denom(rows);
  const auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += static_cast<double>(d[r * cols + c]) * d[r * cols + c];
    const double norm = std::max(std::sqrt(acc), static_cast<double>(kNormEpsilon));
    denom[r] = static_cast<float>(norm);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = static_cast<float>(d[r * cols + c] / norm);
  }
  return detail::make_result(a.shape(), std::move(out), "l2_normalize", {&a},
                             [rows, cols, denom](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               auto& g = p.grad_buffer();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const float* y = self.data.data() + r * cols;
                                 const float* gy = self.grad.data() + r * cols;
                                 const bool clamped = denom[r] <= kNormEpsilon;
                                 double dot = 0.0;
                                 if (!clamped) {
                                   for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(y[c]) * gy[c];
                                 }
                                 for (std::size_t c = 0; c < cols; ++c) {
                                   g[r * cols + c] += static_cast<float>((gy[c] - y[c] * dot) / denom[r]);
                                 }
                               }
                             });
}

// Numerically stable log-softmax of a 2-D tensor along `axis` (1 = per row).
inline Tensor log_softmax(const Tensor& a, std::size_t axis = 1) {
  detail::require_rank("log_softmax", a, 2);
  if (axis > 1) throw ShapeError("log_softmax: axis must be 0 or 1 for " + shape_str(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  // Iterate lanes: a lane is a row (axis 1) or a column (axis 0).
  const std::size_t lanes = axis == 1 ? rows : cols;
  const std::size_t len = axis == 1 ? cols : rows;
  const std::size_t lane_stride = axis == 1 ? cols : 1;
  const std::size_t elem_stride = axis == 1 ? 1 : cols;
  std::vector<float> out(a.size());
  const auto d = a.data();
  for (std::size_t l = 0; l < lanes; ++l) {
    const std::size_t base = l * lane_stride;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t e = 0; e < len; ++e) mx = std::max(mx, d[base + e * elem_stride]);
    double acc = 0.0;
    for (std::size_t e = 0; e < len; ++e) acc += std::exp(static_cast<double>(d[base + e * elem_stride]) - mx);
    const double lse = mx + std::log(acc);
    for (std::size_t e = 0; e < len; ++e) {
      out[base + e * elem_stride] = static_cast<float>(d[base + e * elem_stride] - lse);
    }
  }
  return detail::make_result(
      a.shape(), std::move(out), "log_softmax", {&a},
      [lanes, len, lane_stride, elem_stride](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t l = 0; l < lanes; ++l) {
          const std::size_t base = l * lane_stride;
          double gsum = 0.0;
          for (std::size_t e = 0; e < len; ++e) gsum += self.grad[base + e * elem_stride];
          for (std::size_t e = 0; e < len; ++e) {
            const std::size_t i = base + e * elem_stride;
            g[i] += static_cast<float>(self.grad[i] - std::exp(static_cast<double>(self.data[i])) * gsum);
          }
        }
      });
}

inline Tensor softmax(const Tensor& a, std::size_t axis = 1) { return exp(log_softmax(a, axis)); }

// ---------------------------------------------------------------------------
// Convolution on NHWC images

// 3x3 convolution, stride 1, zero "same" padding.
// x: (B, H, W, Cin), w: (3, 3, Cin, Cout), b: (Cout) -> (B, H, W, Cout)
namespace detail {

// Double-precision dot product with four independent partial sums.
inline double dot_double(const float* a, const float* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * b[i];
    s1 += static_cast<double>(a[i + 1]) * b[i + 1];
    s2 += static_cast<double>(a[i + 2]) * b[i + 2];
    s3 += static_cast<double>(a[i + 3]) * b[i + 3];
  }
  for (; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
  return (s0 + s1) + (s2 + s3);
}

// out (n, m) += A (n, k) * B (k, m) for small m, accumulating each output
// row in float registers. Used by the convolution, where m is the channel
// count.
template <std::size_t M>
void gemm_narrow_fixed(const float* A, const float* B, float* out, std::size_t n, std::size_t k) {
  constexpr std::size_t kRows = 4;
  std::size_t r = 0;
  for (; r + kRows <= n; r += kRows) {
    float acc[kRows][M] = {};
    for (std::size_t p = 0; p < k; ++p) {
      const float* brow = B + p * M;
      for (std::size_t i = 0; i < kRows; ++i) {
        const float a = A[(r + i) * k + p];
        for (std::size_t j = 0; j < M; ++j) acc[i][j] += a * brow[j];
      }
    }
    for (std::size_t i = 0; i < kRows; ++i) {
      for (std::size_t j = 0; j < M; ++j) out[(r + i) * M + j] += acc[i][j];
    }
  }
  for (; r < n; ++r) {
    float acc[M] = {};
    for (std::size_t p = 0; p < k; ++p) {
      const float a = A[r * k + p];
      for (std::size_t j = 0; j < M; ++j) acc[j] += a * B[p * M + j];
    }
    for (std::size_t j = 0; j < M; ++j) out[r * M + j] += acc[j];
  }
}

inline void gemm_narrow(const float* A, const float* B, float* out, std::size_t n, std::size_t k, std::size_t m) {
  switch (m) {
    case 8: return gemm_narrow_fixed<8>(A, B, out, n, k);
    case 16: return gemm_narrow_fixed<16>(A, B, out, n, k);
    default: return gemm_accumulate(A, B, out, n, k, m);
  }
}

// Rows are output pixels (n, y, x); columns are (ky, kx, c), matching the
// kernel layout, so the convolution is one (B*H*W, 9*Cin) x (9*Cin, Cout)
// product.
inline std::vector<float> im2col3x3(const float* X, std::size_t B, std::size_t H, std::size_t W, std::size_t ci) {
  std::vector<float> cols(B * H * W * 9 * ci, 0.0f);
  float* dst = cols.data();
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x, dst += 9 * ci) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
          if (y + ky < 1 || y + ky > H) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            if (x + kx < 1 || x + kx > W) continue;
            const float* src = X + ((n * H + y + ky - 1) * W + x + kx - 1) * ci;
            std::copy(src, src + ci, dst + (ky * 3 + kx) * ci);
          }
        }
      }
    }
  }
  return cols;
}

inline void col2im3x3_add(const float* cols, float* gx, std::size_t B, std::size_t H, std::size_t W,
                          std::size_t ci) {
  const float* src = cols;
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x, src += 9 * ci) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
          if (y + ky < 1 || y + ky > H) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            if (x + kx < 1 || x + kx > W) continue;
            float* dst = gx + ((n * H + y + ky - 1) * W + x + kx - 1) * ci;
            const float* s = src + (ky * 3 + kx) * ci;
            for (std::size_t c = 0; c < ci; ++c) dst[c] += s[c];
          }
        }
      }
    }
  }
}

}  // namespace detail

inline Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require_rank("conv3x3", x, 4);
  if (w.rank() != 4 || w.dim(0) != 3 || w.dim(1) != 3 || w.dim(2) != x.dim(3)) {
    throw ShapeError("conv3x3: kernel " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  const std::size_t co = w.dim(3);
  if (b.rank() != 1 || b.dim(0) != co) {
    throw ShapeError("conv3x3: bias " + shape_str(b.shape()) + " incompatible with kernel " +
                     shape_str(w.shape()));
  }
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), ci = x.dim(3);
  const std::size_t rows = B * H * W, k = 9 * ci;
  auto cols = std::make_shared<std::vector<float>>(detail::im2col3x3(x.data().data(), B, H, W, ci));
  std::vector<float> out(rows * co);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < co; ++o) out[r * co + o] = b[o];
  }
  detail::gemm_narrow(cols->data(), w.data().data(), out.data(), rows, k, co);
  return detail::make_result(
      {B, H, W, co}, std::move(out), "conv3x3", {&x, &w, &b}, [B, H, W, ci, co, rows, k, cols](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        const float* G = self.grad.data();
        if (pb.requires_grad) {
          auto& gb = pb.grad_buffer();
          std::vector<double> acc(co, 0.0);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t o = 0; o < co; ++o) acc[o] += G[i * co + o];
          }
          for (std::size_t o = 0; o < co; ++o) gb[o] += static_cast<float>(acc[o]);
        }
        if (pw.requires_grad) {
          // dK[j][o] = sum_r cols[r][j] * G[r][o], as k*Cout dot products over rows
          const auto ct = detail::transposed(cols->data(), rows, k);
          const auto gt = detail::transposed(G, rows, co);
          auto& gw = pw.grad_buffer();
          for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t o = 0; o < co; ++o) {
              gw[j * co + o] += static_cast<float>(detail::dot_double(ct.data() + j * rows, gt.data() + o * rows, rows));
            }
          }
        }
        if (px.requires_grad) {
          // dcols = G * K^T, scattered back onto the input pixels
          const auto kt = detail::transposed(pw.data.data(), k, co);
          std::vector<float> gcols(rows * k, 0.0f);
          detail::gemm_accumulate(G, kt.data(), gcols.data(), rows, co, k);
          detail::col2im3x3_add(gcols.data(), px.grad_buffer().data(), B, H, W, ci);
        }
      });
}

// 2x2 average pooling with stride 2 on NHWC (H and W must be even).
inline Tensor avg_pool2(const Tensor& x) {
  detail::require_rank("avg_pool2", x, 4);
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (H % 2 || W % 2) throw ShapeError("avg_pool2: odd spatial size in " + shape_str(x.shape()));
  const std::size_t h = H / 2, w = W / 2;
  std::vector<float> out(B * h * w * C);
  const float* X = x.data().data();
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        for (std::size_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) acc += X[((n * H + 2 * y + dy) * W + 2 * xx + dx) * C + c];
          }
          out[((n * h + y) * w + xx) * C + c] = static_cast<float>(acc / 4.0);
        }
      }
    }
  }
  return detail::make_result({B, h, w, C}, std::move(out), "avg_pool2", {&x},
                             [B, H, W, C](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               auto& g = p.grad_buffer();
                               const std::size_t h = H / 2, w = W / 2;
                               for (std::size_t n = 0; n < B; ++n) {
                                 for (std::size_t y = 0; y < H; ++y) {
                                   for (std::size_t xx = 0; xx < W; ++xx) {
                                     for (std::size_t c = 0; c < C; ++c) {
                                       g[((n * H + y) * W + xx) * C + c] +=
                                           0.25f * self.grad[((n * h + y / 2) * w + xx / 2) * C + c];
                                     }
                                   }
                                 }
                               }
                             });
}

}  // namespace zsd
