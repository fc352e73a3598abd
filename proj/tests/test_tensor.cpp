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

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "zsd/gradcheck.hpp"
#include "zsd/losses.hpp"
#include "zsd/optim.hpp"
#include "zsd/tensor.hpp"

namespace zsd {
namespace {

using testing::grads;
using testing::random_tensor;
using testing::random_unit_rows;
using testing::values;
using ::testing::ElementsAre;
using ::testing::FloatNear;
using ::testing::HasSubstr;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::from_data({2, 0}, {}), ShapeError);
  auto t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_FLOAT_EQ(t.at(1, 2), 6.0f);
}

TEST(Tensor, ReluClampsNegatives) { EXPECT_EQ(values(relu(Tensor::vector({-1, 2}))), (std::vector<float>{0, 2})); }

TEST(Tensor, MatmulByIdentity) {
  const auto eye = Tensor::matrix({{1, 0}, {0, 1}});
  const auto x = random_tensor({2, 5}, 3);
  EXPECT_EQ(values(matmul(eye, x)), values(x));
}

TEST(Tensor, MatmulMatchesNaiveProduct) {
  // Sizes straddle the 8-row blocking of the kernel.
  for (auto [n, k, m] : {std::tuple{1, 1, 1}, {3, 7, 5}, {9, 17, 13}, {16, 64, 8}, {33, 5, 40}}) {
    const auto a = random_tensor({std::size_t(n), std::size_t(k)}, n * 100 + k);
    const auto b = random_tensor({std::size_t(k), std::size_t(m)}, m * 100 + k);
    const auto c = matmul(a, b);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        double ref = 0.0;
        for (int t = 0; t < k; ++t) ref += double(a.at(i, t)) * b.at(t, j);
        EXPECT_NEAR(c.at(i, j), ref, 1e-5) << n << "x" << k << "x" << m;
      }
    }
  }
}

TEST(Tensor, ShapeMismatchNamesOperationAndShapes) {
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_THAT(msg, HasSubstr("add"));
    EXPECT_THAT(msg, HasSubstr("(2, 3)"));
    EXPECT_THAT(msg, HasSubstr("(3, 2)"));
  }
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  EXPECT_THROW(concat({Tensor::zeros({2, 3}), Tensor::zeros({2, 4})}, 0), ShapeError);
  EXPECT_THROW(gather_rows(Tensor::zeros({2, 3}), {2}), ShapeError);
}

TEST(Tensor, SumOfProductAndGradient) {
  auto a = Tensor::vector({1, 2, 3}, true);
  auto b = Tensor::vector({4, 5, 6});
  auto loss = sum(mul(a, b));
  EXPECT_FLOAT_EQ(loss.item(), 32.0f);
  loss.backward();
  EXPECT_EQ(grads(a), (std::vector<float>{4, 5, 6}));
  EXPECT_FALSE(b.has_grad());
}

TEST(Tensor, L2NormalizeExamples) {
  EXPECT_THAT(values(l2_normalize(Tensor::matrix({{3, 4}}))), ElementsAre(FloatNear(0.6f, 1e-7), FloatNear(0.8f, 1e-7)));
  const auto unit = Tensor::matrix({{0.6f, 0.8f}});
  EXPECT_THAT(values(l2_normalize(unit)), ElementsAre(FloatNear(0.6f, 1e-7), FloatNear(0.8f, 1e-7)));
  auto zero = Tensor::matrix({{0, 0}}, true);
  auto out = l2_normalize(zero);
  EXPECT_EQ(values(out), (std::vector<float>{0, 0}));
  sum(out).backward();
  for (float g : zero.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Tensor, LogSoftmaxExamples) {
  const float ln2 = std::log(2.0f);
  EXPECT_THAT(values(log_softmax(Tensor::matrix({{0, 0}}))), ElementsAre(FloatNear(-ln2, 1e-6), FloatNear(-ln2, 1e-6)));
  // log(e / (e + 1)) and log(1 / (e + 1)), computed independently.
  const double e = std::exp(1.0);
  EXPECT_THAT(values(log_softmax(Tensor::matrix({{1, 0}}))),
              ElementsAre(FloatNear(float(std::log(e / (e + 1))), 1e-6), FloatNear(float(-std::log(e + 1)), 1e-6)));
  EXPECT_NEAR(std::log(e / (e + 1)), -0.3133, 1e-4);
  const auto x = random_tensor({3, 5}, 11);
  auto shifted = Tensor::from_data(x.shape(), values(x));
  for (auto& v : shifted.mutable_data()) v += 7.5f;
  const auto a = values(log_softmax(x)), b = values(log_softmax(shifted));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
}

TEST(Tensor, BackwardOfSumIsOnes) {
  auto x = Tensor::vector({0.5f, -2, 3}, true);
  sum(x).backward();
  EXPECT_EQ(grads(x), (std::vector<float>{1, 1, 1}));
}

TEST(Tensor, BackwardPowerRule) {
  auto x = Tensor::vector({2}, true);
  sum(mul(x, x)).backward();
  EXPECT_EQ(grads(x), (std::vector<float>{4}));
}

TEST(Tensor, BackwardAccumulatesAcrossCalls) {
  auto x = Tensor::vector({1, 2}, true);
  sum(scale(x, 3)).backward();
  sum(scale(x, 3)).backward();
  EXPECT_EQ(grads(x), (std::vector<float>{6, 6}));
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, BackwardRequiresScalar) {
  auto x = Tensor::vector({1, 2}, true);
  EXPECT_THROW(scale(x, 2).backward(), ShapeError);
}

TEST(Tensor, SharedSubexpressionGetsBothPaths) {
  auto x = Tensor::vector({1.5f}, true);
  auto y = exp(x);
  sum(add(y, mul(y, y))).backward();  // d/dx (e^x + e^2x) = e^x + 2 e^2x
  const double ex = std::exp(1.5);
  EXPECT_NEAR(x.grad()[0], ex + 2 * ex * ex, 1e-3);
}

TEST(Tensor, NoGradGuardBuildsNoGraph) {
  auto x = Tensor::vector({1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  EXPECT_FALSE(y.requires_grad());
  auto z = mul(x, x);
  EXPECT_TRUE(z.requires_grad());
}

TEST(Tensor, GatherConcatTransposeValues) {
  const auto a = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  EXPECT_EQ(values(gather_rows(a, {2, 0, 2})), (std::vector<float>{5, 6, 1, 2, 5, 6}));
  EXPECT_EQ(values(transpose(a)), (std::vector<float>{1, 3, 5, 2, 4, 6}));
  const auto c0 = concat({a, Tensor::matrix({{7, 8}})}, 0);
  EXPECT_EQ(c0.shape(), (Shape{4, 2}));
  const auto c1 = concat({a, Tensor::matrix({{9}, {9}, {9}})}, 1);
  EXPECT_EQ(values(c1), (std::vector<float>{1, 2, 9, 3, 4, 9, 5, 6, 9}));
  EXPECT_EQ(values(pick(a, {1, 0, 1})), (std::vector<float>{2, 3, 6}));
}

// --- grad_check

TEST(GradCheck, PolynomialPassesTightly) {
  const auto x = Tensor::vector({0.3f, -0.7f, 0.5f, 0.1f});
  const auto r = grad_check([](const Tensor& t) { return sum(mul(t, t)); }, x, 1e-3, 1e-4);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(GradCheck, FeatureL2OnUnitRows) {
  const auto teacher = random_unit_rows(4, 8, 2);
  const auto r = grad_check([&](const Tensor& s) { return feature_l2(s, teacher); }, random_unit_rows(4, 8, 1));
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(GradCheck, CatchesWrongGradient) {
  // Square whose backward claims d/dx = x instead of 2x.
  auto bad_square = [](const Tensor& a) {
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * a[i];
    return detail::make_result(a.shape(), std::move(out), "bad_square", {&a}, [](detail::Node& self) {
      auto& p = *self.parents[0];
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * p.data[i];
    });
  };
  const auto r = grad_check([&](const Tensor& t) { return sum(bad_square(t)); }, Tensor::vector({0.9f, -1.2f}));
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 0.1);
}

// Every differentiable op, composed with a fixed random projection to a
// scalar, against central differences: 20 seeds, batch 2 and 4, dim 8.
struct OpCase {
  std::string name;
  std::function<Tensor(const Tensor&, std::uint64_t)> fn;
  std::function<Tensor(std::size_t, std::uint64_t)> input;
};

void PrintTo(const OpCase& c, std::ostream* os) { *os << c.name; }

Tensor project(const Tensor& y, std::uint64_t seed) { return sum(mul(y, random_tensor(y.shape(), seed ^ 0xabc))); }

// Keeps entries away from the relu kink.
Tensor off_zero(std::size_t b, std::uint64_t seed) {
  auto t = random_tensor({b, 8}, seed);
  for (auto& v : t.mutable_data()) v = v < 0 ? v - 0.05f : v + 0.05f;
  return t;
}

std::vector<OpCase> op_cases() {
  auto rows = [](std::size_t b, std::uint64_t s) { return random_tensor({b, 8}, s); };
  auto positive = [](std::size_t b, std::uint64_t s) { return random_tensor({b, 8}, s, 0.2f, 2.0f); };
  auto image = [](std::size_t b, std::uint64_t s) { return random_tensor({b, 4, 4, 2}, s); };
  return {
      {"add", [](const Tensor& x, std::uint64_t s) { return project(add(x, random_tensor(x.shape(), s + 1)), s); }, rows},
      {"add_self", [](const Tensor& x, std::uint64_t s) { return project(add(x, x), s); }, rows},
      {"sub", [](const Tensor& x, std::uint64_t s) { return project(sub(random_tensor(x.shape(), s + 1), x), s); }, rows},
      {"mul", [](const Tensor& x, std::uint64_t s) { return project(mul(x, random_tensor(x.shape(), s + 1)), s); }, rows},
      {"mul_self", [](const Tensor& x, std::uint64_t s) { return project(mul(x, x), s); }, rows},
      {"scale", [](const Tensor& x, std::uint64_t s) { return project(scale(x, -1.7f), s); }, rows},
      {"mul_scalar",
       [](const Tensor& x, std::uint64_t s) { return project(mul_scalar(x, sum(scale(x, 0.1f))), s); }, rows},
      {"relu", [](const Tensor& x, std::uint64_t s) { return project(relu(x), s); }, off_zero},
      {"exp", [](const Tensor& x, std::uint64_t s) { return project(exp(x), s); }, rows},
      {"log", [](const Tensor& x, std::uint64_t s) { return project(log(x), s); }, positive},
      {"sqrt", [](const Tensor& x, std::uint64_t s) { return project(sqrt(x), s); }, positive},
      {"sum", [](const Tensor& x, std::uint64_t) { return sum(mul(x, x)); }, rows},
      {"mean", [](const Tensor& x, std::uint64_t) { return mean(mul(x, x)); }, rows},
      {"sum_axis0", [](const Tensor& x, std::uint64_t s) { return project(sum(x, 0), s); }, rows},
      {"sum_axis1", [](const Tensor& x, std::uint64_t s) { return project(sum(x, 1), s); }, rows},
      {"row_norm", [](const Tensor& x, std::uint64_t s) { return project(row_norm(x), s); }, rows},
      {"reshape", [](const Tensor& x, std::uint64_t s) { return project(reshape(x, {x.size() / 4, 4}), s); }, rows},
      {"transpose", [](const Tensor& x, std::uint64_t s) { return project(transpose(x), s); }, rows},
      {"concat0", [](const Tensor& x, std::uint64_t s) { return project(concat({x, mul(x, x)}, 0), s); }, rows},
      {"concat1",
       [](const Tensor& x, std::uint64_t s) { return project(concat({x, random_tensor({x.dim(0), 3}, s)}, 1), s); },
       rows},
      {"gather_rows",
       [](const Tensor& x, std::uint64_t s) { return project(gather_rows(x, {x.dim(0) - 1, 0, 0, 1}), s); }, rows},
      {"pick",
       [](const Tensor& x, std::uint64_t s) {
         std::vector<std::size_t> idx(x.dim(0));
         for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = (i * 3 + s) % 8;
         return project(pick(x, idx), s);
       },
       rows},
      {"matmul_left", [](const Tensor& x, std::uint64_t s) { return project(matmul(x, random_tensor({8, 5}, s)), s); },
       rows},
      {"matmul_right",
       [](const Tensor& x, std::uint64_t s) { return project(matmul(random_tensor({3, x.dim(0)}, s), x), s); }, rows},
      {"matmul_gram", [](const Tensor& x, std::uint64_t s) { return project(matmul(x, transpose(x)), s); }, rows},
      {"add_bias",
       [](const Tensor& x, std::uint64_t s) { return project(add_bias(random_tensor(x.shape(), s), sum(x, 0)), s); },
       rows},
      {"l2_normalize", [](const Tensor& x, std::uint64_t s) { return project(l2_normalize(x), s); }, rows},
      {"log_softmax1", [](const Tensor& x, std::uint64_t s) { return project(log_softmax(x, 1), s); }, rows},
      {"log_softmax0", [](const Tensor& x, std::uint64_t s) { return project(log_softmax(x, 0), s); }, rows},
      {"softmax", [](const Tensor& x, std::uint64_t s) { return project(softmax(scale(x, 3)), s); }, rows},
      {"conv3x3_input",
       [](const Tensor& x, std::uint64_t s) {
         return project(conv3x3(x, random_tensor({3, 3, 2, 3}, s), random_tensor({3}, s + 1)), s);
       },
       image},
      {"conv3x3_kernel",
       [](const Tensor& w, std::uint64_t s) {
         return project(conv3x3(random_tensor({2, 4, 4, 2}, s), reshape(w, {3, 3, 2, 3}), random_tensor({3}, s)), s);
       },
       [](std::size_t, std::uint64_t s) { return random_tensor({54}, s); }},
      {"conv3x3_bias",
       [](const Tensor& b, std::uint64_t s) {
         return project(conv3x3(random_tensor({2, 4, 4, 2}, s), random_tensor({3, 3, 2, 3}, s), b), s);
       },
       [](std::size_t, std::uint64_t s) { return random_tensor({3}, s); }},
      {"avg_pool2", [](const Tensor& x, std::uint64_t s) { return project(avg_pool2(x), s); }, image},
  };
}

class OpGradients : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradients, MatchFiniteDifferences) {
  const auto& c = GetParam();
  for (std::size_t batch : {2u, 4u}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto x = c.input(batch, seed * 7919 + batch);
      const auto r = grad_check([&](const Tensor& t) { return c.fn(t, seed); }, x, 1e-3, 1e-3);
      ASSERT_TRUE(r.passed) << c.name << " batch " << batch << " seed " << seed << " err " << r.max_rel_error
                            << " at " << r.worst_index << " analytic " << r.analytic[r.worst_index] << " numeric "
                            << r.numeric[r.worst_index];
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradients, ::testing::ValuesIn(op_cases()),
                         [](const ::testing::TestParamInfo<OpCase>& info) { return info.param.name; });

// --- invariants

TEST(TensorProperty, SoftmaxRowsSumToOne) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto x = random_tensor({4, 9}, seed, -50.0f, 50.0f);
    const auto p = softmax(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 9; ++c) s += p.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-6) << "seed " << seed;
    }
  }
}

TEST(TensorProperty, NormalizedRowsHaveUnitNorm) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    // Row scales from 1e-6 up to 1e3.
    auto x = random_tensor({4, 8}, seed);
    auto d = x.mutable_data();
    const float scales[] = {1e-6f, 1e-3f, 1.0f, 1e3f};
    for (std::size_t r = 0; r < 4; ++r) {
      double n = 0.0;
      for (std::size_t c = 0; c < 8; ++c) n += double(d[r * 8 + c]) * d[r * 8 + c];
      for (std::size_t c = 0; c < 8; ++c) d[r * 8 + c] = float(d[r * 8 + c] / std::sqrt(n) * scales[r] * 1.5);
    }
    const auto y = l2_normalize(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double n = 0.0;
      for (std::size_t c = 0; c < 8; ++c) n += double(y.at(r, c)) * y.at(r, c);
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6) << "seed " << seed << " row " << r;
    }
  }
}

TEST(TensorProperty, BackwardPopulatesEveryReachableLeaf) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto w = random_tensor({8, 4}, seed);
    w.set_requires_grad(true);
    auto b = random_tensor({4}, seed + 1);
    b.set_requires_grad(true);
    auto unused = random_tensor({3}, seed + 2);
    unused.set_requires_grad(true);
    const auto x = random_tensor({2, 8}, seed + 3);
    sum(relu(add_bias(matmul(x, w), b))).backward();
    EXPECT_TRUE(w.has_grad());
    EXPECT_TRUE(b.has_grad());
    EXPECT_EQ(w.grad().size(), w.size());
    EXPECT_FALSE(unused.has_grad());
  }
}

// --- AdamW

ParamStore single(float p, float g, bool decay = true) {
  ParamStore ps;
  auto t = Tensor::vector({p}, true);
  ps.add("p", t, decay);
  // Seed the gradient through a linear function with slope g.
  sum(scale(ps.at("p"), g)).backward();
  return ps;
}

// One AdamW step computed directly from the update rule in double.
double reference_adamw_step(double p, double g, double lr, double b1, double b2, double eps, double wd) {
  const double m = (1 - b1) * g, v = (1 - b2) * g * g;
  const double mh = m / (1 - b1), vh = v / (1 - b2);
  return p - lr * mh / (std::sqrt(vh) + eps) - lr * wd * p;
}

TEST(AdamW, FirstStepExample) {
  auto ps = single(1.0f, 1.0f);
  AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.01});
  opt.step(ps);
  EXPECT_NEAR(ps.at("p")[0], 0.899, 1e-6);
  EXPECT_NEAR(ps.at("p")[0], reference_adamw_step(1, 1, 0.1, 0.9, 0.999, 1e-8, 0.01), 1e-6);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(AdamW, ZeroGradientZeroDecayIsFixedPoint) {
  for (float p : {-3.0f, 0.0f, 0.25f, 7.0f}) {
    auto ps = single(p, 0.0f);
    AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.0});
    for (int i = 0; i < 5; ++i) opt.step(ps);
    EXPECT_EQ(ps.at("p")[0], p);
  }
}

TEST(AdamW, DecayOnlyStep) {
  auto ps = single(2.0f, 0.0f);
  AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.01});
  opt.step(ps);
  EXPECT_NEAR(ps.at("p")[0], 2.0 * (1 - 0.001), 1e-6);
}

TEST(AdamW, NoDecayFlagSkipsDecay) {
  auto ps = single(2.0f, 0.0f, false);
  AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.01});
  opt.step(ps);
  EXPECT_EQ(ps.at("p")[0], 2.0f);
}

TEST(AdamW, MultiStepMatchesReferenceRecurrence) {
  const double lr = 0.05, b1 = 0.9, b2 = 0.99, eps = 1e-8, wd = 0.1;
  const std::vector<double> gs = {0.5, -1.0, 2.0, 0.1, -0.3};
  ParamStore ps;
  ps.add("p", Tensor::vector({1.0f}, true));
  AdamW opt({lr, b1, b2, eps, wd});
  double p = 1.0, m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= gs.size(); ++t) {
    ps.zero_grad();
    sum(scale(ps.at("p"), float(gs[t - 1]))).backward();
    opt.step(ps);
    m = b1 * m + (1 - b1) * gs[t - 1];
    v = b2 * v + (1 - b2) * gs[t - 1] * gs[t - 1];
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    p = p - lr * mh / (std::sqrt(vh) + eps) - lr * wd * p;
    EXPECT_NEAR(ps.at("p")[0], p, 1e-5) << "step " << t;
    EXPECT_EQ(opt.step_count(), std::int64_t(t));
  }
}

TEST(AdamW, NaNGradientNamesParameter) {
  ParamStore ps;
  ps.add("encoder.w", Tensor::vector({1.0f}, true));
  sum(scale(ps.at("encoder.w"), std::nanf(""))).backward();
  AdamW opt;
  try {
    opt.step(ps);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_THAT(std::string(e.what()), HasSubstr("encoder.w"));
  }
  EXPECT_EQ(opt.step_count(), 0);
}

TEST(AdamW, ParamsWithoutGradientAreUntouched) {
  ParamStore ps;
  ps.add("a", Tensor::vector({1.0f}, true));
  ps.add("b", Tensor::vector({5.0f}, true));
  sum(ps.at("a")).backward();
  AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.5});
  opt.step(ps);
  EXPECT_EQ(ps.at("b")[0], 5.0f);
  EXPECT_NE(ps.at("a")[0], 1.0f);
}

TEST(ParamStore, DuplicateNameRejected) {
  ParamStore ps;
  ps.add("w", Tensor::scalar(1));
  EXPECT_THROW(ps.add("w", Tensor::scalar(2)), Error);
}

TEST(ParamStore, FingerprintTracksValues) {
  ParamStore ps;
  ps.add("w", Tensor::vector({1, 2}));
  const auto before = ps.fingerprint();
  ps.at("w").mutable_data()[1] = 2.5f;
  EXPECT_NE(ps.fingerprint(), before);
  ps.at("w").mutable_data()[1] = 2.0f;
  EXPECT_EQ(ps.fingerprint(), before);
}

}  // namespace
}  // namespace zsd
