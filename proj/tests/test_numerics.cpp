#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "mvcl/autodiff.hpp"
#include "mvcl/error.hpp"
#include "mvcl/gradcheck.hpp"
#include "mvcl/rng.hpp"
#include "mvcl/tensor.hpp"

using namespace mvcl;

namespace {

Tensor randn(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

Var leaf(std::size_t r, std::size_t c, Rng& rng) { return Var(randn(r, c, rng), true); }

// Contracts an op's output with fixed random weights so every output entry
// reaches the scalar.
Var contract(const Var& y, const Tensor& w) {
  return y.value().numel() == 1 ? y : weighted_sum(y, w);
}

struct OpCase {
  std::string name;
  // Builds inputs from rng and returns (function, params).
  std::function<std::pair<std::function<Var()>, std::vector<NamedVar>>(Rng&)> build;
};

template <class F>
std::pair<std::function<Var()>, std::vector<NamedVar>> unary(Rng& rng, std::size_t r, std::size_t c,
                                                             std::size_t out_r, std::size_t out_c,
                                                             F op) {
  Var x = leaf(r, c, rng);
  const Tensor w = randn(out_r, out_c, rng);
  return {[=] { return contract(op(x), w.reshaped({out_r, out_c})); }, {{"x", x}}};
}

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  cases.push_back({"matmul", [](Rng& rng) {
                     Var a = leaf(3, 4, rng), b = leaf(4, 2, rng);
                     const Tensor w = randn(3, 2, rng);
                     return std::pair<std::function<Var()>, std::vector<NamedVar>>{
                         [=] { return weighted_sum(matmul(a, b), w); }, {{"a", a}, {"b", b}}};
                   }});
  cases.push_back({"transpose", [](Rng& rng) {
                     return unary(rng, 3, 4, 4, 3, [](const Var& x) { return transpose(x); });
                   }});
  cases.push_back({"add_sub_mul", [](Rng& rng) {
                     Var a = leaf(3, 3, rng), b = leaf(3, 3, rng);
                     const Tensor w = randn(3, 3, rng);
                     return std::pair<std::function<Var()>, std::vector<NamedVar>>{
                         [=] { return weighted_sum(mul(add(a, b), sub(a, scale(b, 0.5))), w); },
                         {{"a", a}, {"b", b}}};
                   }});
  cases.push_back({"relu", [](Rng& rng) {
                     return unary(rng, 4, 3, 4, 3, [](const Var& x) { return relu(x); });
                   }});
  cases.push_back({"add_bias", [](Rng& rng) {
                     Var x = leaf(4, 3, rng), b = leaf(1, 3, rng);
                     const Tensor w = randn(4, 3, rng);
                     return std::pair<std::function<Var()>, std::vector<NamedVar>>{
                         [=] { return weighted_sum(add_bias(x, b), w); }, {{"x", x}, {"b", b}}};
                   }});
  cases.push_back({"add_tiled", [](Rng& rng) {
                     Var x = leaf(6, 3, rng), e = leaf(3, 3, rng);
                     const Tensor w = randn(6, 3, rng);
                     return std::pair<std::function<Var()>, std::vector<NamedVar>>{
                         [=] { return weighted_sum(add_tiled(x, e), w); }, {{"x", x}, {"e", e}}};
                   }});
  cases.push_back({"layer_norm", [](Rng& rng) {
                     Var x = leaf(3, 5, rng), g = leaf(1, 5, rng), b = leaf(1, 5, rng);
                     const Tensor w = randn(3, 5, rng);
                     return std::pair<std::function<Var()>, std::vector<NamedVar>>{
                         [=] { return weighted_sum(layer_norm(x, g, b), w); },
                         {{"x", x}, {"gamma", g}, {"beta", b}}};
                   }});
  cases.push_back({"softmax_rows", [](Rng& rng) {
                     return unary(rng, 3, 4, 3, 4, [](const Var& x) { return softmax_rows(x); });
                   }});
  cases.push_back({"l2_normalize_rows", [](Rng& rng) {
                     return unary(rng, 3, 4, 3, 4,
                                  [](const Var& x) { return l2_normalize_rows(x); });
                   }});
  cases.push_back({"masked_logsumexp_rows", [](Rng& rng) {
                     const std::vector<std::uint8_t> mask{1, 0, 1, 1, 1, 1, 0, 1, 0, 1, 1, 0};
                     return unary(rng, 3, 4, 1, 3,
                                  [mask](const Var& x) { return masked_logsumexp_rows(x, mask); });
                   }});
  cases.push_back({"sum", [](Rng& rng) {
                     return unary(rng, 3, 4, 1, 1, [](const Var& x) { return sum(x); });
                   }});
  cases.push_back({"segment_mean", [](Rng& rng) {
                     return unary(rng, 6, 3, 2, 3, [](const Var& x) { return segment_mean(x, 2); });
                   }});
  cases.push_back({"concat_cols", [](Rng& rng) {
                     Var a = leaf(3, 2, rng), b = leaf(3, 4, rng);
                     const Tensor w = randn(3, 6, rng);
                     return std::pair<std::function<Var()>, std::vector<NamedVar>>{
                         [=] { return weighted_sum(concat_cols(a, b), w); }, {{"a", a}, {"b", b}}};
                   }});
  cases.push_back({"concat_rows", [](Rng& rng) {
                     Var a = leaf(2, 3, rng), b = leaf(1, 3, rng);
                     const Tensor w = randn(3, 3, rng);
                     return std::pair<std::function<Var()>, std::vector<NamedVar>>{
                         [=] {
                           const std::vector<Var> parts{a, b};
                           return weighted_sum(concat_rows(parts), w);
                         },
                         {{"a", a}, {"b", b}}};
                   }});
  cases.push_back({"interleave_rows", [](Rng& rng) {
                     Var a = leaf(2, 3, rng), b = leaf(2, 3, rng), c = leaf(2, 3, rng);
                     const Tensor w = randn(6, 3, rng);
                     return std::pair<std::function<Var()>, std::vector<NamedVar>>{
                         [=] {
                           const std::vector<Var> parts{a, b, c};
                           return weighted_sum(interleave_rows(parts), w);
                         },
                         {{"a", a}, {"b", b}, {"c", c}}};
                   }});
  cases.push_back({"attention", [](Rng& rng) {
                     Var q = leaf(6, 4, rng), k = leaf(4, 4, rng), v = leaf(4, 4, rng);
                     const Tensor w = randn(6, 4, rng);
                     return std::pair<std::function<Var()>, std::vector<NamedVar>>{
                         [=] { return weighted_sum(attention(q, k, v, 2, 2), w); },
                         {{"q", q}, {"k", k}, {"v", v}}};
                   }});
  cases.push_back({"cosine_sim", [](Rng& rng) {
                     Var a = leaf(1, 5, rng), b = leaf(1, 5, rng);
                     return std::pair<std::function<Var()>, std::vector<NamedVar>>{
                         [=] { return cosine_sim(a, b); }, {{"a", a}, {"b", b}}};
                   }});
  return cases;
}

}  // namespace

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, SplitStreamsDiffer) {
  const Rng root(7);
  Rng a = root.split(1), b = root.split(2);
  int equal = 0;
  for (int i = 0; i < 64; ++i) equal += a.next_u64() == b.next_u64();
  EXPECT_LT(equal, 2);
}

TEST(Rng, StateResumesExactly) {
  Rng a(9);
  for (int i = 0; i < 5; ++i) a.next_u64();
  Rng b(a.state());
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, BelowStaysInRangeAndUniformLooksUniform) {
  Rng rng(3);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) {
    const auto k = rng.below(5);
    ASSERT_LT(k, 5u);
    ++counts[k];
  }
  for (int c : counts) EXPECT_NEAR(c / 50000.0, 0.2, 0.01);
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Tensor, ShapesAndAccess) {
  Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t(1, 2), 6.0);
  EXPECT_THROW(t.item(), Error);
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), Error);
  const std::vector<std::size_t> items{1};
  EXPECT_TRUE(bitwise_equal(gather_blocks(t, items, 1), Tensor::matrix(1, 3, {4, 5, 6})));
}

TEST(Tensor, BitwiseEqualSeesSignedZero) {
  EXPECT_FALSE(bitwise_equal(Tensor::vector({0.0}), Tensor::vector({-0.0})));
  EXPECT_TRUE(bitwise_equal(Tensor::vector({1.5}), Tensor::vector({1.5})));
}

TEST(Autodiff, CosineOfKnownVectors) {
  const Var a(Tensor::matrix(1, 3, {1, 2, 3}));
  const Var b(Tensor::matrix(1, 3, {4, 5, 6}));
  EXPECT_NEAR(cosine_sim(a, b).value().item(), 32.0 / std::sqrt(1078.0), 1e-15);
}

TEST(Autodiff, SoftmaxOfLogTwoAndZero) {
  const Var x(Tensor::matrix(1, 2, {std::numbers::ln2, 0.0}));
  const Tensor p = softmax_rows(x).value();
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(Autodiff, SoftmaxIsShiftStableForLargeInputs) {
  const Var x(Tensor::matrix(1, 3, {1000.0, 1000.0, 999.0}));
  const Tensor p = softmax_rows(x).value();
  EXPECT_TRUE(p.all_finite());
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
}

TEST(Autodiff, MatmulKnownProduct) {
  const Var a(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const Var b(Tensor::matrix(2, 1, {5, 6}));
  const Tensor c = matmul(a, b).value();
  EXPECT_EQ(c[0], 17.0);
  EXPECT_EQ(c[1], 39.0);
  EXPECT_THROW(matmul(b, b), Error);
}

TEST(Autodiff, LayerNormNormalizesRows) {
  const Var x(Tensor::matrix(1, 4, {1, 2, 3, 4}));
  const Var g(Tensor::vector({1, 1, 1, 1}));
  const Var b(Tensor::vector({0, 0, 0, 0}));
  const Tensor y = layer_norm(x, g, b).value();
  // mean 2.5, biased variance 1.25
  const double inv = 1.0 / std::sqrt(1.25 + 1e-5);
  EXPECT_NEAR(y[0], -1.5 * inv, 1e-14);
  EXPECT_NEAR(y[3], 1.5 * inv, 1e-14);
}

TEST(Autodiff, NonFiniteOutputIsNumericError) {
  const Var x(Tensor::matrix(1, 1, {1e308}));
  try {
    (void)scale(x, 10.0);
    FAIL() << "expected a numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numeric);
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
  }
}

TEST(Autodiff, ZeroRowCannotBeNormalized) {
  const Var x(Tensor::matrix(2, 2, {1, 0, 0, 0}));
  try {
    (void)l2_normalize_rows(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateInput);
  }
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
  Var x(Tensor::matrix(1, 1, {3.0}), true);
  const Var y = mul(x, x);  // x^2
  sum(add(y, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  Var x(Tensor::matrix(1, 2, {1.0, 2.0}), true);
  Var y;
  {
    NoGradGuard guard;
    y = sum(mul(x, x));
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Autodiff, FrozenLeafReceivesNoGradient) {
  Var x(Tensor::matrix(1, 2, {1.0, 2.0}), true);
  Var frozen(Tensor::matrix(1, 2, {3.0, 4.0}), false);
  sum(mul(x, frozen)).backward();
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(frozen.has_grad());
}

TEST(GradCheck, EveryPrimitivePassesAtTightTolerance) {
  for (const auto& c : op_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng = Rng(1234).split(seed);
      auto [f, params] = c.build(rng);
      const GradCheckReport r = grad_check(f, params, 1e-5, 1e-6);
      EXPECT_TRUE(r.passed()) << c.name << " seed " << seed << " err " << r.max_rel_error();
    }
  }
}

TEST(GradCheck, DetectsWrongGradient) {
  Rng rng(5);
  Var x = leaf(3, 3, rng);
  const Tensor w = randn(3, 3, rng);
  const auto f = [&] { return weighted_sum(testing_hooks::wrong_gradient_identity(x, 1.5), w); };
  const GradCheckReport r = grad_check(f, {{"x", x}});
  EXPECT_FALSE(r.passed());
  EXPECT_NEAR(r.max_rel_error(), 1.0 / 3.0, 1e-6);
}

TEST(GradCheck, RestoresParameterValues) {
  Rng rng(6);
  Var x = leaf(2, 2, rng);
  const Tensor before = x.value();
  (void)grad_check([&] { return sum(mul(x, x)); }, {{"x", x}});
  EXPECT_TRUE(bitwise_equal(before, x.value()));
}

TEST(GradCheck, RestoresValueWhenFunctionThrows) {
  Var x(Tensor::matrix(1, 2, {1.0, 0.0}), true);
  int calls = 0;
  const auto f = [&] {
    if (++calls > 1) fail(ErrorKind::Numeric, "boom");
    return sum(x);
  };
  EXPECT_THROW(grad_check(f, {{"x", x}}), Error);
  EXPECT_EQ(x.value()[0], 1.0);
}

TEST(GradCheck, RejectsStepOutsideRange) {
  Var x(Tensor::matrix(1, 1, {1.0}), true);
  EXPECT_THROW(grad_check([&] { return sum(x); }, {{"x", x}}, 1e-2), Error);
}

TEST(GradCheck, RelativeErrorFormula) {
  EXPECT_NEAR(relative_error(1.0, 1.1), 0.1 / 1.1, 1e-15);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-9 / 1e-8);
}

TEST(GradCheck, StepsAroundReluKink) {
  // x sits 1e-6 from the kink: a 1e-4 probe would straddle it.
  Var x(Tensor::matrix(1, 1, {1e-6}), true);
  const GradCheckReport r = grad_check([&] { return sum(relu(x)); }, {{"x", x}}, 1e-4);
  EXPECT_TRUE(r.passed()) << r.max_rel_error();
}
