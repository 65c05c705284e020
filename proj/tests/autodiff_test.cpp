#include <gtest/gtest.h>

#include <cmath>

#include "fedpft/autodiff.hpp"
#include "grad_cases.hpp"
#include "test_util.hpp"

namespace fedpft::ad {
namespace {

using T64 = Tensor<double>;
using Tape64 = Tape<double>;
using fedpft::testing::random_tensor;

TEST(Tensor, RejectsZeroExtentsAndSizeMismatch) {
  EXPECT_THROW(T64({0, 3}, {}), ShapeError);
  EXPECT_THROW(T64({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_NO_THROW(T64({2, 2}, {1, 2, 3, 4}));
}

TEST(Tensor, CopyIsDeepWithFreshIdentity) {
  T64 a = T64::matrix(1, 2, {1, 2}, true);
  T64 b = a;
  EXPECT_NE(a.id(), b.id());
  b.mutable_data()[0] = 7;
  EXPECT_EQ(a[0], 1);
  EXPECT_TRUE(b.requires_grad());
  T64 c = std::move(b);
  EXPECT_EQ(c[0], 7);
}

TEST(Tensor, IdenticalIsBitwise) {
  T64 a = T64::matrix(1, 1, {0.0});
  T64 b = T64::matrix(1, 1, {-0.0});
  EXPECT_FALSE(identical(a, b));
  EXPECT_TRUE(identical(a, T64(a)));
}

TEST(Backward, SquareAtThree) {
  T64 x = T64::scalar(3.0, true);
  Tape64 tape;
  auto y = mul(tape, x, x);
  auto g = tape.backward(y);
  EXPECT_DOUBLE_EQ(g.at(x.id())[0], 6.0);
  EXPECT_DOUBLE_EQ((*x.grad())[0], 6.0);
}

TEST(Backward, SumOfSoftmaxHasZeroGradient) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor(rng, 3, 5, true, 3.0);
    Tape64 tape;
    auto g = tape.backward(sum(tape, softmax_rows(tape, x)));
    for (auto v : g.at(x.id())) EXPECT_NEAR(v, 0.0, 1e-12);
  }
}

TEST(Backward, MatmulChainMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  auto a = random_tensor(rng, 3, 4, true);
  auto b = random_tensor(rng, 4, 2, true);
  auto c = random_tensor(rng, 2, 2, true);
  const double err = grad_check<double>(
      [&](Tape64& t) { return sum(t, matmul(t, matmul(t, a, b), c)); }, {&a, &b, &c}, 1e-4);
  EXPECT_LT(err, 1e-3);
}

TEST(Backward, RepeatedUseAccumulates) {
  std::mt19937_64 rng(3);
  auto x = random_tensor(rng, 2, 3, true);
  auto w1 = random_tensor(rng, 3, 2);
  auto w2 = random_tensor(rng, 3, 2);
  Tape64 tape;
  auto both = add(tape, sum(tape, matmul(tape, x, w1)), sum(tape, matmul(tape, x, w2)));
  const auto g = tape.backward(both).at(x.id());

  auto single = [&](const T64& w) {
    T64 x1 = x.detach();
    x1.set_requires_grad(true);
    Tape64 t;
    return t.backward(sum(t, matmul(t, x1, w))).at(x1.id());
  };
  const auto g1 = single(w1), g2 = single(w2);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], g1[i] + g2[i], 1e-12);
}

TEST(Backward, SecondSweepOnSameTapeIsRejected) {
  T64 x = T64::scalar(2.0, true);
  Tape64 tape;
  auto y = mul(tape, x, x);
  tape.backward(y);
  EXPECT_THROW(tape.backward(y), std::logic_error);
}

TEST(Backward, NonScalarLossIsRejected) {
  std::mt19937_64 rng(4);
  auto x = random_tensor(rng, 2, 2, true);
  Tape64 tape;
  auto y = relu(tape, x);
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Backward, FrozenTensorNeverAccumulates) {
  std::mt19937_64 rng(5);
  auto x = random_tensor(rng, 2, 2, true);
  auto frozen = random_tensor(rng, 2, 2, false);
  Tape64 tape;
  auto g = tape.backward(sum(tape, mul(tape, x, frozen)));
  EXPECT_FALSE(frozen.grad().has_value());
  EXPECT_FALSE(g.contains(frozen.id()));
  EXPECT_TRUE(g.contains(x.id()));
}

TEST(Backward, InferenceTapeRecordsNothing) {
  std::mt19937_64 rng(6);
  auto x = random_tensor(rng, 2, 2, true);
  Tape64 tape(Tape64::Mode::inference);
  auto y = sum(tape, relu(tape, x));
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.tracked());
}

TEST(Ops, ShapeMismatchesThrow) {
  std::mt19937_64 rng(7);
  Tape64 tape;
  EXPECT_THROW(matmul(tape, random_tensor(rng, 2, 3), random_tensor(rng, 2, 3)), ShapeError);
  EXPECT_THROW(add(tape, random_tensor(rng, 2, 3), random_tensor(rng, 3, 2)), ShapeError);
  AttentionWeights<double> w{random_tensor(rng, 3, 3), random_tensor(rng, 3, 3), random_tensor(rng, 3, 3),
                             random_tensor(rng, 3, 3)};
  EXPECT_THROW(attention_block(tape, random_tensor(rng, 2, 4), w), ShapeError);
}

TEST(Ops, SoftmaxRowsAreDistributions) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = fedpft::testing::uniform_size(rng, 1, 6), c = fedpft::testing::uniform_size(rng, 1, 8);
    Tape64 tape(Tape64::Mode::inference);
    auto s = softmax_rows(tape, random_tensor(rng, r, c, false, 10.0));
    for (std::size_t i = 0; i < r; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < c; ++j) {
        EXPECT_GE(s.at(i, j), 0.0);
        total += s.at(i, j);
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Ops, AttentionWithIdenticalRowsGivesIdenticalRows) {
  std::mt19937_64 rng(9);
  auto row = random_tensor(rng, 1, 4);
  Tape64 tape;
  auto x = concat_rows<double>(tape, {&row, &row, &row});
  AttentionWeights<double> w{random_tensor(rng, 4, 4), random_tensor(rng, 4, 4), random_tensor(rng, 4, 4),
                             random_tensor(rng, 4, 4)};
  auto out = attention_block(tape, x, w).output;
  for (std::size_t i = 1; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(out.at(i, j), out.at(0, j));
}

TEST(Ops, AttentionWithZeroScoresAveragesRows) {
  std::mt19937_64 rng(10);
  const std::size_t m = 3;
  auto x = random_tensor(rng, 4, m);
  std::vector<double> eye(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) eye[i * m + i] = 1;
  AttentionWeights<double> w{T64::zeros({m, m}), T64::zeros({m, m}), T64::matrix(m, m, eye), T64::matrix(m, m, eye)};
  Tape64 tape;
  auto out = attention_block(tape, x, w).output;
  for (std::size_t j = 0; j < m; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < 4; ++i) mean += x.at(i, j) / 4;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.at(i, j), mean, 1e-12);
  }
}

TEST(Ops, L2NormalizeRejectsZeroRow) {
  Tape64 tape;
  EXPECT_THROW(l2_normalize_rows(tape, T64::zeros({2, 3})), std::domain_error);
}

TEST(Sgd, ArithmeticExamples) {
  T64 v = T64::scalar(1.0, true);
  GradMap<double> grads{{v.id(), {0.5}}};
  ParamGroup<double> group{"v", {&v}, 0.1};
  sgd_step(group, grads);
  EXPECT_DOUBLE_EQ(v.item(), 0.95);

  grads[v.id()] = {0.0};
  sgd_step(group, grads);
  EXPECT_DOUBLE_EQ(v.item(), 0.95);

  group.learning_rate = 0;
  grads[v.id()] = {123.0};
  sgd_step(group, grads);
  EXPECT_DOUBLE_EQ(v.item(), 0.95);
}

TEST(Sgd, ClearsGradientsAndValidates) {
  T64 v = T64::scalar(1.0, true);
  v.set_grad({2.0});
  ParamGroup<double> group{"v", {&v}, 0.1};
  EXPECT_THROW(sgd_step(group, {}), std::invalid_argument);
  sgd_step(group, {{v.id(), {2.0}}});
  EXPECT_FALSE(v.grad().has_value());
  group.learning_rate = -0.1;
  EXPECT_THROW(sgd_step(group, {{v.id(), {2.0}}}), std::invalid_argument);
}

TEST(GradCheck, QuadraticIsExact) {
  std::mt19937_64 rng(11);
  auto x = random_tensor(rng, 2, 3, true);
  const double err = grad_check<double>(
      [&](Tape64& t) { return scale(t, sum(t, mul(t, x, x)), 0.5); }, {&x}, 1e-4);
  EXPECT_LT(err, 1e-6);
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
  std::mt19937_64 rng(12);
  auto x = random_tensor(rng, 2, 2, true);
  auto c = random_tensor(rng, 2, 2);
  EXPECT_EQ(grad_check<double>([&](Tape64& t) { return sum(t, c); }, {&x}, 1e-4), 0.0);
}

TEST(GradCheck, TinyClassifierCrossEntropy) {
  std::mt19937_64 rng(13);
  auto x = random_tensor(rng, 4, 3);
  auto w = random_tensor(rng, 5, 3, true);
  auto b = random_tensor(rng, 1, 5, true);
  Tensor<double> bias({5}, b.values(), true);
  const std::vector<int> y = {0, 4, 2, 2};
  const double err = grad_check<double>(
      [&](Tape64& t) { return cross_entropy(t, linear(t, x, w, bias), std::span<const int>(y)); }, {&w, &bias}, 1e-4);
  EXPECT_LT(err, 1e-3);
}

TEST(GradCheck, RestoresValuesAndFlags) {
  std::mt19937_64 rng(14);
  auto x = random_tensor(rng, 2, 2, false);
  const auto before = x.values();
  grad_check<double>([&](Tape64& t) { return sum(t, mul(t, x, x)); }, {&x}, 1e-3);
  EXPECT_EQ(x.values(), before);
  EXPECT_FALSE(x.requires_grad());
}

TEST(GradCheck, DetectsWrongGradient) {
  // A "loss" whose recorded backward is deliberately off by a factor of two.
  T64 x = T64::scalar(1.5, true);
  auto bad = [&](Tape64& t) {
    T64 y = T64::scalar(x.item() * x.item());
    if (t.needs_record({&x})) t.record({&x}, y, [&](const auto& g, auto& in) { (*in[0])[0] += g[0] * 4 * x.item(); });
    return y;
  };
  EXPECT_GT(grad_check<double>(bad, {&x}, 1e-4), 0.5);
}

class ComponentGradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(ComponentGradients, Float64) {
  const auto& c = fedpft::testing::grad_components()[GetParam()];
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    EXPECT_LT(c.check_f64(seed), fedpft::testing::GradCheckSettings<double>::tolerance) << c.name << " seed " << seed;
}

TEST_P(ComponentGradients, Float32) {
  const auto& c = fedpft::testing::grad_components()[GetParam()];
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    EXPECT_LT(c.check_f32(seed), fedpft::testing::GradCheckSettings<float>::tolerance) << c.name << " seed " << seed;
}

INSTANTIATE_TEST_SUITE_P(All, ComponentGradients,
                         ::testing::Range<std::size_t>(0, fedpft::testing::grad_components().size()));

}  // namespace
}  // namespace fedpft::ad
