#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "fedpft/losses.hpp"
#include "moco_checks.hpp"
#include "test_util.hpp"

using namespace fedpft;
using namespace fedpft::testing;

namespace {

std::vector<Real> unit(std::size_t dim, std::size_t axis) {
  std::vector<Real> v(dim, 0);
  v[axis] = 1;
  return v;
}

}  // namespace

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  const std::vector<Real> logits(4, 0.3);
  EXPECT_NEAR(cross_entropy(logits, 2), std::log(4.0), 1e-12);
  EXPECT_NEAR(cross_entropy(logits, 2), 1.386294, 1e-6);
}

TEST(CrossEntropy, ConfidentCorrectClassApproachesZero) {
  EXPECT_LT(cross_entropy(std::vector<Real>{60, 0, 0}, 0), 1e-20);
}

TEST(CrossEntropy, TwoLogitExample) {
  // -ln(e^2 / (e^2 + 1)) evaluated directly.
  const Real oracle = -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0));
  EXPECT_NEAR(cross_entropy(std::vector<Real>{2, 0}, 0), oracle, 1e-12);
  EXPECT_NEAR(oracle, 0.126928, 1e-6);
}

TEST(CrossEntropy, StableForLargeLogits) {
  const Real loss = cross_entropy(std::vector<Real>{1000, -1000}, 1);
  EXPECT_NEAR(loss, 2000, 1e-9);
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
  EXPECT_ANY_THROW(cross_entropy(std::vector<Real>{1, 2}, 2));
  EXPECT_ANY_THROW(cross_entropy(std::vector<Real>{1, 2}, -1));
}

TEST(InfoNce, OrthogonalNegativesExample) {
  NegativeQueue queue(2, 3);
  queue.push(unit(3, 1));
  queue.push(unit(3, 2));
  const auto q = unit(3, 0);
  const Real e = std::exp(1.0);
  EXPECT_NEAR(info_nce(q, q, queue, 1.0), -std::log(e / (e + 2)), 1e-12);
  EXPECT_NEAR(info_nce(q, q, queue, 1.0), 0.551445, 1e-6);
  EXPECT_NEAR(info_nce(q, q, queue, 0.5), -std::log(e * e / (e * e + 2)), 1e-12);
  EXPECT_NEAR(info_nce(q, q, queue, 0.5), 0.2395448, 1e-7);
}

TEST(InfoNce, UniformSimilaritiesGiveLogKPlusOne) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_EQ(info_nce_uniform_case(seed), "") << seed;
}

TEST(InfoNce, RejectsEmptyQueueAndNonPositiveTemperature) {
  NegativeQueue empty(4, 2);
  const auto q = unit(2, 0);
  EXPECT_THROW(info_nce(q, q, empty, 0.07), std::invalid_argument);
  NegativeQueue queue(4, 2);
  queue.push(unit(2, 1));
  EXPECT_THROW(info_nce(q, q, queue, 0.0), std::invalid_argument);
  EXPECT_THROW(info_nce(q, q, queue, -1.0), std::invalid_argument);
}

TEST(InfoNce, BatchLossIsMeanOfRowLosses) {
  std::mt19937_64 rng(4);
  std::mt19937_64 qrng(5);
  auto queue = NegativeQueue::random(7, 3, qrng);
  std::vector<Real> qs, ks;
  Real expected = 0;
  for (int i = 0; i < 3; ++i) {
    auto q = random_unit(rng, 3), k = random_unit(rng, 3);
    expected += info_nce(q, k, queue, 0.2) / 3;
    qs.insert(qs.end(), q.begin(), q.end());
    ks.insert(ks.end(), k.begin(), k.end());
  }
  Tape tape(Tape::Mode::inference);
  EXPECT_NEAR(info_nce(tape, Tensor::matrix(3, 3, qs), Tensor::matrix(3, 3, ks), queue, 0.2).item(), expected, 1e-12);
}

TEST(NegativeQueue, PushOntoFullQueueEvictsOldest) {
  NegativeQueue queue(4, 4);
  for (std::size_t i = 0; i < 4; ++i) queue.push(unit(4, i));
  std::vector<Real> e = {0.6, 0.8, 0, 0};
  queue.push(e);
  const auto c = queue.contents();
  ASSERT_EQ(c.size(), 4u);
  EXPECT_EQ(c[0], unit(4, 1));
  EXPECT_EQ(c[1], unit(4, 2));
  EXPECT_EQ(c[2], unit(4, 3));
  EXPECT_EQ(c[3], e);
}

TEST(NegativeQueue, BatchPushOverflowKeepsCapacity) {
  NegativeQueue queue(4, 2);
  for (int i = 0; i < 3; ++i) queue.push(unit(2, i % 2));
  queue.push(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  EXPECT_EQ(queue.size(), 4u);
  EXPECT_TRUE(queue.full());
  const auto c = queue.contents();
  EXPECT_EQ(c[0], unit(2, 1));
  EXPECT_EQ(c[3], unit(2, 1));
}

TEST(NegativeQueue, PushOntoEmptyQueueSizeIsBatch) {
  NegativeQueue queue(8, 2);
  EXPECT_TRUE(queue.empty());
  queue.push(Tensor::matrix(3, 2, {1, 0, 0, 1, -1, 0}));
  EXPECT_EQ(queue.size(), 3u);
}

TEST(NegativeQueue, MatchesListOracle) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) ASSERT_EQ(queue_fifo_case(seed), "");
}

TEST(NegativeQueue, RejectsNonUnitKeysWithoutMutating) {
  NegativeQueue queue(4, 2);
  queue.push(unit(2, 0));
  EXPECT_THROW(queue.push(std::vector<Real>{1, 1}), std::invalid_argument);
  EXPECT_THROW(queue.push(Tensor::matrix(2, 2, {0, 1, 2, 0})), std::invalid_argument);
  EXPECT_EQ(queue.size(), 1u);
  EXPECT_THROW(queue.push(std::vector<Real>{1, 0, 0}), std::invalid_argument);
}

TEST(NegativeQueue, RandomQueueIsFullOfUnitKeys) {
  std::mt19937_64 rng(1);
  auto queue = NegativeQueue::random(16, 5, rng);
  EXPECT_TRUE(queue.full());
  for (const auto& k : queue.contents()) {
    Real sq = 0;
    for (auto v : k) sq += v * v;
    EXPECT_NEAR(sq, 1, 1e-12);
  }
}

TEST(NegativeQueue, RejectsZeroCapacity) { EXPECT_THROW(NegativeQueue(0, 3), std::invalid_argument); }

TEST(MomentumUpdate, EndpointsAndArithmetic) {
  ModelConfig cfg = tiny_model();
  const auto online = init_bundle(cfg, 1);
  const auto slow = init_bundle(cfg, 2);

  auto keep = MomentumEncoders::from_online(slow.phi, slow.hrho, 1.0);
  momentum_update(keep, online.phi, online.hrho);
  EXPECT_TRUE(ad::identical(keep.phi.layers[0].weight, slow.phi.layers[0].weight));
  EXPECT_TRUE(ad::identical(keep.hrho.head.bias, slow.hrho.head.bias));

  auto copy = MomentumEncoders::from_online(slow.phi, slow.hrho, 0.0);
  momentum_update(copy, online.phi, online.hrho);
  EXPECT_TRUE(ad::identical(copy.phi.layers[1].weight, online.phi.layers[1].weight));
  EXPECT_TRUE(ad::identical(copy.hrho.head.weight, online.hrho.head.weight));

  auto half = MomentumEncoders::from_online(slow.phi, slow.hrho, 0.5);
  auto target = online;
  half.phi.layers[0].weight.mutable_data()[0] = 2;
  target.phi.layers[0].weight.mutable_data()[0] = 4;
  momentum_update(half, target.phi, target.hrho);
  EXPECT_EQ(half.phi.layers[0].weight.data()[0], 3);
}

TEST(MomentumUpdate, ContractionIdentity) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) EXPECT_EQ(momentum_contraction_case(seed), "");
}

TEST(MomentumUpdate, EncodersNeverRequireGradients) {
  const auto online = init_bundle(tiny_model(), 3);
  auto enc = MomentumEncoders::from_online(online.phi, online.hrho, 0.9);
  for (const auto& l : enc.phi.layers) EXPECT_FALSE(l.weight.requires_grad());
  EXPECT_FALSE(enc.hrho.head.weight.requires_grad());
}

TEST(MomentumUpdate, RejectsShapeMismatchAndBadMomentum) {
  auto cfg = tiny_model();
  const auto a = init_bundle(cfg, 1);
  cfg.hidden = {7};
  const auto b = init_bundle(cfg, 1);
  auto enc = MomentumEncoders::from_online(a.phi, a.hrho, 0.5);
  EXPECT_THROW(momentum_update(enc, b.phi, b.hrho), std::invalid_argument);
  EXPECT_THROW(MomentumEncoders::from_online(a.phi, a.hrho, 1.5), std::invalid_argument);
  EXPECT_THROW(MomentumEncoders::from_online(a.phi, a.hrho, std::numeric_limits<Real>::quiet_NaN()),
               std::invalid_argument);
}
