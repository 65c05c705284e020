#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "fedpft/data.hpp"
#include "partition_checks.hpp"
#include "test_util.hpp"

using namespace fedpft;
using namespace fedpft::testing;

TEST(Synthetic, SizeAndLabels) {
  const auto d = make_synthetic(10, 16, 50, 2.0, 1);
  EXPECT_EQ(d.size(), 500u);
  EXPECT_EQ(d.features.size(), 500u * 16);
  EXPECT_NO_THROW(d.validate());
  for (auto n : d.class_histogram()) EXPECT_EQ(n, 50u);
}

TEST(Synthetic, SameSeedBitwiseIdentical) {
  const auto a = make_synthetic(4, 3, 20, 1.5, 9);
  const auto b = make_synthetic(4, 3, 20, 1.5, 9);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(0, std::memcmp(a.features.data(), b.features.data(), a.features.size() * sizeof(Real)));
  EXPECT_NE(a.features, make_synthetic(4, 3, 20, 1.5, 10).features);
}

TEST(Synthetic, LargeSpreadIsNearestCentroidSeparable) {
  const std::size_t c = 10, dim = 16;
  const auto train = make_synthetic(c, dim, 200, 20.0, 3);
  const auto test = make_synthetic_like(c, dim, 200, 20.0, 3, 77);
  std::vector<Real> centroid(c * dim, 0);
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j) centroid[train.labels[i] * dim + j] += train.row(i)[j] / 200;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    std::size_t best = 0;
    Real best_d = INFINITY;
    for (std::size_t k = 0; k < c; ++k) {
      Real d = 0;
      for (std::size_t j = 0; j < dim; ++j) d += std::pow(test.row(i)[j] - centroid[k * dim + j], 2);
      if (d < best_d) best_d = d, best = k;
    }
    correct += static_cast<int>(best) == test.labels[i];
  }
  EXPECT_GE(static_cast<Real>(correct) / test.size(), 0.99);
}

TEST(Synthetic, LikeSharesCentersButNotSamples) {
  const auto a = make_synthetic_like(3, 4, 2000, 5.0, 1, 10);
  const auto b = make_synthetic_like(3, 4, 2000, 5.0, 1, 11);
  EXPECT_NE(a.features, b.features);
  for (std::size_t j = 0; j < 4; ++j) {
    Real ma = 0, mb = 0;
    for (std::size_t i = 0; i < 2000; ++i) ma += a.row(i)[j] / 2000, mb += b.row(i)[j] / 2000;
    EXPECT_NEAR(ma, mb, 0.15);
  }
}

TEST(Synthetic, RejectsNonPositiveArguments) {
  EXPECT_THROW(make_synthetic(0, 2, 2, 1.0, 1), std::invalid_argument);
  EXPECT_THROW(make_synthetic(2, 2, 2, 0.0, 1), std::invalid_argument);
}

TEST(CsvDataset, RoundTripAndErrors) {
  const auto dir = scratch_dir("csv_dataset");
  {
    std::ofstream out(dir / "ok.csv");
    out << "label,f0,f1\n0,1.5,2\n2,-1,0.25\n";
  }
  const auto d = load_csv_dataset(dir / "ok.csv");
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.num_classes, 3u);
  EXPECT_EQ(d.row(1)[1], 0.25);
  {
    std::ofstream out(dir / "bad.csv");
    out << "label,f0\n0,1,2\n";
  }
  EXPECT_ANY_THROW(load_csv_dataset(dir / "bad.csv"));
  {
    std::ofstream out(dir / "header.csv");
    out << "y,f0\n0,1\n";
  }
  EXPECT_ANY_THROW(load_csv_dataset(dir / "header.csv"));
}

TEST(Dirichlet, ExactPartitionProperty) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) ASSERT_EQ(dirichlet_case(seed), "");
}

TEST(Dirichlet, HugeAlphaTracksGlobalHistogram) {
  std::vector<int> labels;
  for (int c = 0; c < 5; ++c) labels.insert(labels.end(), 400, c);
  const auto p = dirichlet_partition(labels, 4, 1e6, 11);
  for (const auto& client : p.clients) {
    const auto h = class_histogram(labels, client, 5);
    for (auto n : h) EXPECT_NEAR(static_cast<Real>(n), 100.0, 10.0);
  }
}

TEST(Dirichlet, SmallAlphaLeavesSomeClassMissing) {
  std::vector<int> labels;
  for (int c = 0; c < 10; ++c) labels.insert(labels.end(), 50, c);
  const auto p = dirichlet_partition(labels, 10, 0.1, 5);
  bool missing = false;
  for (const auto& client : p.clients)
    for (auto n : class_histogram(labels, client, 10)) missing |= n == 0;
  EXPECT_TRUE(missing);
}

TEST(Dirichlet, EntropyGrowsWithAlpha) {
  Real e01 = 0, e05 = 0, e1 = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    e01 += dirichlet_entropy(0.1, s);
    e05 += dirichlet_entropy(0.5, s);
    e1 += dirichlet_entropy(1.0, s);
  }
  EXPECT_LT(e01, e05);
  EXPECT_LT(e05, e1);
}

TEST(Dirichlet, DeterministicAndRepairsEmptyClients) {
  const std::vector<int> labels = {0, 0, 1, 1, 2};
  const auto a = dirichlet_partition(labels, 5, 0.01, 3);
  EXPECT_EQ(a.clients, dirichlet_partition(labels, 5, 0.01, 3).clients);
  EXPECT_EQ(check_exact(a, labels.size(), true), "");
}

TEST(Dirichlet, RejectsBadArguments) {
  const std::vector<int> labels = {0, 1};
  EXPECT_THROW(dirichlet_partition(labels, 3, 0.5, 1), std::invalid_argument);
  EXPECT_THROW(dirichlet_partition(labels, 1, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(dirichlet_partition(labels, 0, 0.5, 1), std::invalid_argument);
}

TEST(Pathological, TwoClassesPerClientExactly) {
  std::vector<int> labels;
  for (int c = 0; c < 10; ++c) labels.insert(labels.end(), 500, c);
  for (std::size_t n : {5u, 10u, 20u, 40u}) {
    const auto p = pathological_partition(labels, 10, n, 2, n);
    EXPECT_EQ(check_exact(p, labels.size(), false), "");
    for (const auto& client : p.clients) {
      std::size_t distinct = 0;
      for (auto h : class_histogram(labels, client, 10)) distinct += h > 0;
      EXPECT_EQ(distinct, 2u);
    }
  }
}

TEST(Pathological, ExactPartitionProperty) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) ASSERT_EQ(pathological_case(seed), "");
}

TEST(Pathological, RejectsInfeasibleArguments) {
  const std::vector<int> labels = {0, 1, 2};
  EXPECT_THROW(pathological_partition(labels, 3, 2, 4, 1), std::invalid_argument);
  EXPECT_THROW(pathological_partition(labels, 3, 4, 2, 1), std::invalid_argument);
}

TEST(Proportional, FollowsTrainingHistograms) {
  std::vector<int> pool;
  for (int c = 0; c < 3; ++c) pool.insert(pool.end(), 100, c);
  const std::vector<std::vector<std::size_t>> train = {{30, 0, 10}, {10, 20, 0}, {0, 20, 30}};
  const auto p = proportional_partition(pool, train, 4);
  EXPECT_EQ(check_exact(p, pool.size(), true), "");
  EXPECT_EQ(class_histogram(pool, p.clients[0], 3), (std::vector<std::size_t>{75, 0, 25}));
  EXPECT_EQ(class_histogram(pool, p.clients[1], 3), (std::vector<std::size_t>{25, 50, 0}));
  EXPECT_EQ(class_histogram(pool, p.clients[2], 3), (std::vector<std::size_t>{0, 50, 75}));
}

TEST(Proportional, LargestRemainderUsesWholeClass) {
  std::vector<int> pool(10, 0);
  const std::vector<std::vector<std::size_t>> train = {{1}, {1}, {1}};
  const auto p = proportional_partition(pool, train, 1);
  EXPECT_EQ(p.assigned(), 10u);
  for (const auto& c : p.clients) EXPECT_GE(c.size(), 3u);
}

TEST(Augmentation, IdentityPolicyReturnsInput) {
  std::mt19937_64 rng(1);
  const std::vector<Real> x = {1, -2, 3};
  auto [a, b] = two_views(x, AugmentationPolicy{0, 0}, rng);
  EXPECT_EQ(a, x);
  EXPECT_EQ(b, x);
}

TEST(Augmentation, NoisyViewsDiffer) {
  std::mt19937_64 rng(2);
  const std::vector<Real> x = {1, -2, 3};
  auto [a, b] = two_views(x, AugmentationPolicy{0.1, 0}, rng);
  EXPECT_NE(a, b);
  EXPECT_NE(a, x);
}

TEST(Augmentation, NoiseIsUnbiased) {
  std::mt19937_64 rng(3);
  const std::vector<Real> x = {0.5, -1, 2};
  const Real sigma = 0.5;
  std::vector<Real> mean(3, 0);
  const int n = 10000;
  for (int i = 0; i < n; i += 2) {
    auto [a, b] = two_views(x, AugmentationPolicy{sigma, 0}, rng);
    for (int j = 0; j < 3; ++j) mean[j] += (a[j] + b[j]) / n;
  }
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(mean[j], x[j], 3 * sigma / 100);
}

TEST(Augmentation, MaskZeroesAtTheRequestedRate) {
  std::mt19937_64 rng(4);
  const std::vector<Real> x(1000, 1.0);
  auto [a, b] = two_views(x, AugmentationPolicy{0, 0.3}, rng);
  const auto zeros = std::count(a.begin(), a.end(), 0.0) + std::count(b.begin(), b.end(), 0.0);
  EXPECT_NEAR(static_cast<Real>(zeros) / 2000, 0.3, 0.04);
}

TEST(Augmentation, RejectsInvalidPolicy) {
  std::mt19937_64 rng(5);
  const std::vector<Real> x = {1};
  EXPECT_THROW(two_views(x, AugmentationPolicy{-1, 0}, rng), std::invalid_argument);
  EXPECT_THROW(two_views(x, AugmentationPolicy{0, 1.5}, rng), std::invalid_argument);
}
