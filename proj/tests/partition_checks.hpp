#pragma once

// Partition property checks shared by the unit tests and the acceptance
// binary. Each case returns an empty string on success.

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedpft/data.hpp"
#include "test_util.hpp"

namespace fedpft::testing {

// Disjoint, in range, no empty client; `complete` also demands every index.
inline std::string check_exact(const PartitionAssignment& p, std::size_t total, bool complete) {
  std::vector<int> seen(total, 0);
  for (std::size_t i = 0; i < p.clients.size(); ++i) {
    if (p.clients[i].empty()) return "client " + std::to_string(i) + " is empty";
    for (auto idx : p.clients[i]) {
      if (idx >= total) return "index " + std::to_string(idx) + " out of range";
      if (seen[idx]++) return "index " + std::to_string(idx) + " assigned twice";
    }
  }
  if (complete) {
    for (std::size_t i = 0; i < total; ++i)
      if (!seen[i]) return "index " + std::to_string(i) + " unassigned";
  }
  return {};
}

// Labels with every class present at least `min_per_class` times, shuffled.
inline std::vector<int> random_label_vector(std::mt19937_64& rng, std::size_t classes, std::size_t min_per_class,
                                            std::size_t extra) {
  std::vector<int> labels;
  for (std::size_t c = 0; c < classes; ++c) labels.insert(labels.end(), min_per_class, static_cast<int>(c));
  std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
  for (std::size_t i = 0; i < extra; ++i) labels.push_back(pick(rng));
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

inline std::string dirichlet_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t classes = uniform_size(rng, 1, 12);
  const auto labels = random_label_vector(rng, classes, 1, uniform_size(rng, 0, 300));
  const std::size_t clients = uniform_size(rng, 1, std::min<std::size_t>(labels.size(), 16));
  const Real alpha = std::exp(std::uniform_real_distribution<Real>(std::log(0.01), std::log(100.0))(rng));
  const auto p = dirichlet_partition(labels, clients, alpha, rng());
  if (p.num_clients() != clients) return "seed " + std::to_string(seed) + ": wrong client count";
  if (auto err = check_exact(p, labels.size(), true); !err.empty()) return "seed " + std::to_string(seed) + ": " + err;
  return {};
}

inline std::string pathological_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t classes = uniform_size(rng, 1, 12);
  const std::size_t k = uniform_size(rng, 1, classes);
  const std::size_t clients = uniform_size(rng, 1, 12);
  // Enough samples that every class can carry its shards.
  const std::size_t shards_per_class = (clients * k + classes - 1) / classes;
  const auto labels = random_label_vector(rng, classes, shards_per_class * uniform_size(rng, 1, 8),
                                          uniform_size(rng, 0, 100));
  const auto p = pathological_partition(labels, classes, clients, k, rng());
  std::ostringstream os;
  os << "seed " << seed << " (C=" << classes << ", k=" << k << ", N=" << clients << "): ";
  if (auto err = check_exact(p, labels.size(), false); !err.empty()) return os.str() + err;
  for (std::size_t i = 0; i < clients; ++i) {
    const auto h = class_histogram(labels, p.clients[i], classes);
    std::vector<std::size_t> present;
    for (auto n : h)
      if (n > 0) present.push_back(n);
    if (present.size() != k) return os.str() + "client " + std::to_string(i) + " has " +
                                    std::to_string(present.size()) + " classes";
    const auto [lo, hi] = std::minmax_element(present.begin(), present.end());
    if (*hi - *lo > 1) return os.str() + "client " + std::to_string(i) + " has unequal class counts";
  }
  return {};
}

// Mean over clients of the Shannon entropy (nats) of the label distribution.
inline Real mean_label_entropy(const PartitionAssignment& p, std::span<const int> labels, std::size_t classes) {
  Real total = 0;
  for (const auto& c : p.clients) {
    const auto h = class_histogram(labels, c, classes);
    Real e = 0;
    for (auto n : h) {
      if (n == 0) continue;
      const Real q = static_cast<Real>(n) / static_cast<Real>(c.size());
      e -= q * std::log(q);
    }
    total += e;
  }
  return total / static_cast<Real>(p.clients.size());
}

// Balanced labels, C=10, N=10; returns mean entropy at the given alpha.
inline Real dirichlet_entropy(Real alpha, std::uint64_t seed) {
  std::vector<int> labels;
  for (int c = 0; c < 10; ++c) labels.insert(labels.end(), 100, c);
  return mean_label_entropy(dirichlet_partition(labels, 10, alpha, seed), labels, 10);
}

}  // namespace fedpft::testing
