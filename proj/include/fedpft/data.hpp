#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpft/model.hpp"

namespace fedpft {

struct Dataset {
  std::size_t num_classes = 0;
  std::size_t input_dim = 0;
  std::vector<Real> features;  // size() x input_dim, row-major
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const Real> row(std::size_t i) const { return {features.data() + i * input_dim, input_dim}; }

  // Rows at the given indices, in order.
  Dataset subset(std::span<const std::size_t> indices) const;
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  Tensor all_features() const;
  std::vector<std::size_t> class_histogram() const;

  void validate() const;
};

// Class c is an isotropic unit-variance Gaussian around a random unit-sphere
// center scaled by `spread`; classes are emitted in order, per_class each.
Dataset make_synthetic(std::size_t num_classes, std::size_t input_dim, std::size_t per_class, Real spread,
                       std::uint64_t seed);

// Same centers as make_synthetic with the same seed, fresh samples drawn
// from `sample_seed`.
Dataset make_synthetic_like(std::size_t num_classes, std::size_t input_dim, std::size_t per_class, Real spread,
                            std::uint64_t center_seed, std::uint64_t sample_seed);

// CSV with header `label,f0,f1,...`.
Dataset load_csv_dataset(const std::filesystem::path& path, std::size_t num_classes = 0);

struct PartitionAssignment {
  std::vector<std::vector<std::size_t>> clients;

  std::size_t num_clients() const { return clients.size(); }
  std::size_t assigned() const;
  // Throws unless lists are disjoint, in range and nonempty.
  void validate(std::size_t total) const;
};

// Per class, proportions ~ Dir(alpha) over the clients split that class's
// indices. Clients left empty take one sample from the currently largest
// client until none is empty.
PartitionAssignment dirichlet_partition(std::span<const int> labels, std::size_t num_clients, Real alpha,
                                        std::uint64_t seed);

// Every client gets exactly `classes_per_client` distinct classes with the
// same number of samples from each. Indices that do not fill a whole shard
// stay unassigned.
PartitionAssignment pathological_partition(std::span<const int> labels, std::size_t num_classes,
                                           std::size_t num_clients, std::size_t classes_per_client,
                                           std::uint64_t seed);

// Splits `pool` so that client i receives, for every class, a share
// proportional to train_histograms[i][c] (largest remainder). Used to give
// each client a test set with its training label distribution.
PartitionAssignment proportional_partition(std::span<const int> pool_labels,
                                           const std::vector<std::vector<std::size_t>>& train_histograms,
                                           std::uint64_t seed);

std::vector<std::size_t> class_histogram(std::span<const int> labels, std::span<const std::size_t> indices,
                                         std::size_t num_classes);

nlohmann::json partition_to_json(const PartitionAssignment& p, std::span<const int> labels,
                                 std::size_t num_classes);

struct AugmentationPolicy {
  Real noise_std = 0.1;
  Real mask_prob = 0.1;

  bool identity() const { return noise_std == 0 && mask_prob == 0; }
};

// Two independent views: x + N(0, noise_std^2) per coordinate, then each
// coordinate zeroed with probability mask_prob.
std::pair<std::vector<Real>, std::vector<Real>> two_views(std::span<const Real> x, const AugmentationPolicy& policy,
                                                          std::mt19937_64& rng);

// Row-wise two_views over a batch.
std::pair<Tensor, Tensor> two_views(const Tensor& batch, const AugmentationPolicy& policy, std::mt19937_64& rng);

}  // namespace fedpft
