#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "fedpft/model.hpp"

namespace fedpft {

// Unit-norm tolerance for stored keys.
inline constexpr Real kUnitNormTolerance = 1e-6;

// FIFO ring buffer of unit-norm contrastive keys.
class NegativeQueue {
 public:
  NegativeQueue() = default;
  NegativeQueue(std::size_t capacity, std::size_t dim);

  // Queue filled with `capacity` random unit vectors.
  static NegativeQueue random(std::size_t capacity, std::size_t dim, std::mt19937_64& rng);

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  bool full() const { return size_ == capacity_; }

  // Appends the rows of `keys` (B x dim) in order, evicting the oldest keys
  // once full. Throws std::invalid_argument if any key is not unit norm.
  void push(const Tensor& keys);
  void push(std::span<const Real> key);

  // Stored keys from oldest to newest, one per row.
  Tensor keys() const;
  std::vector<std::vector<Real>> contents() const;

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::size_t size_ = 0;
  std::size_t head_ = 0;  // index of the oldest key
  std::vector<Real> storage_;
};

// Momentum copies of the extractor and projection head. They never require
// gradients.
struct MomentumEncoders {
  FeatureExtractor phi;
  ProjectionHead hrho;
  Real momentum = 0.999;

  static MomentumEncoders from_online(const FeatureExtractor& phi, const ProjectionHead& hrho, Real momentum);
};

// theta~ <- mu * theta~ + (1 - mu) * theta for every parameter.
void momentum_update(MomentumEncoders& enc, const FeatureExtractor& phi, const ProjectionHead& hrho);

// Mean cross-entropy over the rows of `logits`.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels);
Real cross_entropy(std::span<const Real> logits, int label);

// Mean InfoNCE of queries q against positives k_pos and the queue as
// negatives. The denominator holds the positive plus all K queued keys.
Tensor info_nce(Tape& tape, const Tensor& q, const Tensor& k_pos, const NegativeQueue& queue, Real temperature);
Real info_nce(std::span<const Real> q, std::span<const Real> k_pos, const NegativeQueue& queue, Real temperature);

}  // namespace fedpft
