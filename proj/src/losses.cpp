#include "fedpft/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fedpft {

NegativeQueue::NegativeQueue(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), storage_(capacity * dim, Real(0)) {
  if (capacity == 0) throw std::invalid_argument("negative queue capacity must be positive");
  if (dim == 0) throw std::invalid_argument("negative queue key dimension must be positive");
}

NegativeQueue NegativeQueue::random(std::size_t capacity, std::size_t dim, std::mt19937_64& rng) {
  NegativeQueue q(capacity, dim);
  std::normal_distribution<Real> normal(0.0, 1.0);
  std::vector<Real> key(dim);
  for (std::size_t i = 0; i < capacity; ++i) {
    Real norm = 0;
    do {
      norm = 0;
      for (auto& v : key) {
        v = normal(rng);
        norm += v * v;
      }
    } while (norm == 0);
    norm = std::sqrt(norm);
    for (auto& v : key) v /= norm;
    q.push(key);
  }
  return q;
}

void NegativeQueue::push(std::span<const Real> key) {
  if (key.size() != dim_) {
    throw std::invalid_argument("queue key has " + std::to_string(key.size()) + " values, expected " +
                                std::to_string(dim_));
  }
  Real sq = 0;
  for (auto v : key) sq += v * v;
  if (!(std::abs(std::sqrt(sq) - 1) <= kUnitNormTolerance)) {
    throw std::invalid_argument("queue key is not unit norm (norm " + std::to_string(std::sqrt(sq)) + ")");
  }
  std::size_t slot;
  if (size_ < capacity_) {
    slot = (head_ + size_) % capacity_;
    ++size_;
  } else {
    slot = head_;
    head_ = (head_ + 1) % capacity_;
  }
  std::copy(key.begin(), key.end(), storage_.begin() + static_cast<std::ptrdiff_t>(slot * dim_));
}

void NegativeQueue::push(const Tensor& keys) {
  if (keys.cols() != dim_) throw std::invalid_argument("queue push: key width does not match queue");
  // Validate the whole batch before mutating.
  for (std::size_t i = 0; i < keys.rows(); ++i) {
    Real sq = 0;
    for (std::size_t j = 0; j < dim_; ++j) sq += keys.at(i, j) * keys.at(i, j);
    if (!(std::abs(std::sqrt(sq) - 1) <= kUnitNormTolerance))
      throw std::invalid_argument("queue key " + std::to_string(i) + " is not unit norm");
  }
  for (std::size_t i = 0; i < keys.rows(); ++i) push(keys.data().subspan(i * dim_, dim_));
}

Tensor NegativeQueue::keys() const {
  if (size_ == 0) throw std::logic_error("negative queue is empty");
  std::vector<Real> out;
  out.reserve(size_ * dim_);
  for (std::size_t i = 0; i < size_; ++i) {
    const std::size_t slot = (head_ + i) % capacity_;
    out.insert(out.end(), storage_.begin() + static_cast<std::ptrdiff_t>(slot * dim_),
               storage_.begin() + static_cast<std::ptrdiff_t>((slot + 1) * dim_));
  }
  return Tensor::matrix(size_, dim_, std::move(out));
}

std::vector<std::vector<Real>> NegativeQueue::contents() const {
  std::vector<std::vector<Real>> out;
  for (std::size_t i = 0; i < size_; ++i) {
    const std::size_t slot = (head_ + i) % capacity_;
    out.emplace_back(storage_.begin() + static_cast<std::ptrdiff_t>(slot * dim_),
                     storage_.begin() + static_cast<std::ptrdiff_t>((slot + 1) * dim_));
  }
  return out;
}

MomentumEncoders MomentumEncoders::from_online(const FeatureExtractor& phi, const ProjectionHead& hrho,
                                               Real momentum) {
  if (!(momentum >= 0 && momentum <= 1)) throw std::invalid_argument("momentum must lie in [0, 1]");
  return {frozen_copy(phi), frozen_copy(hrho), momentum};
}

namespace {

void blend(Tensor& slow, const Tensor& online, Real mu) {
  if (slow.shape() != online.shape()) {
    throw std::invalid_argument("momentum_update: shape mismatch " + ad::shape_string(slow.shape()) + " vs " +
                                ad::shape_string(online.shape()));
  }
  auto s = slow.mutable_data();
  const auto o = online.data();
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = mu * s[i] + (1 - mu) * o[i];
}

}  // namespace

void momentum_update(MomentumEncoders& enc, const FeatureExtractor& phi, const ProjectionHead& hrho) {
  if (enc.phi.layers.size() != phi.layers.size())
    throw std::invalid_argument("momentum_update: extractor depth mismatch");
  for (std::size_t i = 0; i < phi.layers.size(); ++i) {
    blend(enc.phi.layers[i].weight, phi.layers[i].weight, enc.momentum);
    blend(enc.phi.layers[i].bias, phi.layers[i].bias, enc.momentum);
  }
  blend(enc.hrho.head.weight, hrho.head.weight, enc.momentum);
  blend(enc.hrho.head.bias, hrho.head.bias, enc.momentum);
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  return ad::cross_entropy(tape, logits, labels);
}

Real cross_entropy(std::span<const Real> logits, int label) {
  Tape tape(Tape::Mode::inference);
  const int labels[] = {label};
  return ad::cross_entropy(tape, Tensor::matrix(1, logits.size(), {logits.begin(), logits.end()}), labels).item();
}

Tensor info_nce(Tape& tape, const Tensor& q, const Tensor& k_pos, const NegativeQueue& queue, Real temperature) {
  if (queue.empty()) throw std::invalid_argument("info_nce: negative queue is empty");
  if (!(temperature > 0)) throw std::invalid_argument("info_nce: temperature must be positive");
  return ad::info_nce(tape, q, k_pos, queue.keys(), temperature);
}

Real info_nce(std::span<const Real> q, std::span<const Real> k_pos, const NegativeQueue& queue, Real temperature) {
  Tape tape(Tape::Mode::inference);
  return info_nce(tape, Tensor::matrix(1, q.size(), {q.begin(), q.end()}),
                  Tensor::matrix(1, k_pos.size(), {k_pos.begin(), k_pos.end()}), queue, temperature)
      .item();
}

}  // namespace fedpft
