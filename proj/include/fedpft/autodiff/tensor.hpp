#pragma once

#include <atomic>
#include <cstring>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedpft::ad {

using TensorId = std::uint64_t;
using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline TensorId next_tensor_id() {
  static std::atomic<TensorId> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
struct Node {
  TensorId id = next_tensor_id();
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  // True when the node is an output of an op recorded on some tape.
  bool recorded = false;
  std::optional<std::vector<T>> grad;
};

}  // namespace detail

// Dense row-major array. Copies are deep and produce a fresh detached leaf
// (new id, not linked to any tape); moves keep identity.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    for (auto extent : shape) {
      if (extent == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape));
    }
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor shape " + shape_string(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> data,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(data), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1, 1}, {value}, requires_grad);
  }

  Tensor(const Tensor& other) { copy_from(other); }
  Tensor& operator=(const Tensor& other) {
    if (this != &other) copy_from(other);
    return *this;
  }
  Tensor(Tensor&&) noexcept = default;
  Tensor& operator=(Tensor&&) noexcept = default;

  bool defined() const { return static_cast<bool>(node_); }
  TensorId id() const { return node().id; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const { return node().data.size(); }
  std::size_t rows() const { return rank() >= 2 ? shape()[rank() - 2] : 1; }
  std::size_t cols() const { return rank() >= 1 ? shape().back() : 1; }

  std::span<const T> data() const { return node().data; }
  std::span<T> mutable_data() { return node().data; }
  const std::vector<T>& values() const { return node().data; }

  T operator[](std::size_t i) const { return node().data[i]; }
  T at(std::size_t r, std::size_t c) const { return node().data[r * cols() + c]; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string(shape()));
    return node().data[0];
  }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool value) {
    node().requires_grad = value;
    if (!value) node().grad.reset();
  }
  // Participates in differentiation: a trainable leaf or a recorded op output.
  bool tracked() const { return defined() && (node().requires_grad || node().recorded); }

  const std::optional<std::vector<T>>& grad() const { return node().grad; }
  void zero_grad() { node().grad.reset(); }
  void set_grad(std::vector<T> g) {
    if (!requires_grad()) throw std::logic_error("set_grad on a tensor that does not require grad");
    if (g.size() != size()) throw ShapeError("set_grad: gradient size mismatch");
    node().grad = std::move(g);
  }

  // Deep copy with no gradient and no tape linkage.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<detail::Node<T>>();
    t.node_->shape = shape();
    t.node_->data = node().data;
    return t;
  }

  const std::shared_ptr<detail::Node<T>>& node_ptr() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node<T>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  detail::Node<T>& node() const {
    if (!node_) throw std::logic_error("use of an undefined tensor");
    return *node_;
  }

  void copy_from(const Tensor& other) {
    if (!other.node_) {
      node_.reset();
      return;
    }
    node_ = std::make_shared<detail::Node<T>>();
    node_->shape = other.node_->shape;
    node_->data = other.node_->data;
    node_->requires_grad = other.node_->requires_grad;
    node_->grad = other.node_->grad;
  }

  std::shared_ptr<detail::Node<T>> node_;
};

// Bitwise equality of shape and values.
template <typename T>
bool identical(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.values().size() * sizeof(T)) == 0;
}

}  // namespace fedpft::ad
