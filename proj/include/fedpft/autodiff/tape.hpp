#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fedpft/autodiff/tensor.hpp"

namespace fedpft::ad {

template <typename T>
using GradMap = std::unordered_map<TensorId, std::vector<T>>;

// Define-by-run record of differentiable operations. A tape is built during a
// forward pass and consumed by exactly one backward sweep; a second sweep
// throws.
template <typename T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;
  // Receives the output gradient and one accumulator per input (nullptr for
  // inputs that do not need a gradient).
  using BackwardFn =
      std::function<void(const std::vector<T>& out_grad, std::vector<std::vector<T>*>& in_grads)>;

  enum class Mode { recording, inference };

  explicit Tape(Mode mode = Mode::recording) : mode_(mode) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::recording; }
  std::size_t size() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

  // True when an op over these inputs must be recorded.
  bool needs_record(std::initializer_list<const Tensor<T>*> inputs) const {
    if (!recording()) return false;
    for (const auto* t : inputs) {
      if (t->tracked()) return true;
    }
    return false;
  }

  void record(std::vector<const Tensor<T>*> inputs, Tensor<T>& output, BackwardFn fn) {
    if (consumed_) throw std::logic_error("recording onto a consumed tape");
    Op op;
    op.inputs.reserve(inputs.size());
    for (const auto* in : inputs) {
      const auto& node = in->node_ptr();
      if (node->recorded && !produced_.contains(node->id)) {
        throw std::logic_error("tensor " + std::to_string(node->id) +
                               " was produced on a different tape");
      }
      op.inputs.push_back(Input{node, node->shape, in->tracked()});
    }
    output.node_ptr()->recorded = true;
    op.output = output.node_ptr();
    op.output_shape = output.shape();
    op.backward = std::move(fn);
    produced_.insert(op.output->id);
    ops_.push_back(std::move(op));
  }

  // Reverse sweep from a scalar loss. Every requires_grad leaf that feeds a
  // recorded op gets an entry in the returned map (zeros when no gradient
  // flows) and has the gradient added to its grad buffer.
  GradMap<T> backward(const Tensor<T>& loss) {
    if (consumed_) throw std::logic_error("backward called twice on the same tape");
    if (loss.size() != 1) {
      throw ShapeError("backward requires a scalar loss, got " + shape_string(loss.shape()));
    }
    consumed_ = true;

    std::unordered_map<TensorId, std::vector<T>> grads;
    grads[loss.id()] = std::vector<T>{T(1)};

    std::vector<std::vector<T>*> in_grads;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      Op& op = *it;
      if (op.output->shape != op.output_shape) {
        throw ShapeError("tensor " + std::to_string(op.output->id) + " changed shape after recording");
      }
      auto found = grads.find(op.output->id);
      if (found == grads.end()) continue;
      in_grads.assign(op.inputs.size(), nullptr);
      for (std::size_t i = 0; i < op.inputs.size(); ++i) {
        const Input& in = op.inputs[i];
        if (!in.tracked) continue;
        if (in.node->shape != in.shape || in.node->data.size() != numel(in.shape)) {
          throw ShapeError("tensor " + std::to_string(in.node->id) + " changed shape after recording");
        }
        auto& buffer = grads[in.node->id];
        if (buffer.empty()) buffer.assign(in.node->data.size(), T(0));
        in_grads[i] = &buffer;
      }
      // References into an unordered_map survive rehashing; iterators do not.
      const std::vector<T>& out_grad = grads.at(op.output->id);
      op.backward(out_grad, in_grads);
    }

    GradMap<T> result;
    std::unordered_set<TensorId> seen;
    auto collect = [&](const NodePtr& node) {
      if (!node->requires_grad || node->recorded || !seen.insert(node->id).second) return;
      auto g = grads.find(node->id);
      std::vector<T> value =
          g != grads.end() ? g->second : std::vector<T>(node->data.size(), T(0));
      if (!node->grad) {
        node->grad = value;
      } else {
        for (std::size_t i = 0; i < value.size(); ++i) (*node->grad)[i] += value[i];
      }
      result.emplace(node->id, std::move(value));
    };
    for (const auto& op : ops_) {
      for (const auto& in : op.inputs) collect(in.node);
    }
    if (ops_.empty()) collect(loss.node_ptr());
    return result;
  }

 private:
  struct Input {
    NodePtr node;
    Shape shape;
    bool tracked;
  };
  struct Op {
    std::vector<Input> inputs;
    NodePtr output;
    Shape output_shape;
    BackwardFn backward;
  };

  Mode mode_;
  bool consumed_ = false;
  std::vector<Op> ops_;
  std::unordered_set<TensorId> produced_;
};

}  // namespace fedpft::ad
