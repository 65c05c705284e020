#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "fedpft/autodiff/tape.hpp"
#include "fedpft/autodiff/tensor.hpp"

namespace fedpft::ad {

// Parameters sharing one learning rate. Holds non-owning pointers into a
// model; the model must outlive the group.
template <typename T>
struct ParamGroup {
  std::string name;
  std::vector<Tensor<T>*> tensors;
  T learning_rate = T(0);
};

// Plain SGD: v <- v - lr * g for every member, then clears member grads.
// A zero learning rate is accepted and leaves values untouched.
template <typename T>
void sgd_step(ParamGroup<T>& group, const GradMap<T>& grads) {
  if (group.learning_rate < T(0)) {
    throw std::invalid_argument("sgd_step: negative learning rate for group '" + group.name + "'");
  }
  for (auto* t : group.tensors) {
    if (grads.find(t->id()) == grads.end()) {
      throw std::invalid_argument("sgd_step: no gradient for a member of group '" + group.name + "'");
    }
  }
  for (auto* t : group.tensors) {
    const auto& g = grads.at(t->id());
    auto v = t->mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= group.learning_rate * g[i];
    t->zero_grad();
  }
}

}  // namespace fedpft::ad
