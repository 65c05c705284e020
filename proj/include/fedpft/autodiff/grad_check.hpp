#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fedpft/autodiff/tape.hpp"
#include "fedpft/autodiff/tensor.hpp"

namespace fedpft::ad {

template <typename T>
using LossFn = std::function<Tensor<T>(Tape<T>&)>;

// Compares reverse-mode gradients of f against central differences and
// returns max |analytic - numeric| / max(1, |analytic|, |numeric|) over all
// coordinates of params. f must read params through the pointers given.
// Parameter values and grad buffers are restored on return.
template <typename T>
T grad_check(const LossFn<T>& f, const std::vector<Tensor<T>*>& params, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("grad_check: eps must be positive");

  std::vector<std::optional<std::vector<T>>> saved;
  std::vector<bool> saved_flags;
  for (auto* p : params) {
    saved.push_back(p->grad());
    saved_flags.push_back(p->requires_grad());
    p->set_requires_grad(true);
    p->zero_grad();
  }

  GradMap<T> analytic;
  {
    Tape<T> tape;
    auto loss = f(tape);
    analytic = tape.backward(loss);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->set_requires_grad(saved_flags[i]);
    params[i]->zero_grad();
  }

  auto evaluate = [&]() {
    Tape<T> tape(Tape<T>::Mode::inference);
    T value = f(tape).item();
    if (!std::isfinite(value)) throw std::domain_error("grad_check: loss is non-finite at a perturbed point");
    return value;
  };

  T worst = T(0);
  for (auto* p : params) {
    auto found = analytic.find(p->id());
    std::vector<T> a = found != analytic.end() ? found->second : std::vector<T>(p->size(), T(0));
    auto values = p->mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T original = values[i];
      values[i] = original + eps;
      const T up = evaluate();
      values[i] = original - eps;
      const T down = evaluate();
      values[i] = original;
      const T numeric = (up - down) / (T(2) * eps);
      const T denom = std::max({T(1), std::abs(a[i]), std::abs(numeric)});
      worst = std::max(worst, std::abs(a[i] - numeric) / denom);
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (saved[i]) params[i]->set_grad(*saved[i]);
  }
  return worst;
}

}  // namespace fedpft::ad
