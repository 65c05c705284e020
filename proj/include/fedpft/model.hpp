#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedpft/autodiff.hpp"

namespace fedpft {

using Real = double;

struct ModelConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden = {32};
  std::size_t feature_dim = 16;  // m
  std::size_t num_classes = 10;  // C
  std::size_t proj_dim = 8;      // d_proj
  bool ffn_enabled = false;

  void validate() const;
};

inline void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw std::invalid_argument(std::string("model dimension '") + what + "' must be positive");
  };
  positive(input_dim, "input_dim");
  positive(feature_dim, "feature_dim");
  positive(proj_dim, "proj_dim");
  for (auto h : hidden) positive(h, "hidden");
  if (num_classes < 2) throw std::invalid_argument("model dimension 'num_classes' must be at least 2");
}

template <typename T>
struct Linear {
  ad::Tensor<T> weight;  // out x in
  ad::Tensor<T> bias;    // out

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

// MLP with ReLU after every layer, including the last.
template <typename T>
struct BasicFeatureExtractor {
  std::vector<Linear<T>> layers;

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }
};

// One single-head self-attention block with a residual connection over the
// (1+n) x m sequence of a feature followed by its prompts, then an optional
// residual feed-forward: y = X + attn(X), out = y [+ relu(y W^T + b)].
template <typename T>
struct BasicFeatureTransformer {
  ad::AttentionWeights<T> attn;
  bool ffn_enabled = false;
  Linear<T> ffn;  // m -> m, defined only when ffn_enabled

  std::size_t dim() const { return attn.wq.rows(); }
};

template <typename T>
struct BasicClassifier {
  Linear<T> head;  // m -> C
  std::size_t num_classes() const { return head.out_dim(); }
};

template <typename T>
struct BasicProjectionHead {
  Linear<T> head;  // m -> d_proj, output L2-normalized
};

enum class PromptKind { classification, contrastive };

inline const char* prompt_kind_name(PromptKind kind) {
  return kind == PromptKind::classification ? "p_kappa" : "p_rho";
}

// n learnable prompt vectors of width m, stored as one n x m matrix. An
// empty set (n = 0) holds no tensor.
template <typename T>
struct BasicPromptSet {
  PromptKind kind = PromptKind::classification;
  std::size_t dim = 0;
  std::optional<ad::Tensor<T>> prompts;

  std::size_t count() const { return prompts ? prompts->rows() : 0; }
  bool empty() const { return !prompts.has_value(); }

  BasicPromptSet detached() const {
    BasicPromptSet out{kind, dim, std::nullopt};
    if (prompts) out.prompts = prompts->detach();
    return out;
  }
};

template <typename T>
struct BasicModelBundle {
  BasicFeatureExtractor<T> phi;
  BasicFeatureTransformer<T> tau;
  BasicClassifier<T> hk;
  BasicProjectionHead<T> hrho;

  std::size_t feature_dim() const { return tau.dim(); }
};

using FeatureExtractor = BasicFeatureExtractor<Real>;
using FeatureTransformer = BasicFeatureTransformer<Real>;
using Classifier = BasicClassifier<Real>;
using ProjectionHead = BasicProjectionHead<Real>;
using PromptSet = BasicPromptSet<Real>;
using ModelBundle = BasicModelBundle<Real>;
using Tensor = ad::Tensor<Real>;
using Tape = ad::Tape<Real>;

// ---- parameter visiting ------------------------------------------------------

// Visits (canonical key, tensor) in the fixed serialization order.
template <typename T, typename Fn>
void for_each_param(BasicFeatureExtractor<T>& phi, Fn&& fn) {
  for (std::size_t i = 0; i < phi.layers.size(); ++i) {
    const std::string base = "phi.layer" + std::to_string(i);
    fn(base + ".weight", phi.layers[i].weight);
    fn(base + ".bias", phi.layers[i].bias);
  }
}

template <typename T, typename Fn>
void for_each_param(BasicFeatureTransformer<T>& tau, Fn&& fn) {
  fn(std::string("tau.wq"), tau.attn.wq);
  fn(std::string("tau.wk"), tau.attn.wk);
  fn(std::string("tau.wv"), tau.attn.wv);
  fn(std::string("tau.wo"), tau.attn.wo);
  if (tau.ffn_enabled) {
    fn(std::string("tau.ffn.weight"), tau.ffn.weight);
    fn(std::string("tau.ffn.bias"), tau.ffn.bias);
  }
}

template <typename T, typename Fn>
void for_each_param(BasicClassifier<T>& hk, Fn&& fn) {
  fn(std::string("hk.weight"), hk.head.weight);
  fn(std::string("hk.bias"), hk.head.bias);
}

template <typename T, typename Fn>
void for_each_param(BasicProjectionHead<T>& hrho, Fn&& fn) {
  fn(std::string("hrho.weight"), hrho.head.weight);
  fn(std::string("hrho.bias"), hrho.head.bias);
}

template <typename T, typename Fn>
void for_each_param(BasicModelBundle<T>& bundle, Fn&& fn) {
  for_each_param(bundle.phi, fn);
  for_each_param(bundle.tau, fn);
  for_each_param(bundle.hk, fn);
  for_each_param(bundle.hrho, fn);
}

template <typename C>
std::vector<ad::Tensor<Real>*> param_pointers(C& component) {
  std::vector<ad::Tensor<Real>*> out;
  for_each_param(component, [&](const std::string&, ad::Tensor<Real>& t) { out.push_back(&t); });
  return out;
}

// Copy of a component whose tensors do not require gradients; used as a
// stop-gradient barrier.
template <typename C>
C frozen_copy(const C& component) {
  C out = component;
  for_each_param(out, [](const std::string&, auto& t) { t.set_requires_grad(false); });
  return out;
}

std::size_t parameter_count(const ModelBundle& bundle);

// Bitwise comparison of every parameter.
bool identical(const ModelBundle& a, const ModelBundle& b);

// ---- forward passes -----------------------------------------------------------

template <typename T>
ad::Tensor<T> extract(ad::Tape<T>& tape, const BasicFeatureExtractor<T>& phi, const ad::Tensor<T>& batch) {
  if (batch.cols() != phi.input_dim()) {
    throw ad::ShapeError("extract: batch width " + std::to_string(batch.cols()) + " but extractor expects " +
                         std::to_string(phi.input_dim()));
  }
  const ad::Tensor<T>* x = &batch;
  ad::Tensor<T> h;
  for (const auto& layer : phi.layers) {
    h = ad::relu(tape, ad::linear(tape, *x, layer.weight, layer.bias));
    x = &h;
  }
  return h;
}

// y + relu(y W^T + b) when the feed-forward is enabled, y otherwise.
template <typename T>
ad::Tensor<T> feed_forward(ad::Tape<T>& tape, const BasicFeatureTransformer<T>& tau, ad::Tensor<T> y) {
  if (!tau.ffn_enabled) return y;
  return ad::add(tape, y, ad::relu(tape, ad::linear(tape, y, tau.ffn.weight, tau.ffn.bias)));
}

template <typename T>
struct TransformResult {
  ad::Tensor<T> feature;                 // f', 1 x m
  std::optional<ad::Tensor<T>> prompts;  // p', n x m
  ad::Tensor<T> attention;               // (1+n) x (1+n)
};

// Stacks f (1 x m) over the n prompts, runs the full sequence through tau and
// splits the output back into f' (row 0) and p' (rows 1..n).
template <typename T>
TransformResult<T> transform(ad::Tape<T>& tape, const BasicFeatureTransformer<T>& tau, const ad::Tensor<T>& f,
                             const BasicPromptSet<T>& p) {
  const std::size_t m = tau.dim();
  if (f.size() != m) throw ad::ShapeError("transform: feature has " + std::to_string(f.size()) + " values, expected " + std::to_string(m));
  if (!p.empty() && p.prompts->cols() != m) throw ad::ShapeError("transform: prompt width does not match feature width");
  const ad::Tensor<T>* seq = &f;
  ad::Tensor<T> stacked;
  if (!p.empty()) {
    stacked = ad::concat_rows<T>(tape, {&f, &*p.prompts});
    seq = &stacked;
  }
  auto attn = ad::attention_block(tape, *seq, tau.attn);
  auto out = feed_forward(tape, tau, ad::add(tape, *seq, attn.output));
  TransformResult<T> result{ad::slice_rows(tape, out, 0, 1), std::nullopt, std::move(attn.attention)};
  if (!p.empty()) result.prompts = ad::slice_rows(tape, out, 1, out.rows());
  return result;
}

// Row-0 output of transform for a batch of features F (B x m) sharing one
// prompt set: the same math as transform restricted to the query of f, with
// the prompt keys/values computed once per batch. Optionally returns the
// B x (1+n) attention rows.
template <typename T>
ad::Tensor<T> transform_batch(ad::Tape<T>& tape, const BasicFeatureTransformer<T>& tau, const ad::Tensor<T>& features,
                              const BasicPromptSet<T>& p, ad::Tensor<T>* attention_out = nullptr) {
  const std::size_t m = tau.dim();
  if (features.cols() != m) throw ad::ShapeError("transform_batch: feature width does not match transformer");
  if (!p.empty() && p.prompts->cols() != m) throw ad::ShapeError("transform_batch: prompt width does not match feature width");
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(m));

  auto q = ad::matmul(tape, features, tau.attn.wq);
  auto kf = ad::matmul(tape, features, tau.attn.wk);
  auto vf = ad::matmul(tape, features, tau.attn.wv);
  auto self_score = ad::row_sum(tape, ad::mul(tape, q, kf));

  ad::Tensor<T> mixed;
  if (p.empty()) {
    auto weights = ad::softmax_rows(tape, ad::scale(tape, self_score, inv_sqrt));
    mixed = ad::mul_col(tape, vf, weights);
    if (attention_out) *attention_out = weights.detach();
  } else {
    const std::size_t n = p.count();
    auto kp = ad::matmul(tape, *p.prompts, tau.attn.wk);
    auto vp = ad::matmul(tape, *p.prompts, tau.attn.wv);
    auto prompt_scores = ad::matmul(tape, q, ad::transpose(tape, kp));
    auto weights = ad::softmax_rows(tape, ad::scale(tape, ad::concat_cols(tape, self_score, prompt_scores), inv_sqrt));
    auto from_self = ad::mul_col(tape, vf, ad::slice_cols(tape, weights, 0, 1));
    auto from_prompts = ad::matmul(tape, ad::slice_cols(tape, weights, 1, n + 1), vp);
    mixed = ad::add(tape, from_self, from_prompts);
    if (attention_out) *attention_out = weights.detach();
  }
  return feed_forward(tape, tau, ad::add(tape, features, ad::matmul(tape, mixed, tau.attn.wo)));
}

// Raw logits; softmax belongs to the loss.
template <typename T>
ad::Tensor<T> classify(ad::Tape<T>& tape, const BasicClassifier<T>& hk, const ad::Tensor<T>& features) {
  return ad::linear(tape, features, hk.head.weight, hk.head.bias);
}

// Linear map followed by row L2 normalization; throws std::domain_error on a
// zero projection.
template <typename T>
ad::Tensor<T> project(ad::Tape<T>& tape, const BasicProjectionHead<T>& hrho, const ad::Tensor<T>& features) {
  return ad::l2_normalize_rows(tape, ad::linear(tape, features, hrho.head.weight, hrho.head.bias));
}

// ---- initialization -----------------------------------------------------------

template <typename T>
Linear<T> init_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> w(in * out), b(out);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  for (auto& v : b) v = static_cast<T>(dist(rng));
  return {ad::Tensor<T>::matrix(out, in, std::move(w), true), ad::Tensor<T>({out}, std::move(b), true)};
}

template <typename T>
ad::Tensor<T> init_square(std::size_t m, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(m));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> w(m * m);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  return ad::Tensor<T>::matrix(m, m, std::move(w), true);
}

// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); deterministic in seed.
template <typename T = Real>
BasicModelBundle<T> init_bundle(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  BasicModelBundle<T> b;
  std::size_t in = cfg.input_dim;
  std::vector<std::size_t> widths = cfg.hidden;
  widths.push_back(cfg.feature_dim);
  for (auto w : widths) {
    b.phi.layers.push_back(init_linear<T>(in, w, rng));
    in = w;
  }
  const std::size_t m = cfg.feature_dim;
  b.tau.attn.wq = init_square<T>(m, rng);
  b.tau.attn.wk = init_square<T>(m, rng);
  b.tau.attn.wv = init_square<T>(m, rng);
  b.tau.attn.wo = init_square<T>(m, rng);
  b.tau.ffn_enabled = cfg.ffn_enabled;
  if (cfg.ffn_enabled) b.tau.ffn = init_linear<T>(m, m, rng);
  b.hk.head = init_linear<T>(m, cfg.num_classes, rng);
  b.hrho.head = init_linear<T>(m, cfg.proj_dim, rng);
  return b;
}

// Prompts ~ N(0, 0.02^2); deterministic in seed. n may be zero.
template <typename T = Real>
BasicPromptSet<T> init_prompts(PromptKind kind, std::size_t n, std::size_t m, std::uint64_t seed) {
  if (m == 0) throw std::invalid_argument("init_prompts: prompt width must be positive");
  BasicPromptSet<T> set{kind, m, std::nullopt};
  if (n == 0) return set;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  std::vector<T> values(n * m);
  for (auto& v : values) v = static_cast<T>(dist(rng));
  set.prompts = ad::Tensor<T>::matrix(n, m, std::move(values), true);
  return set;
}

}  // namespace fedpft
