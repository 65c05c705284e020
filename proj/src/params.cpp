#include "fedpft/params.hpp"

#include <cstring>
#include <map>
#include <stdexcept>

namespace fedpft {

FlatParams to_flat(const ModelBundle& bundle) {
  FlatParams out;
  auto& mutable_bundle = const_cast<ModelBundle&>(bundle);
  for_each_param(mutable_bundle, [&](const std::string& key, const Tensor& t) {
    out.push_back({key, t.shape(), t.values()});
  });
  return out;
}

namespace {

Tensor take(std::map<std::string, const NamedArray*>& by_key, const std::string& key) {
  auto it = by_key.find(key);
  if (it == by_key.end()) throw std::invalid_argument("parameter map is missing key '" + key + "'");
  const NamedArray& a = *it->second;
  by_key.erase(it);
  try {
    return Tensor(a.shape, a.values, true);
  } catch (const ad::ShapeError& e) {
    throw std::invalid_argument("parameter '" + key + "': " + e.what());
  }
}

Linear<Real> take_linear(std::map<std::string, const NamedArray*>& by_key, const std::string& base) {
  Linear<Real> l{take(by_key, base + ".weight"), take(by_key, base + ".bias")};
  if (l.weight.rank() != 2 || l.bias.size() != l.weight.rows()) {
    throw std::invalid_argument("parameter '" + base + "' has inconsistent weight/bias shapes");
  }
  return l;
}

}  // namespace

ModelBundle from_flat(const FlatParams& flat) {
  std::map<std::string, const NamedArray*> by_key;
  for (const auto& a : flat) {
    if (!by_key.emplace(a.key, &a).second) throw std::invalid_argument("duplicate parameter key '" + a.key + "'");
  }
  ModelBundle b;
  for (std::size_t i = 0; by_key.contains("phi.layer" + std::to_string(i) + ".weight"); ++i) {
    b.phi.layers.push_back(take_linear(by_key, "phi.layer" + std::to_string(i)));
  }
  if (b.phi.layers.empty()) throw std::invalid_argument("parameter map has no extractor layers");
  b.tau.attn.wq = take(by_key, "tau.wq");
  b.tau.attn.wk = take(by_key, "tau.wk");
  b.tau.attn.wv = take(by_key, "tau.wv");
  b.tau.attn.wo = take(by_key, "tau.wo");
  b.tau.ffn_enabled = by_key.contains("tau.ffn.weight");
  if (b.tau.ffn_enabled) b.tau.ffn = take_linear(by_key, "tau.ffn");
  b.hk.head = take_linear(by_key, "hk");
  b.hrho.head = take_linear(by_key, "hrho");
  if (!by_key.empty()) throw std::invalid_argument("unknown parameter key '" + by_key.begin()->first + "'");

  const std::size_t m = b.tau.dim();
  for (std::size_t i = 1; i < b.phi.layers.size(); ++i) {
    if (b.phi.layers[i].in_dim() != b.phi.layers[i - 1].out_dim())
      throw std::invalid_argument("extractor layer widths do not chain");
  }
  if (b.phi.output_dim() != m || b.hk.head.in_dim() != m || b.hrho.head.in_dim() != m)
    throw std::invalid_argument("bundle components disagree on the feature dimension");
  return b;
}

std::vector<std::string> keys_of(const FlatParams& flat) {
  std::vector<std::string> keys;
  keys.reserve(flat.size());
  for (const auto& a : flat) keys.push_back(a.key);
  return keys;
}

std::size_t scalar_count(const FlatParams& flat) {
  std::size_t n = 0;
  for (const auto& a : flat) n += a.values.size();
  return n;
}

bool is_prompt_key(const std::string& key) {
  return key.starts_with("p_kappa") || key.starts_with("p_rho");
}

std::size_t parameter_count(const ModelBundle& bundle) { return scalar_count(to_flat(bundle)); }

bool identical(const ModelBundle& a, const ModelBundle& b) {
  const auto fa = to_flat(a);
  const auto fb = to_flat(b);
  if (fa.size() != fb.size()) return false;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    if (fa[i].key != fb[i].key || fa[i].shape != fb[i].shape || fa[i].values.size() != fb[i].values.size())
      return false;
    if (std::memcmp(fa[i].values.data(), fb[i].values.data(), fa[i].values.size() * sizeof(Real)) != 0) return false;
  }
  return true;
}

nlohmann::json to_json(const FlatParams& flat) {
  auto arr = nlohmann::json::array();
  for (const auto& a : flat) arr.push_back({{"key", a.key}, {"shape", a.shape}, {"values", a.values}});
  return arr;
}

FlatParams flat_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("parameter list must be a JSON array");
  FlatParams out;
  for (const auto& e : j) {
    out.push_back({e.at("key").get<std::string>(), e.at("shape").get<std::vector<std::size_t>>(),
                   e.at("values").get<std::vector<Real>>()});
  }
  return out;
}

nlohmann::json prompts_to_json(const PromptSet& set) {
  nlohmann::json j{{"kind", prompt_kind_name(set.kind)}, {"count", set.count()}, {"dim", set.dim}};
  j["values"] = set.prompts ? set.prompts->values() : std::vector<Real>{};
  return j;
}

PromptSet prompts_from_json(const nlohmann::json& j, PromptKind kind) {
  if (j.at("kind").get<std::string>() != prompt_kind_name(kind))
    throw std::invalid_argument("prompt file holds '" + j.at("kind").get<std::string>() + "', expected '" +
                                prompt_kind_name(kind) + "'");
  PromptSet set{kind, j.at("dim").get<std::size_t>(), std::nullopt};
  const auto n = j.at("count").get<std::size_t>();
  if (n > 0) set.prompts = Tensor::matrix(n, set.dim, j.at("values").get<std::vector<Real>>(), true);
  return set;
}

}  // namespace fedpft
