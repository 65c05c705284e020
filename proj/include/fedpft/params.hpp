#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpft/model.hpp"

namespace fedpft {

struct NamedArray {
  std::string key;
  std::vector<std::size_t> shape;
  std::vector<Real> values;

  bool operator==(const NamedArray&) const = default;
};

// Flat key -> array map in canonical order ("phi.layer0.weight", ...,
// "tau.wq", ..., "hk.weight", "hk.bias", "hrho.weight", "hrho.bias").
using FlatParams = std::vector<NamedArray>;

FlatParams to_flat(const ModelBundle& bundle);
// Rebuilds a bundle from its flat form; the layer count and the presence of
// the feed-forward are read off the keys. Throws on missing or malformed keys.
ModelBundle from_flat(const FlatParams& flat);

std::vector<std::string> keys_of(const FlatParams& flat);
std::size_t scalar_count(const FlatParams& flat);

bool is_prompt_key(const std::string& key);

nlohmann::json to_json(const FlatParams& flat);
FlatParams flat_from_json(const nlohmann::json& j);

nlohmann::json prompts_to_json(const PromptSet& set);
PromptSet prompts_from_json(const nlohmann::json& j, PromptKind kind);

}  // namespace fedpft
