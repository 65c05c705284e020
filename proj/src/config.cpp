#include "fedpft/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fedpft/io.hpp"

namespace fedpft {

namespace {

template <typename U>
U parse_unsigned(const std::string& key, const std::string& text) {
  U v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

Real parse_number(const std::string& key, const std::string& text) {
  try {
    return io::parse_real(text);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
}

bool parse_bool(const std::string& key, std::string text) {
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(parse_unsigned<std::size_t>(key, item));
  }
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;  // null = write-only
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define FEDPFT_SIZE(KEY, MEMBER)                                                       \
  Field {                                                                              \
    KEY, [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); },           \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_unsigned<std::size_t>(KEY, v); } \
  }
#define FEDPFT_REAL(KEY, MEMBER)                                                       \
  Field {                                                                              \
    KEY, [](const ExperimentConfig& c) { return io::format_real(c.MEMBER); },          \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_number(KEY, v); } \
  }
#define FEDPFT_BOOL(KEY, MEMBER)                                                       \
  Field {                                                                              \
    KEY, [](const ExperimentConfig& c) { return bool_text(c.MEMBER); },                \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); } \
  }
#define FEDPFT_TEXT(KEY, MEMBER)                                                       \
  Field {                                                                              \
    KEY, [](const ExperimentConfig& c) { return std::string(c.MEMBER); },              \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = v; }                \
  }

// Application order matters only for ablation.setting, which precedes the
// individual flags.
const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      FEDPFT_TEXT("run.preset", preset),
      Field{"run.seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
            [](ExperimentConfig& c, const std::string& v) { c.seed = parse_unsigned<std::uint64_t>("run.seed", v); }},
      Field{"run.out_dir", [](const ExperimentConfig& c) { return c.out_dir.string(); },
            [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }},
      FEDPFT_SIZE("run.checkpoint_every", checkpoint_every),
      FEDPFT_SIZE("run.workers", workers),

      FEDPFT_SIZE("model.input_dim", model.input_dim),
      Field{"model.hidden", [](const ExperimentConfig& c) { return join(c.model.hidden); },
            [](ExperimentConfig& c, const std::string& v) { c.model.hidden = parse_list("model.hidden", v); }},
      FEDPFT_SIZE("model.feature_dim", model.feature_dim),
      FEDPFT_SIZE("model.num_classes", model.num_classes),
      FEDPFT_SIZE("model.proj_dim", model.proj_dim),
      FEDPFT_BOOL("model.ffn", model.ffn_enabled),

      FEDPFT_SIZE("federation.clients", num_clients),
      FEDPFT_SIZE("federation.rounds", rounds),
      FEDPFT_SIZE("federation.local_epochs", local_epochs),
      FEDPFT_SIZE("federation.feature_epochs", feature_epochs),
      FEDPFT_SIZE("federation.adaptation_epochs", adaptation_epochs),
      FEDPFT_REAL("federation.participation", participation),
      FEDPFT_SIZE("federation.batch_size", batch_size),

      FEDPFT_SIZE("prompts.n_kappa", n_kappa),
      FEDPFT_SIZE("prompts.n_rho", n_rho),

      FEDPFT_REAL("optim.lr_phi", lr.phi),
      FEDPFT_REAL("optim.lr_tau", lr.tau),
      FEDPFT_REAL("optim.lr_classifier", lr.classifier),
      FEDPFT_REAL("optim.lr_projection", lr.projection),
      FEDPFT_REAL("optim.lr_p_kappa", lr.p_kappa),
      FEDPFT_REAL("optim.lr_p_rho", lr.p_rho),
      FEDPFT_REAL("optim.momentum", momentum),
      FEDPFT_REAL("optim.temperature", temperature),
      FEDPFT_SIZE("optim.queue_size", queue_size),
      FEDPFT_REAL("optim.weight_ce", weights.ce),
      FEDPFT_REAL("optim.weight_con", weights.con),
      FEDPFT_BOOL("optim.tau_con_grad_phase2", tau_con_grad_phase2),

      FEDPFT_REAL("augment.noise_std", augmentation.noise_std),
      FEDPFT_REAL("augment.mask_prob", augmentation.mask_prob),

      FEDPFT_TEXT("data.source", data.source),
      Field{"data.train_path", [](const ExperimentConfig& c) { return c.data.train_path.string(); },
            [](ExperimentConfig& c, const std::string& v) { c.data.train_path = v; }},
      Field{"data.test_path", [](const ExperimentConfig& c) { return c.data.test_path.string(); },
            [](ExperimentConfig& c, const std::string& v) { c.data.test_path = v; }},
      FEDPFT_SIZE("data.per_class", data.per_class),
      FEDPFT_SIZE("data.test_per_class", data.test_per_class),
      FEDPFT_REAL("data.spread", data.spread),

      FEDPFT_TEXT("partition.scheme", partition.scheme),
      FEDPFT_REAL("partition.alpha", partition.alpha),
      FEDPFT_SIZE("partition.classes_per_client", partition.classes_per_client),

      Field{"ablation.setting", nullptr,
            [](ExperimentConfig& c, const std::string& v) {
              try {
                c.ablation = ablation_setting(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("ablation.setting: ") + e.what());
              }
            }},
      FEDPFT_BOOL("ablation.use_p_kappa", ablation.use_p_kappa),
      FEDPFT_BOOL("ablation.use_alternating", ablation.use_alternating),
      FEDPFT_BOOL("ablation.use_L_con", ablation.use_L_con),
      FEDPFT_BOOL("ablation.use_p_rho", ablation.use_p_rho),
      FEDPFT_BOOL("ablation.personalized_classifier", ablation.personalized_classifier),
  };
  return table;
}

#undef FEDPFT_SIZE
#undef FEDPFT_REAL
#undef FEDPFT_BOOL
#undef FEDPFT_TEXT

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

std::pair<std::string, std::string> split_override(const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + item + "' is not of the form section.key=value");
  return {item.substr(0, eq), item.substr(eq + 1)};
}

using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues read_ini_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config is not valid INI: ") + e.what());
  }
  KeyValues out;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) out.emplace_back(section + "." + key, value.data());
  }
  return out;
}

ExperimentConfig build(const KeyValues& file, const std::vector<std::string>& overrides) {
  KeyValues over;
  for (const auto& o : overrides) over.push_back(split_override(o));
  for (const auto& [k, v] : file) field(k);
  for (const auto& [k, v] : over) field(k);

  std::string preset = "full";
  for (const auto& [k, v] : file)
    if (k == "run.preset") preset = v;
  for (const auto& [k, v] : over)
    if (k == "run.preset") preset = v;
  ExperimentConfig cfg = preset_config(preset);

  auto apply = [&cfg](const KeyValues& kvs) {
    for (const auto& f : fields())
      for (const auto& [k, v] : kvs)
        if (k == f.key) f.set(cfg, v);
  };
  apply(file);
  apply(over);
  cfg.validate();
  return cfg;
}

}  // namespace

TrainHyper ExperimentConfig::hyper() const {
  TrainHyper h;
  h.lr = lr;
  h.batch_size = batch_size;
  h.momentum = momentum;
  h.temperature = temperature;
  h.augmentation = augmentation;
  h.weights = weights;
  h.ablation = ablation;
  h.tau_con_grad_phase2 = tau_con_grad_phase2;
  return h;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (feature_epochs + adaptation_epochs != local_epochs)
    fail("constraint R_f + R_a = R violated: federation.feature_epochs (" + std::to_string(feature_epochs) +
         ") + federation.adaptation_epochs (" + std::to_string(adaptation_epochs) + ") != federation.local_epochs (" +
         std::to_string(local_epochs) + ")");
  if (num_clients == 0) fail("federation.clients must be positive");
  if (batch_size == 0) fail("federation.batch_size must be positive");
  if (workers == 0) fail("run.workers must be positive");
  if (!(participation > 0 && participation <= 1)) fail("federation.participation must lie in (0, 1]");
  if (queue_size == 0) fail("optim.queue_size must be positive");
  if (!(temperature > 0)) fail("optim.temperature must be positive");
  if (!(momentum >= 0 && momentum <= 1)) fail("optim.momentum must lie in [0, 1]");
  for (auto g : kAllGroups)
    if (!(lr.of(g) >= 0)) fail(std::string("learning rate of ") + group_name(g) + " must be non-negative");
  if (!(weights.ce >= 0 && weights.con >= 0)) fail("loss weights must be non-negative");
  if (!(augmentation.noise_std >= 0)) fail("augment.noise_std must be non-negative");
  if (!(augmentation.mask_prob >= 0 && augmentation.mask_prob < 1)) fail("augment.mask_prob must lie in [0, 1)");
  if (data.source == "synthetic") {
    if (data.per_class == 0) fail("data.per_class must be positive");
    if (!(data.spread > 0)) fail("data.spread must be positive");
  } else if (data.source == "csv") {
    if (data.train_path.empty()) fail("data.train_path is required when data.source = csv");
  } else {
    fail("data.source must be 'synthetic' or 'csv', got '" + data.source + "'");
  }
  if (partition.scheme == "dirichlet") {
    if (!(partition.alpha > 0)) fail("partition.alpha must be positive");
  } else if (partition.scheme == "pathological") {
    if (partition.classes_per_client == 0 || partition.classes_per_client > model.num_classes)
      fail("partition.classes_per_client must lie in [1, model.num_classes]");
  } else {
    fail("partition.scheme must be 'dirichlet' or 'pathological', got '" + partition.scheme + "'");
  }
  if (ablation.use_p_rho && !ablation.use_L_con) fail("ablation.use_p_rho requires ablation.use_L_con");
}

std::vector<std::string> ExperimentConfig::warnings() const { return plan().warnings(); }

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"full", "desk"};
  return names;
}

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig cfg;
  cfg.preset = name;
  if (name == "full") return cfg;
  if (name == "desk") {
    cfg.num_clients = 8;
    cfg.rounds = 60;
    cfg.batch_size = 20;
    cfg.data.per_class = 50;
    cfg.model.num_classes = 10;
    cfg.model.input_dim = 16;
    cfg.model.feature_dim = 16;
    // Picked by a sweep over spread and augmentation on seeds 1-3, then
    // checked on seeds 4-12. Closer classes leave more for the contrastive
    // term to add.
    cfg.data.spread = 1.5;
    cfg.augmentation = {0.5, 0.3};
    cfg.out_dir = "runs/desk";
    return cfg;
  }
  throw ConfigError("run.preset: unknown preset '" + name + "'");
}

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  return build(read_ini_text(text), overrides);
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, overrides);
}

ExperimentConfig config_from_overrides(const std::vector<std::string>& overrides) { return build({}, overrides); }

std::string to_ini(const ExperimentConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    if (!f.get) continue;
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << "[" << s << "]\n";
      section = s;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(config) << "\n";
  }
  return out.str();
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

}  // namespace fedpft
