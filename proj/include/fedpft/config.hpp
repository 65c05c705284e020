#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedpft/ablation.hpp"
#include "fedpft/client.hpp"
#include "fedpft/data.hpp"
#include "fedpft/model.hpp"

namespace fedpft {

// Raised for any config problem; the message names the offending key or
// the violated constraint.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | csv
  std::filesystem::path train_path;   // csv only
  std::filesystem::path test_path;    // csv only; empty = split off 20% of train
  std::size_t per_class = 2000;       // synthetic train samples per class
  std::size_t test_per_class = 0;     // 0 = same as per_class
  Real spread = 2.0;                  // distance of class centers from the origin
};

struct PartitionConfig {
  std::string scheme = "dirichlet";  // dirichlet | pathological
  Real alpha = 0.5;
  std::size_t classes_per_client = 2;
};

struct ExperimentConfig {
  std::string preset = "full";
  ModelConfig model;

  std::size_t num_clients = 40;         // N
  std::size_t rounds = 1000;            // T
  std::size_t local_epochs = 5;         // R
  std::size_t feature_epochs = 4;       // R_f
  std::size_t adaptation_epochs = 1;    // R_a
  double participation = 1.0;
  std::size_t batch_size = 100;         // B
  std::size_t workers = 1;

  std::size_t n_kappa = 10;
  std::size_t n_rho = 20;

  LearningRates lr;
  Real momentum = 0.999;     // mu
  Real temperature = 0.07;   // beta
  std::size_t queue_size = 256;  // K
  LossWeights weights;
  bool tau_con_grad_phase2 = false;
  AugmentationPolicy augmentation;

  DataConfig data;
  PartitionConfig partition;
  AblationConfig ablation;

  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs/default";
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only

  PhasePlan plan() const { return {feature_epochs, adaptation_epochs}; }
  TrainHyper hyper() const;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
  // Non-fatal findings (e.g. R_f <= R_a).
  std::vector<std::string> warnings() const;
};

// Values shared by every preset mirror the published defaults; "desk" shrinks
// the federation (N=8, T=60, B=20, 50 samples per class).
ExperimentConfig preset_config(const std::string& name);
const std::vector<std::string>& preset_names();

// Sectioned INI text. Starts from the preset named by run.preset (override
// first, then file, else "full"), applies the file's keys, then the
// `section.key=value` overrides. Unknown sections or keys are errors.
ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
// Preset defaults plus overrides, no file.
ExperimentConfig config_from_overrides(const std::vector<std::string>& overrides);

// Full INI text; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& config);

// Every accepted `section.key`.
const std::vector<std::string>& config_keys();

}  // namespace fedpft
