#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpft/config.hpp"
#include "fedpft/server.hpp"

namespace fedpft {

// Everything a run starts from, rebuilt deterministically from the config.
struct Federation {
  Dataset train_pool;
  Dataset test_pool;
  PartitionAssignment train_partition;
  PartitionAssignment test_partition;
  GlobalState global;
  std::vector<ClientState> clients;
};

// Data, partitions, initial bundle and client states. All randomness derives
// from config.seed.
Federation build_federation(const ExperimentConfig& config);

// Train pool / held-out pool per the data section.
std::pair<Dataset, Dataset> load_pools(const ExperimentConfig& config);
PartitionAssignment partition_pool(const ExperimentConfig& config, const Dataset& pool);

struct ExperimentResult {
  Federation federation;  // final state
  std::vector<RoundReport> reports;
  std::optional<std::size_t> best_round;
  Real best_mean_accuracy = 0;
};

struct RunOptions {
  // When set, metrics, checkpoints, config copy and summary go here.
  std::optional<std::filesystem::path> out_dir;
  std::ostream* log = nullptr;
  std::optional<std::size_t> workers;  // overrides config.workers
  std::function<void(const UploadPayload&)> on_upload;
};

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

// `round,client,acc,lce,lcon`, one row per participating client per round.
std::string metrics_csv(const std::vector<RoundReport>& reports);
nlohmann::json summary_json(const ExperimentConfig& config, const ExperimentResult& result);

// bundle.json plus prompts/client_XXX.json under `dir`.
void write_checkpoint(const std::filesystem::path& dir, const ModelBundle& bundle,
                      const std::vector<ClientState>& clients);

struct Checkpoint {
  ModelBundle bundle;
  std::vector<PromptSet> p_kappa;  // by client id
  std::vector<PromptSet> p_rho;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace fedpft
