#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedpft/config.hpp"
#include "fedpft/eval.hpp"

namespace fedpft {

// Runs one experiment and writes metrics.csv, checkpoint/, config.ini and
// summary.json under config.out_dir. Returns the process exit code.
int cmd_train(const ExperimentConfig& config, std::ostream& out);

struct AblationRow {
  std::string setting;
  AblationConfig flags;
  Real best_mean_accuracy = 0;
  std::size_t best_round = 0;
  Real final_mean_accuracy = 0;
};

// Runs each named setting at the config's seed; prints one table row per
// setting and writes ablation.csv under config.out_dir.
std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config, const std::vector<std::string>& settings,
                                    std::ostream& out);

// Splits "I,III,V" into names, validating each.
std::vector<std::string> parse_settings(const std::string& list);

// Linear probe on the checkpoint extractor's features of the held-out pool.
// The config defaults to config.ini next to the checkpoint directory.
ProbeResult cmd_probe(const std::filesystem::path& checkpoint, const std::optional<ExperimentConfig>& config,
                      std::ostream& out, const ProbeOptions& options = {});

// Personalized accuracy of every client stored in the checkpoint.
std::vector<Real> cmd_evaluate(const std::filesystem::path& checkpoint, const std::optional<ExperimentConfig>& config,
                               std::ostream& out);

// Prints per-client class histograms, or the full assignment as JSON when
// dump is set.
void cmd_partition(const ExperimentConfig& config, bool dump, std::ostream& out);

}  // namespace fedpft
