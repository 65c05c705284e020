#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedpft/commands.hpp"
#include "fedpft/config.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string preset;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "INI config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.overrides, "Override a key: section.key=value (repeatable)");
  cmd->add_option("--seed", o.seed, "Root seed");
  cmd->add_option("--out", o.out, "Output directory (default: $FEDPFT_OUT_DIR, then run.out_dir)");
  cmd->add_option("--preset", o.preset, "Preset: full or desk");
  cmd->add_option("--workers", o.workers, "Client worker threads");
}

fedpft::ExperimentConfig resolve(const CommonOptions& o) {
  std::vector<std::string> overrides;
  if (!o.preset.empty()) overrides.push_back("run.preset=" + o.preset);
  overrides.insert(overrides.end(), o.overrides.begin(), o.overrides.end());
  if (o.seed) overrides.push_back("run.seed=" + std::to_string(*o.seed));
  if (o.workers) overrides.push_back("run.workers=" + std::to_string(*o.workers));
  if (!o.out.empty()) {
    overrides.push_back("run.out_dir=" + o.out);
  } else if (const char* env = std::getenv("FEDPFT_OUT_DIR"); env && *env) {
    overrides.push_back(std::string("run.out_dir=") + env);
  }
  auto cfg = o.config_path.empty() ? fedpft::config_from_overrides(overrides)
                                   : fedpft::load_config(o.config_path, overrides);
  for (const auto& w : cfg.warnings()) std::cerr << "warning: " << w << "\n";
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated training simulator with client-local prompts and a shared feature transformer"};
  app.require_subcommand(1);

  CommonOptions train_opts;
  auto* train = app.add_subcommand("train", "Run one federated training experiment");
  add_common(train, train_opts);

  CommonOptions ablate_opts;
  std::string settings;
  auto* ablate = app.add_subcommand("ablate", "Run named ablation settings at a shared seed");
  add_common(ablate, ablate_opts);
  ablate->add_option("--settings", settings, "Comma-separated settings, e.g. I,III,V")->required();

  std::string checkpoint;
  std::string probe_config;
  fedpft::ProbeOptions probe_options;
  auto* probe = app.add_subcommand("probe", "Linear-probe the extractor of a checkpoint");
  probe->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  probe->add_option("--config", probe_config, "Config (default: config.ini beside the checkpoint)");
  probe->add_option("--epochs", probe_options.epochs, "Probe training epochs");
  probe->add_option("--lr", probe_options.learning_rate, "Probe learning rate");

  std::string eval_checkpoint;
  std::string eval_config;
  auto* evaluate = app.add_subcommand("evaluate", "Personalized accuracy of every client in a checkpoint");
  evaluate->add_option("--checkpoint", eval_checkpoint, "Checkpoint directory")->required();
  evaluate->add_option("--config", eval_config, "Config (default: config.ini beside the checkpoint)");

  CommonOptions part_opts;
  std::string scheme;
  std::optional<double> alpha;
  std::optional<std::size_t> classes_per_client, clients;
  bool dump = false;
  auto* partition = app.add_subcommand("partition", "Show how the training pool is split across clients");
  add_common(partition, part_opts);
  partition->add_option("--scheme", scheme, "dirichlet or pathological");
  partition->add_option("--alpha", alpha, "Dirichlet concentration");
  partition->add_option("--classes-per-client", classes_per_client, "Classes per client (pathological)");
  partition->add_option("--clients", clients, "Number of clients");
  partition->add_flag("--dump", dump, "Print the full assignment as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return fedpft::cmd_train(resolve(train_opts), std::cout);
    if (*ablate) {
      const auto names = fedpft::parse_settings(settings);
      fedpft::cmd_ablate(resolve(ablate_opts), names, std::cout);
      return 0;
    }
    if (*probe) {
      std::optional<fedpft::ExperimentConfig> cfg;
      if (!probe_config.empty()) cfg = fedpft::load_config(probe_config);
      fedpft::cmd_probe(checkpoint, cfg, std::cout, probe_options);
      return 0;
    }
    if (*evaluate) {
      std::optional<fedpft::ExperimentConfig> cfg;
      if (!eval_config.empty()) cfg = fedpft::load_config(eval_config);
      fedpft::cmd_evaluate(eval_checkpoint, cfg, std::cout);
      return 0;
    }
    if (*partition) {
      if (!scheme.empty()) part_opts.overrides.push_back("partition.scheme=" + scheme);
      if (alpha) part_opts.overrides.push_back("partition.alpha=" + std::to_string(*alpha));
      if (classes_per_client)
        part_opts.overrides.push_back("partition.classes_per_client=" + std::to_string(*classes_per_client));
      if (clients) part_opts.overrides.push_back("federation.clients=" + std::to_string(*clients));
      fedpft::cmd_partition(resolve(part_opts), dump, std::cout);
      return 0;
    }
  } catch (const fedpft::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
