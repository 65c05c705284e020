#include "fedpft/commands.hpp"

#include <cstdio>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "fedpft/experiment.hpp"
#include "fedpft/io.hpp"
#include "fedpft/rng.hpp"

namespace fedpft {

namespace fs = std::filesystem;

int cmd_train(const ExperimentConfig& config, std::ostream& out) {
  RunOptions options;
  options.out_dir = config.out_dir;
  options.log = &out;
  const auto result = run_experiment(config, options);
  if (result.best_round) {
    out << "best mean accuracy " << result.best_mean_accuracy << " at round " << *result.best_round << "\n";
  } else {
    out << "no rounds run\n";
  }
  out << "outputs in " << config.out_dir.string() << "\n";
  return 0;
}

std::vector<std::string> parse_settings(const std::string& list) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(list);
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (item.empty()) continue;
    ablation_setting(item);
    out.push_back(item);
  }
  if (out.empty()) throw std::invalid_argument("no ablation settings given");
  return out;
}

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config, const std::vector<std::string>& settings,
                                    std::ostream& out) {
  std::vector<AblationRow> rows;
  for (const auto& name : settings) {
    ExperimentConfig cfg = config;
    cfg.ablation = ablation_setting(name);
    const auto result = run_experiment(cfg);
    AblationRow row{name, cfg.ablation, result.best_mean_accuracy, result.best_round.value_or(0),
                    result.reports.empty() ? Real(0) : result.reports.back().mean_accuracy};
    rows.push_back(row);
  }

  std::ostringstream csv;
  csv << "setting,p_kappa,alternating,L_con,p_rho,best_acc,best_round,final_acc\n";
  out << std::left << std::setw(6) << "set" << std::setw(36) << "flags" << std::setw(10) << "best" << std::setw(8)
      << "round" << "final\n";
  for (const auto& r : rows) {
    csv << r.setting << "," << r.flags.use_p_kappa << "," << r.flags.use_alternating << "," << r.flags.use_L_con << ","
        << r.flags.use_p_rho << "," << io::format_real(r.best_mean_accuracy) << "," << r.best_round << ","
        << io::format_real(r.final_mean_accuracy) << "\n";
    out << std::left << std::setw(6) << r.setting << std::setw(36) << r.flags.describe() << std::setw(10)
        << std::fixed << std::setprecision(4) << r.best_mean_accuracy << std::setw(8) << r.best_round
        << r.final_mean_accuracy << "\n";
  }
  out.unsetf(std::ios::fixed);
  io::write_atomic(config.out_dir / "ablation.csv", csv.str());
  return rows;
}

namespace {

ExperimentConfig config_for_checkpoint(const fs::path& checkpoint, const std::optional<ExperimentConfig>& config) {
  if (config) return *config;
  const fs::path beside = checkpoint.parent_path() / "config.ini";
  if (!fs::exists(beside))
    throw std::runtime_error("no config given and " + beside.string() + " does not exist");
  return load_config(beside);
}

}  // namespace

ProbeResult cmd_probe(const fs::path& checkpoint, const std::optional<ExperimentConfig>& config, std::ostream& out,
                      const ProbeOptions& options) {
  const ExperimentConfig cfg = config_for_checkpoint(checkpoint, config);
  const Checkpoint cp = load_checkpoint(checkpoint);
  const auto pools = load_pools(cfg);
  const Dataset& data = pools.second;
  const Tensor features = extract_features(cp.bundle.phi, data);
  const auto result =
      linear_probe(features, data.labels, cfg.model.num_classes, derive_seed(cfg.seed, "probe"), options);
  out << "linear probe accuracy " << result.accuracy << " (" << result.train_size << " train / " << result.test_size
      << " held-out samples)\n";
  return result;
}

std::vector<Real> cmd_evaluate(const fs::path& checkpoint, const std::optional<ExperimentConfig>& config,
                               std::ostream& out) {
  const ExperimentConfig cfg = config_for_checkpoint(checkpoint, config);
  const Checkpoint cp = load_checkpoint(checkpoint);
  Federation fed = build_federation(cfg);
  if (cp.p_kappa.size() != fed.clients.size())
    throw std::runtime_error("checkpoint holds prompts for " + std::to_string(cp.p_kappa.size()) + " clients, config has " +
                             std::to_string(fed.clients.size()));
  std::vector<Real> acc;
  Real sum = 0;
  for (std::size_t i = 0; i < fed.clients.size(); ++i) {
    fed.clients[i].p_kappa = cp.p_kappa[i];
    fed.clients[i].p_rho = cp.p_rho[i];
    AblationConfig flags = cfg.ablation;
    flags.personalized_classifier = false;
    acc.push_back(evaluate_client(cp.bundle, fed.clients[i], flags));
    sum += acc.back();
    out << "client " << i << " accuracy " << acc.back() << "\n";
  }
  out << "mean accuracy " << sum / static_cast<Real>(acc.size()) << "\n";
  return acc;
}

void cmd_partition(const ExperimentConfig& config, bool dump, std::ostream& out) {
  const auto pools = load_pools(config);
  const auto p = partition_pool(config, pools.first);
  p.validate(pools.first.size());
  if (dump) {
    out << partition_to_json(p, pools.first.labels, config.model.num_classes).dump(2) << "\n";
    return;
  }
  out << "scheme " << config.partition.scheme << ", " << p.num_clients() << " clients, " << p.assigned() << " of "
      << pools.first.size() << " samples assigned\n";
  for (std::size_t i = 0; i < p.num_clients(); ++i) {
    const auto h = class_histogram(pools.first.labels, p.clients[i], config.model.num_classes);
    out << "client " << std::setw(3) << i << " n=" << std::setw(5) << p.clients[i].size() << "  [";
    for (std::size_t c = 0; c < h.size(); ++c) out << (c ? " " : "") << h[c];
    out << "]\n";
  }
}

}  // namespace fedpft
