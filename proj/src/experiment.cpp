#include "fedpft/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "fedpft/io.hpp"
#include "fedpft/rng.hpp"

namespace fedpft {

namespace fs = std::filesystem;

namespace {

// Per-class split of one labelled set into train and held-out parts.
std::pair<Dataset, Dataset> split_per_class(const Dataset& all, Real held_out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(all.num_classes);
  for (std::size_t i = 0; i < all.size(); ++i) by_class[static_cast<std::size_t>(all.labels[i])].push_back(i);
  std::vector<std::size_t> train, test;
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(held_out * static_cast<Real>(idx.size())));
    test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {all.subset(train), all.subset(test)};
}

std::string client_file(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "client_%03zu.json", id);
  return buf;
}

}  // namespace

std::pair<Dataset, Dataset> load_pools(const ExperimentConfig& config) {
  const auto& d = config.data;
  const std::size_t c = config.model.num_classes;
  Dataset train, test;
  if (d.source == "synthetic") {
    const std::uint64_t data_seed = derive_seed(config.seed, "data");
    train = make_synthetic(c, config.model.input_dim, d.per_class, d.spread, data_seed);
    test = make_synthetic_like(c, config.model.input_dim, d.test_per_class ? d.test_per_class : d.per_class, d.spread,
                               data_seed, derive_seed(data_seed, "held-out"));
  } else {
    train = load_csv_dataset(d.train_path, c);
    if (d.test_path.empty()) {
      std::tie(train, test) = split_per_class(train, 0.2, derive_seed(config.seed, "csv-split"));
    } else {
      test = load_csv_dataset(d.test_path, c);
    }
  }
  if (train.input_dim != config.model.input_dim)
    throw ConfigError("model.input_dim is " + std::to_string(config.model.input_dim) + " but the data has " +
                      std::to_string(train.input_dim) + " features");
  train.validate();
  test.validate();
  return {std::move(train), std::move(test)};
}

PartitionAssignment partition_pool(const ExperimentConfig& config, const Dataset& pool) {
  const std::uint64_t seed = derive_seed(config.seed, "partition");
  if (config.partition.scheme == "dirichlet")
    return dirichlet_partition(pool.labels, config.num_clients, config.partition.alpha, seed);
  return pathological_partition(pool.labels, config.model.num_classes, config.num_clients,
                                config.partition.classes_per_client, seed);
}

Federation build_federation(const ExperimentConfig& config) {
  config.validate();
  Federation fed;
  std::tie(fed.train_pool, fed.test_pool) = load_pools(config);
  fed.train_partition = partition_pool(config, fed.train_pool);
  fed.train_partition.validate(fed.train_pool.size());

  std::vector<std::vector<std::size_t>> histograms;
  for (const auto& idx : fed.train_partition.clients)
    histograms.push_back(class_histogram(fed.train_pool.labels, idx, config.model.num_classes));
  fed.test_partition = proportional_partition(fed.test_pool.labels, histograms, derive_seed(config.seed, "test-split"));

  fed.global.round = 0;
  fed.global.bundle = init_bundle(config.model, derive_seed(config.seed, "model"));
  fed.global.participation = config.participation;
  fed.global.root_seed = derive_seed(config.seed, "rounds");

  const std::uint64_t client_root = derive_seed(config.seed, "clients");
  for (std::size_t i = 0; i < config.num_clients; ++i) {
    fed.clients.push_back(ClientState::create(i, fed.train_pool.subset(fed.train_partition.clients[i]),
                                              fed.test_pool.subset(fed.test_partition.clients[i]), config.model,
                                              config.n_kappa, config.n_rho, config.queue_size, client_root));
  }
  return fed;
}

std::string metrics_csv(const std::vector<RoundReport>& reports) {
  std::ostringstream out;
  out << "round,client,acc,lce,lcon\n";
  for (const auto& r : reports)
    for (const auto& c : r.clients)
      out << r.round << "," << c.client_id << "," << io::format_real(c.accuracy) << "," << io::format_real(c.lce)
          << "," << io::format_real(c.lcon) << "\n";
  return out.str();
}

nlohmann::json summary_json(const ExperimentConfig& config, const ExperimentResult& result) {
  nlohmann::json j;
  j["seed"] = config.seed;
  j["ablation"] = config.ablation.describe();
  j["rounds"] = result.reports.size();
  j["clients"] = config.num_clients;
  if (result.best_round) {
    j["best_mean_accuracy"] = result.best_mean_accuracy;
    j["best_round"] = *result.best_round;
    j["final_mean_accuracy"] = result.reports.back().mean_accuracy;
    j["final_std_accuracy"] = result.reports.back().std_accuracy;
  } else {
    j["best_mean_accuracy"] = nullptr;
    j["best_round"] = nullptr;
  }
  j["payload_parameter_count"] = scalar_count(to_flat(result.federation.global.bundle));
  return j;
}

void write_checkpoint(const fs::path& dir, const ModelBundle& bundle, const std::vector<ClientState>& clients) {
  io::write_atomic(dir / "bundle.json", to_json(to_flat(bundle)).dump() + "\n");
  for (const auto& c : clients) {
    nlohmann::json j{{"client_id", c.client_id},
                     {"p_kappa", prompts_to_json(c.p_kappa)},
                     {"p_rho", prompts_to_json(c.p_rho)}};
    io::write_atomic(dir / "prompts" / client_file(c.client_id), j.dump() + "\n");
  }
}

Checkpoint load_checkpoint(const fs::path& dir) {
  Checkpoint cp;
  try {
    cp.bundle = from_flat(flat_from_json(nlohmann::json::parse(io::read_file(dir / "bundle.json"))));
    const fs::path prompt_dir = dir / "prompts";
    if (fs::exists(prompt_dir)) {
      for (std::size_t id = 0; fs::exists(prompt_dir / client_file(id)); ++id) {
        const auto j = nlohmann::json::parse(io::read_file(prompt_dir / client_file(id)));
        cp.p_kappa.push_back(prompts_from_json(j.at("p_kappa"), PromptKind::classification));
        cp.p_rho.push_back(prompts_from_json(j.at("p_rho"), PromptKind::contrastive));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("unreadable checkpoint " + dir.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("unreadable checkpoint " + dir.string() + ": " + e.what());
  }
  return cp;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  ExperimentResult result;
  result.federation = build_federation(config);
  auto& fed = result.federation;

  if (options.log)
    for (const auto& w : config.warnings()) *options.log << "warning: " << w << "\n";
  if (options.out_dir) io::write_atomic(*options.out_dir / "config.ini", to_ini(config));

  TrainingOptions training;
  training.workers = options.workers.value_or(config.workers);
  training.on_upload = options.on_upload;
  training.on_round = [&](const RoundReport& report, const GlobalState& global, const std::vector<ClientState>& clients) {
    result.reports.push_back(report);
    if (options.log) {
      *options.log << "round " << report.round << "  mean acc " << report.mean_accuracy << "  std "
                   << report.std_accuracy << "  L_ce " << report.phase1_lce << "/" << report.phase2_lce << "  L_con "
                   << report.phase1_lcon << "/" << report.phase2_lcon << "\n";
    }
    if (options.out_dir) {
      io::write_atomic(*options.out_dir / "metrics.csv", metrics_csv(result.reports));
      if (config.checkpoint_every && report.round % config.checkpoint_every == 0) {
        char name[32];
        std::snprintf(name, sizeof name, "round_%04zu", report.round);
        write_checkpoint(*options.out_dir / "checkpoints" / name, global.bundle, clients);
      }
    }
  };
  run_training(fed.global, fed.clients, config.rounds, config.plan(), config.hyper(), training);

  for (const auto& r : result.reports) {
    if (!result.best_round || r.mean_accuracy > result.best_mean_accuracy) {
      result.best_round = r.round;
      result.best_mean_accuracy = r.mean_accuracy;
    }
  }
  if (options.out_dir) {
    io::write_atomic(*options.out_dir / "metrics.csv", metrics_csv(result.reports));
    write_checkpoint(*options.out_dir / "checkpoint", fed.global.bundle, fed.clients);
    io::write_atomic(*options.out_dir / "summary.json", summary_json(config, result).dump(2) + "\n");
  }
  return result;
}

}  // namespace fedpft
