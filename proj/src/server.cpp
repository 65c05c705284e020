#include "fedpft/server.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "fedpft/rng.hpp"

namespace fedpft {

void validate_payload(const UploadPayload& payload, const FlatParams& schema) {
  const std::string who = "payload from client " + std::to_string(payload.client_id);
  if (payload.sample_count == 0) throw std::invalid_argument(who + " has a zero sample count");
  for (const auto& a : payload.components)
    if (is_prompt_key(a.key)) throw std::invalid_argument(who + " carries prompt parameter '" + a.key + "'");
  if (payload.components.size() != schema.size())
    throw std::invalid_argument(who + " has " + std::to_string(payload.components.size()) + " arrays, expected " +
                                std::to_string(schema.size()));
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& a = payload.components[i];
    if (a.key != schema[i].key || a.shape != schema[i].shape || a.values.size() != schema[i].values.size())
      throw std::invalid_argument(who + " does not match the global schema at '" + schema[i].key + "'");
  }
}

FlatParams aggregate_flat(std::vector<const UploadPayload*> payloads) {
  if (payloads.empty()) throw std::invalid_argument("aggregate: no payloads");
  std::sort(payloads.begin(), payloads.end(),
            [](const UploadPayload* a, const UploadPayload* b) { return a->client_id < b->client_id; });
  for (std::size_t i = 1; i < payloads.size(); ++i)
    if (payloads[i]->client_id == payloads[i - 1]->client_id)
      throw std::invalid_argument("aggregate: two payloads from client " + std::to_string(payloads[i]->client_id));

  const FlatParams& base = payloads.front()->components;
  double total = 0;
  for (const auto* p : payloads) {
    validate_payload(*p, base);
    total += static_cast<double>(p->sample_count);
  }

  FlatParams out = base;
  for (std::size_t a = 0; a < out.size(); ++a) {
    auto& acc = out[a].values;
    const auto& theta0 = base[a].values;
    for (std::size_t i = 1; i < payloads.size(); ++i) {
      const Real w = static_cast<Real>(payloads[i]->sample_count) / total;
      const auto& theta = payloads[i]->components[a].values;
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += w * (theta[k] - theta0[k]);
    }
    for (auto v : acc)
      if (!std::isfinite(v)) throw std::domain_error("aggregate: non-finite value in '" + out[a].key + "'");
  }
  return out;
}

ModelBundle aggregate(const std::vector<UploadPayload>& payloads) {
  std::vector<const UploadPayload*> ptrs;
  for (const auto& p : payloads) ptrs.push_back(&p);
  return from_flat(aggregate_flat(std::move(ptrs)));
}

std::vector<std::size_t> sample_clients(std::size_t n, double fraction, std::mt19937_64& round_rng) {
  if (!(fraction > 0 && fraction <= 1))
    throw std::invalid_argument("participation fraction must lie in (0, 1], got " + std::to_string(fraction));
  if (n == 0) throw std::invalid_argument("sample_clients: no clients");
  const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n);
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  if (k == n) return ids;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(ids[i], ids[pick(round_rng)]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::mt19937_64 round_rng(std::uint64_t root_seed, std::size_t round) {
  return std::mt19937_64(derive_seed(root_seed, "round", round));
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) guarded(i);
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Real evaluate_client(const ModelBundle& global, const ClientState& client, const AblationConfig& flags) {
  const PromptSet* prompts = flags.use_p_kappa && !client.p_kappa.empty() ? &client.p_kappa : nullptr;
  const Classifier* head =
      flags.personalized_classifier && client.local_classifier ? &*client.local_classifier : nullptr;
  return personalized_accuracy(global, prompts, client.test, head);
}

TrainingResult run_training(GlobalState& global, std::vector<ClientState>& clients, std::size_t rounds,
                            const PhasePlan& plan, const TrainHyper& hyper, const TrainingOptions& options) {
  for (std::size_t i = 0; i < clients.size(); ++i)
    if (clients[i].client_id != i)
      throw std::invalid_argument("run_training: client at position " + std::to_string(i) + " has id " +
                                  std::to_string(clients[i].client_id));
  TrainingResult result;
  const FlatParams schema = to_flat(global.bundle);

  for (std::size_t r = 0; r < rounds; ++r) {
    auto rng = round_rng(global.root_seed, global.round);
    const auto selected = sample_clients(clients.size(), global.participation, rng);

    // Every participant trains from the same immutable broadcast snapshot.
    const ModelBundle broadcast = global.bundle;
    std::vector<LocalRoundResult> local(selected.size());
    parallel_for(selected.size(), options.workers,
                 [&](std::size_t j) { local[j] = local_round(clients[selected[j]], broadcast, plan, hyper); });

    std::vector<const UploadPayload*> payloads;
    for (const auto& l : local) {
      validate_payload(l.payload, schema);
      if (options.on_upload) options.on_upload(l.payload);
      payloads.push_back(&l.payload);
    }
    try {
      global.bundle = from_flat(aggregate_flat(payloads));
    } catch (const std::domain_error& e) {
      throw std::runtime_error("round " + std::to_string(global.round) + ": " + e.what());
    }
    ++global.round;

    RoundReport report;
    report.round = global.round;
    report.payload_parameter_count = scalar_count(local.front().payload.components);
    report.clients.resize(selected.size());
    EpochStats phase1, phase2;
    for (std::size_t j = 0; j < selected.size(); ++j) {
      EpochStats all = local[j].feature_learning;
      all.merge(local[j].task_adaptation);
      report.clients[j] = {selected[j], 0, all.mean_ce(), all.mean_con()};
      phase1.merge(local[j].feature_learning);
      phase2.merge(local[j].task_adaptation);
    }
    parallel_for(selected.size(), options.workers, [&](std::size_t j) {
      report.clients[j].accuracy = evaluate_client(global.bundle, clients[selected[j]], hyper.ablation);
    });
    summarize_accuracy(report);
    report.phase1_lce = phase1.mean_ce();
    report.phase1_lcon = phase1.mean_con();
    report.phase2_lce = phase2.mean_ce();
    report.phase2_lcon = phase2.mean_con();

    if (options.on_round) options.on_round(report, global, clients);
    result.reports.push_back(std::move(report));
  }
  result.bundle = global.bundle;
  return result;
}

}  // namespace fedpft
