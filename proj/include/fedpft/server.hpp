#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "fedpft/client.hpp"
#include "fedpft/eval.hpp"
#include "fedpft/params.hpp"

namespace fedpft {

// Throws std::invalid_argument unless the payload has exactly `schema`'s
// keys and shapes, no prompt keys and a positive sample count.
void validate_payload(const UploadPayload& payload, const FlatParams& schema);

// Sample-count weighted mean of the payload components. Payloads are taken
// in client-id order and combined as theta_0 + sum_i w_i (theta_i - theta_0)
// with theta_0 the lowest id's parameters, so identical inputs come back
// unchanged bit for bit and payload order never matters.
FlatParams aggregate_flat(std::vector<const UploadPayload*> payloads);
ModelBundle aggregate(const std::vector<UploadPayload>& payloads);

// max(1, round(fraction * n)) distinct ids drawn uniformly without
// replacement, sorted ascending.
std::vector<std::size_t> sample_clients(std::size_t n, double fraction, std::mt19937_64& round_rng);

// Deterministic per (root seed, round).
std::mt19937_64 round_rng(std::uint64_t root_seed, std::size_t round);

struct GlobalState {
  std::size_t round = 0;
  ModelBundle bundle;
  double participation = 1.0;
  std::uint64_t root_seed = 0;
};

// Runs fn(0..n-1) on up to `workers` threads. Rethrows the exception of the
// lowest failing index.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

struct TrainingOptions {
  std::size_t workers = 1;
  // Called after every round with the new global state.
  std::function<void(const RoundReport&, const GlobalState&, const std::vector<ClientState>&)> on_round;
  // Called with every validated upload, in client-id order, before aggregation.
  std::function<void(const UploadPayload&)> on_upload;
};

struct TrainingResult {
  ModelBundle bundle;
  std::vector<RoundReport> reports;
};

// Personalized accuracy of one client under the ablation's evaluation rule.
Real evaluate_client(const ModelBundle& global, const ClientState& client, const AblationConfig& flags);

// Algorithm loop: sample, broadcast, local rounds, aggregate, evaluate.
// Advances `global` by `rounds` rounds; client prompt sets persist in
// `clients`. A non-finite aggregate throws std::runtime_error naming the
// round.
TrainingResult run_training(GlobalState& global, std::vector<ClientState>& clients, std::size_t rounds,
                            const PhasePlan& plan, const TrainHyper& hyper, const TrainingOptions& options = {});

}  // namespace fedpft
