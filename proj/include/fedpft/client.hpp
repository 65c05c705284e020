#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fedpft/ablation.hpp"
#include "fedpft/data.hpp"
#include "fedpft/losses.hpp"
#include "fedpft/model.hpp"
#include "fedpft/params.hpp"

namespace fedpft {

enum class Phase { feature_learning, task_adaptation, joint };
enum class LossKind { ce, con };

// Trainable parameter groups of one client.
enum class Group : unsigned {
  phi = 1u << 0,
  tau = 1u << 1,
  classifier = 1u << 2,
  projection = 1u << 3,
  p_kappa = 1u << 4,
  p_rho = 1u << 5,
};

class GroupSet {
 public:
  constexpr GroupSet() = default;
  constexpr GroupSet(std::initializer_list<Group> groups) {
    for (auto g : groups) bits_ |= static_cast<unsigned>(g);
  }

  constexpr bool contains(Group g) const { return bits_ & static_cast<unsigned>(g); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr GroupSet operator|(GroupSet o) const { return from_bits(bits_ | o.bits_); }
  constexpr GroupSet operator&(GroupSet o) const { return from_bits(bits_ & o.bits_); }
  constexpr bool operator==(const GroupSet&) const = default;
  std::string to_string() const;

 private:
  static constexpr GroupSet from_bits(unsigned b) {
    GroupSet s;
    s.bits_ = b;
    return s;
  }
  unsigned bits_ = 0;
};

inline constexpr Group kAllGroups[] = {Group::phi,        Group::tau,     Group::classifier,
                                       Group::projection, Group::p_kappa, Group::p_rho};
const char* group_name(Group g);

// Which groups each loss may update in each phase:
//   feature learning:  CE -> {p_kappa, tau}        Con -> {phi, tau, h_rho}
//   task adaptation:   CE -> {phi, tau, h_kappa}   Con -> {p_rho} (+ tau if tau_con_grad_phase2)
//   joint (no alternation): each loss reaches everything on its path.
struct RoutingTable {
  bool tau_con_grad_phase2 = false;

  GroupSet routes(Phase phase, LossKind loss) const;
  // Groups neither loss may update in `phase`.
  GroupSet frozen(Phase phase) const;
};

struct PhasePlan {
  std::size_t feature_epochs = 4;     // R_f
  std::size_t adaptation_epochs = 1;  // R_a

  std::size_t total() const { return feature_epochs + adaptation_epochs; }
  // Non-fatal findings, e.g. R_f <= R_a.
  std::vector<std::string> warnings() const;
};

struct LearningRates {
  Real phi = 0.1;
  Real tau = 0.01;
  Real classifier = 0.1;
  Real projection = 0.1;
  Real p_kappa = 0.1;
  Real p_rho = 0.1;

  Real of(Group g) const;
  static LearningRates uniform(Real lr);
};

struct LossWeights {
  Real ce = 1;
  Real con = 1;
};

struct TrainHyper {
  LearningRates lr;
  std::size_t batch_size = 20;
  Real momentum = 0.999;    // mu
  Real temperature = 0.07;  // beta
  AugmentationPolicy augmentation;
  LossWeights weights;
  AblationConfig ablation;
  bool tau_con_grad_phase2 = false;
};

struct ClientState {
  std::size_t client_id = 0;
  PromptSet p_kappa;
  PromptSet p_rho;
  NegativeQueue queue;
  std::optional<MomentumEncoders> momentum;
  Dataset train;
  Dataset test;
  std::mt19937_64 rng;
  // h_kappa as it left this client's last local round.
  std::optional<Classifier> local_classifier;

  // Prompts, queue and rng all derive from (root_seed, client_id).
  static ClientState create(std::size_t client_id, Dataset train, Dataset test, const ModelConfig& model,
                            std::size_t n_kappa, std::size_t n_rho, std::size_t queue_size, std::uint64_t root_seed);
};

struct EpochStats {
  Real ce_sum = 0;
  Real con_sum = 0;
  std::size_t ce_batches = 0;
  std::size_t con_batches = 0;

  Real mean_ce() const { return ce_batches ? ce_sum / static_cast<Real>(ce_batches) : 0; }
  Real mean_con() const { return con_batches ? con_sum / static_cast<Real>(con_batches) : 0; }
  void merge(const EpochStats& o);
};

// One pass over the client's shuffled training data with `phase` routing.
// Losses whose routed groups are all absent from their path are skipped.
EpochStats run_epoch(ClientState& state, ModelBundle& bundle, const TrainHyper& hyper, Phase phase);
EpochStats feature_learning_epoch(ClientState& state, ModelBundle& bundle, const TrainHyper& hyper);
EpochStats task_adaptation_epoch(ClientState& state, ModelBundle& bundle, const TrainHyper& hyper);

// Query through the online path and positive key through the momentum path,
// both with p_rho. k_pos never carries gradient. Requires state.momentum.
std::pair<Tensor, Tensor> two_view_forward(Tape& tape, const Tensor& x, ClientState& state, const ModelBundle& bundle,
                                           const TrainHyper& hyper);

struct UploadPayload {
  std::size_t client_id = 0;
  FlatParams components;
  std::size_t sample_count = 0;
};

struct LocalRoundResult {
  UploadPayload payload;
  EpochStats feature_learning;
  EpochStats task_adaptation;  // joint epochs land here when alternation is off
};

// Trains a private copy of `global` for R_f + R_a epochs and returns the
// shared components. Prompts stay in `state`.
LocalRoundResult local_round(ClientState& state, const ModelBundle& global, const PhasePlan& plan,
                             const TrainHyper& hyper);

}  // namespace fedpft
