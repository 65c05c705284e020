#include "fedpft/client.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedpft/rng.hpp"

namespace fedpft {

std::string GroupSet::to_string() const {
  std::string s = "{";
  for (auto g : kAllGroups) {
    if (!contains(g)) continue;
    if (s.size() > 1) s += ",";
    s += group_name(g);
  }
  return s + "}";
}

const char* group_name(Group g) {
  switch (g) {
    case Group::phi: return "phi";
    case Group::tau: return "tau";
    case Group::classifier: return "h_kappa";
    case Group::projection: return "h_rho";
    case Group::p_kappa: return "p_kappa";
    case Group::p_rho: return "p_rho";
  }
  return "?";
}

GroupSet RoutingTable::routes(Phase phase, LossKind loss) const {
  switch (phase) {
    case Phase::feature_learning:
      return loss == LossKind::ce ? GroupSet{Group::p_kappa, Group::tau}
                                  : GroupSet{Group::phi, Group::tau, Group::projection};
    case Phase::task_adaptation:
      if (loss == LossKind::ce) return {Group::phi, Group::tau, Group::classifier};
      return tau_con_grad_phase2 ? GroupSet{Group::p_rho, Group::tau} : GroupSet{Group::p_rho};
    case Phase::joint:
      return loss == LossKind::ce ? GroupSet{Group::phi, Group::tau, Group::classifier, Group::p_kappa}
                                  : GroupSet{Group::phi, Group::tau, Group::projection, Group::p_rho};
  }
  return {};
}

GroupSet RoutingTable::frozen(Phase phase) const {
  const GroupSet updated = routes(phase, LossKind::ce) | routes(phase, LossKind::con);
  GroupSet out;
  for (auto g : kAllGroups)
    if (!updated.contains(g)) out = out | GroupSet{g};
  return out;
}

std::vector<std::string> PhasePlan::warnings() const {
  std::vector<std::string> out;
  if (feature_epochs <= adaptation_epochs) {
    out.push_back("R_f (" + std::to_string(feature_epochs) + ") is not larger than R_a (" +
                  std::to_string(adaptation_epochs) + "); feature learning should dominate the local round");
  }
  return out;
}

Real LearningRates::of(Group g) const {
  switch (g) {
    case Group::phi: return phi;
    case Group::tau: return tau;
    case Group::classifier: return classifier;
    case Group::projection: return projection;
    case Group::p_kappa: return p_kappa;
    case Group::p_rho: return p_rho;
  }
  return 0;
}

LearningRates LearningRates::uniform(Real lr) { return {lr, lr, lr, lr, lr, lr}; }

void EpochStats::merge(const EpochStats& o) {
  ce_sum += o.ce_sum;
  con_sum += o.con_sum;
  ce_batches += o.ce_batches;
  con_batches += o.con_batches;
}

ClientState ClientState::create(std::size_t client_id, Dataset train, Dataset test, const ModelConfig& model,
                                std::size_t n_kappa, std::size_t n_rho, std::size_t queue_size,
                                std::uint64_t root_seed) {
  ClientState s;
  s.client_id = client_id;
  s.p_kappa = init_prompts(PromptKind::classification, n_kappa, model.feature_dim,
                           derive_seed(root_seed, "p_kappa", client_id));
  s.p_rho = init_prompts(PromptKind::contrastive, n_rho, model.feature_dim, derive_seed(root_seed, "p_rho", client_id));
  std::mt19937_64 queue_rng(derive_seed(root_seed, "queue", client_id));
  s.queue = NegativeQueue::random(queue_size, model.proj_dim, queue_rng);
  s.train = std::move(train);
  s.test = std::move(test);
  s.rng.seed(derive_seed(root_seed, "client", client_id));
  return s;
}

namespace {

// Groups each loss touches in its forward path under the ablation flags.
struct PathLayout {
  GroupSet ce_path;
  GroupSet con_path;
  // Prompt set the contrastive path runs through, if any.
  std::optional<Group> con_prompts;
};

PathLayout path_layout(const AblationConfig& flags) {
  PathLayout layout;
  layout.ce_path = {Group::phi, Group::classifier};
  if (flags.use_p_kappa) layout.ce_path = layout.ce_path | GroupSet{Group::tau, Group::p_kappa};
  if (flags.use_L_con) {
    layout.con_path = {Group::phi, Group::projection};
    if (flags.use_p_rho) {
      layout.con_prompts = Group::p_rho;
    } else if (flags.use_p_kappa) {
      layout.con_prompts = Group::p_kappa;
    }
    if (layout.con_prompts) layout.con_path = layout.con_path | GroupSet{Group::tau, *layout.con_prompts};
  }
  return layout;
}

// Live parameters where the loss may update them, frozen copies elsewhere.
// Routing through frozen copies is the stop-gradient barrier.
struct Selection {
  const ModelBundle& live;
  const ModelBundle& frozen;
  const ClientState& state;
  const PromptSet& frozen_p_kappa;
  const PromptSet& frozen_p_rho;
  GroupSet routed;

  const FeatureExtractor& phi() const { return routed.contains(Group::phi) ? live.phi : frozen.phi; }
  const FeatureTransformer& tau() const { return routed.contains(Group::tau) ? live.tau : frozen.tau; }
  const Classifier& hk() const { return routed.contains(Group::classifier) ? live.hk : frozen.hk; }
  const ProjectionHead& hrho() const { return routed.contains(Group::projection) ? live.hrho : frozen.hrho; }
  const PromptSet& prompts(Group g) const {
    if (g == Group::p_kappa) return routed.contains(g) ? state.p_kappa : frozen_p_kappa;
    return routed.contains(g) ? state.p_rho : frozen_p_rho;
  }
};

std::vector<Tensor*> group_tensors(Group g, ModelBundle& bundle, ClientState& state) {
  switch (g) {
    case Group::phi: return param_pointers(bundle.phi);
    case Group::tau: return param_pointers(bundle.tau);
    case Group::classifier: return param_pointers(bundle.hk);
    case Group::projection: return param_pointers(bundle.hrho);
    case Group::p_kappa:
      return state.p_kappa.prompts ? std::vector<Tensor*>{&*state.p_kappa.prompts} : std::vector<Tensor*>{};
    case Group::p_rho:
      return state.p_rho.prompts ? std::vector<Tensor*>{&*state.p_rho.prompts} : std::vector<Tensor*>{};
  }
  return {};
}

void require_finite(Real value, const char* what, const ClientState& state, Phase phase, std::size_t batch) {
  if (!std::isfinite(value)) {
    throw std::runtime_error(std::string("non-finite ") + what + " on client " + std::to_string(state.client_id) +
                             " in phase " + std::to_string(static_cast<int>(phase)) + " at batch " +
                             std::to_string(batch));
  }
}

void ensure_momentum(ClientState& state, const ModelBundle& bundle, const TrainHyper& hyper) {
  if (!state.momentum) state.momentum = MomentumEncoders::from_online(bundle.phi, bundle.hrho, hyper.momentum);
}

// Positive keys: momentum extractor and head, online tau, frozen prompts.
Tensor positive_keys(const Tensor& x2, const ClientState& state, const FeatureTransformer& tau,
                     const PromptSet* prompts) {
  Tape untracked(Tape::Mode::inference);
  Tensor f = extract(untracked, state.momentum->phi, x2);
  if (prompts) f = transform_batch(untracked, tau, f, *prompts);
  return project(untracked, state.momentum->hrho, f);
}

void train_step(ClientState& state, ModelBundle& bundle, const TrainHyper& hyper, Phase phase,
                std::span<const std::size_t> batch_idx, std::size_t batch_no, EpochStats& stats) {
  const RoutingTable routing{hyper.tau_con_grad_phase2};
  const PathLayout layout = path_layout(hyper.ablation);
  const GroupSet live_ce = routing.routes(phase, LossKind::ce) & layout.ce_path;
  const GroupSet live_con = routing.routes(phase, LossKind::con) & layout.con_path;
  const bool do_ce = !live_ce.empty();
  const bool do_con = !live_con.empty();
  if (!do_ce && !do_con) return;

  const ModelBundle frozen = frozen_copy(bundle);
  const PromptSet frozen_pk = state.p_kappa.detached();
  const PromptSet frozen_pr = state.p_rho.detached();

  Tape tape;
  const Tensor x = state.train.batch(batch_idx);
  std::optional<Tensor> loss_ce, loss_con, k_pos;

  if (do_ce) {
    const Selection sel{bundle, frozen, state, frozen_pk, frozen_pr, live_ce};
    Tensor f = extract(tape, sel.phi(), x);
    if (hyper.ablation.use_p_kappa) f = transform_batch(tape, sel.tau(), f, sel.prompts(Group::p_kappa));
    const auto labels = state.train.batch_labels(batch_idx);
    loss_ce = cross_entropy(tape, classify(tape, sel.hk(), f), labels);
    require_finite(loss_ce->item(), "cross-entropy loss", state, phase, batch_no);
  }
  if (do_con) {
    ensure_momentum(state, bundle, hyper);
    const Selection sel{bundle, frozen, state, frozen_pk, frozen_pr, live_con};
    auto [x1, x2] = two_views(x, hyper.augmentation, state.rng);
    Tensor f = extract(tape, sel.phi(), x1);
    const PromptSet* key_prompts = nullptr;
    if (layout.con_prompts) {
      f = transform_batch(tape, sel.tau(), f, sel.prompts(*layout.con_prompts));
      key_prompts = *layout.con_prompts == Group::p_kappa ? &frozen_pk : &frozen_pr;
    }
    Tensor q = project(tape, sel.hrho(), f);
    k_pos = positive_keys(x2, state, frozen.tau, key_prompts);
    loss_con = info_nce(tape, q, *k_pos, state.queue, hyper.temperature);
    require_finite(loss_con->item(), "contrastive loss", state, phase, batch_no);
  }

  Tensor total;
  if (loss_ce && loss_con) {
    total = ad::add(tape, ad::scale(tape, *loss_ce, hyper.weights.ce), ad::scale(tape, *loss_con, hyper.weights.con));
  } else if (loss_ce) {
    total = ad::scale(tape, *loss_ce, hyper.weights.ce);
  } else {
    total = ad::scale(tape, *loss_con, hyper.weights.con);
  }
  const auto grads = tape.backward(total);

  const GroupSet step = live_ce | live_con;
  for (auto g : kAllGroups) {
    if (!step.contains(g)) continue;
    ad::ParamGroup<Real> group{group_name(g), group_tensors(g, bundle, state), hyper.lr.of(g)};
    ad::sgd_step(group, grads);
  }

  if (loss_ce) {
    stats.ce_sum += loss_ce->item();
    ++stats.ce_batches;
  }
  if (loss_con) {
    momentum_update(*state.momentum, bundle.phi, bundle.hrho);
    state.queue.push(*k_pos);
    stats.con_sum += loss_con->item();
    ++stats.con_batches;
  }
}

}  // namespace

EpochStats run_epoch(ClientState& state, ModelBundle& bundle, const TrainHyper& hyper, Phase phase) {
  if (state.train.size() == 0) {
    throw std::invalid_argument("client " + std::to_string(state.client_id) + " has no local training data");
  }
  if (hyper.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> order(state.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), state.rng);

  EpochStats stats;
  std::size_t batch_no = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += hyper.batch_size, ++batch_no) {
    const std::size_t end = std::min(order.size(), begin + hyper.batch_size);
    train_step(state, bundle, hyper, phase, std::span<const std::size_t>(order).subspan(begin, end - begin), batch_no,
               stats);
  }
  return stats;
}

EpochStats feature_learning_epoch(ClientState& state, ModelBundle& bundle, const TrainHyper& hyper) {
  return run_epoch(state, bundle, hyper, Phase::feature_learning);
}

EpochStats task_adaptation_epoch(ClientState& state, ModelBundle& bundle, const TrainHyper& hyper) {
  return run_epoch(state, bundle, hyper, Phase::task_adaptation);
}

std::pair<Tensor, Tensor> two_view_forward(Tape& tape, const Tensor& x, ClientState& state, const ModelBundle& bundle,
                                           const TrainHyper& hyper) {
  if (!state.momentum) throw std::logic_error("two_view_forward: client has no momentum encoders");
  auto [x1, x2] = two_views(x, hyper.augmentation, state.rng);
  Tensor f = transform_batch(tape, bundle.tau, extract(tape, bundle.phi, x1), state.p_rho);
  Tensor q = project(tape, bundle.hrho, f);
  const PromptSet frozen_pr = state.p_rho.detached();
  return {std::move(q), positive_keys(x2, state, frozen_copy(bundle.tau), &frozen_pr)};
}

LocalRoundResult local_round(ClientState& state, const ModelBundle& global, const PhasePlan& plan,
                             const TrainHyper& hyper) {
  ModelBundle local = global;
  for_each_param(local, [](const std::string&, Tensor& t) {
    t.set_requires_grad(true);
    t.zero_grad();
  });
  state.momentum.reset();
  if (hyper.ablation.use_L_con) ensure_momentum(state, local, hyper);

  LocalRoundResult result;
  if (hyper.ablation.use_alternating) {
    for (std::size_t e = 0; e < plan.feature_epochs; ++e)
      result.feature_learning.merge(feature_learning_epoch(state, local, hyper));
    for (std::size_t e = 0; e < plan.adaptation_epochs; ++e)
      result.task_adaptation.merge(task_adaptation_epoch(state, local, hyper));
  } else {
    for (std::size_t e = 0; e < plan.total(); ++e)
      result.task_adaptation.merge(run_epoch(state, local, hyper, Phase::joint));
  }
  state.local_classifier = frozen_copy(local.hk);
  result.payload = {state.client_id, to_flat(local), state.train.size()};
  return result;
}

}  // namespace fedpft
