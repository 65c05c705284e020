#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedpft/data.hpp"
#include "fedpft/model.hpp"

namespace fedpft {

struct ClientRoundMetrics {
  std::size_t client_id = 0;
  Real accuracy = 0;
  Real lce = 0;   // mean over every batch of the local round that computed it
  Real lcon = 0;
};

struct RoundReport {
  std::size_t round = 0;
  std::vector<ClientRoundMetrics> clients;  // participating clients, by id
  Real mean_accuracy = 0;
  Real std_accuracy = 0;  // population std
  Real phase1_lce = 0;
  Real phase1_lcon = 0;
  Real phase2_lce = 0;
  Real phase2_lcon = 0;
  std::size_t payload_parameter_count = 0;
};

// Fills mean_accuracy / std_accuracy from clients.
void summarize_accuracy(RoundReport& report);

// Fraction of samples whose argmax of h_kappa(tau([phi(x), p_kappa])) is the
// label, ties to the lowest class index. A null p_kappa skips tau entirely;
// a non-null head replaces the bundle's classifier.
Real personalized_accuracy(const ModelBundle& bundle, const PromptSet* p_kappa, const Dataset& test,
                           const Classifier* head = nullptr);

// Index of the largest entry; the first one on ties.
std::size_t argmax(std::span<const Real> values);

// phi(x) for every sample, S x m.
Tensor extract_features(const FeatureExtractor& phi, const Dataset& data);

// Transformed features f' for every sample (f = phi(x) when prompts is null).
Tensor transformed_features(const ModelBundle& bundle, const PromptSet* prompts, const Dataset& data);

struct ProbeOptions {
  std::size_t epochs = 200;
  Real learning_rate = 0.1;
  Real train_fraction = 0.8;
};

struct ProbeResult {
  Real accuracy = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::size_t redraws = 0;
};

// Trains a fresh softmax-regression head on a random train/held-out split of
// (features, labels) with full-batch gradient descent and reports held-out
// accuracy. Re-draws the split once if a class is missing from the train
// side, then throws std::runtime_error.
ProbeResult linear_probe(const Tensor& features, std::span<const int> labels, std::size_t num_classes,
                         std::uint64_t split_seed, const ProbeOptions& options = {});

// CSV `client,label,f0..f{m-1}` of transformed features.
void export_features(const ModelBundle& bundle, const PromptSet* prompts, const Dataset& data, std::size_t client_id,
                     const std::filesystem::path& path);

// CSV `sample,w_f,w_p1..w_pn`: attention weights of the f' output position
// over the feature and each prompt.
void export_attention(const FeatureTransformer& tau, const Tensor& features, const PromptSet& prompts,
                      const std::filesystem::path& path);

struct FeatureExport {
  std::vector<std::size_t> clients;
  std::vector<int> labels;
  std::vector<std::vector<Real>> features;
};
FeatureExport load_feature_export(const std::filesystem::path& path);

// Rows of an attention export, sample column dropped.
std::vector<std::vector<Real>> load_attention_export(const std::filesystem::path& path);

}  // namespace fedpft
