#include "fedpft/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fedpft/ablation.hpp"
#include "fedpft/io.hpp"
#include "fedpft/losses.hpp"
#include "fedpft/rng.hpp"

namespace fedpft {

// ---- ablation settings ----------------------------------------------------------

bool AblationConfig::subset_of(const AblationConfig& o) const {
  auto le = [](bool a, bool b) { return !a || b; };
  return le(use_p_kappa, o.use_p_kappa) && le(use_alternating, o.use_alternating) && le(use_L_con, o.use_L_con) &&
         le(use_p_rho, o.use_p_rho) && le(personalized_classifier, o.personalized_classifier);
}

std::string AblationConfig::describe() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += "+";
    s += name;
  };
  add(use_p_kappa, "p_kappa");
  add(use_alternating, "alternating");
  add(use_L_con, "L_con");
  add(use_p_rho, "p_rho");
  add(personalized_classifier, "local_head");
  return s.empty() ? "none" : s;
}

const std::vector<std::string>& ablation_setting_names() {
  static const std::vector<std::string> names = {"I", "II", "III", "IV", "V", "VI", "VII", "VIII"};
  return names;
}

AblationConfig ablation_setting(std::string_view name) {
  //                                         p_kappa alt    L_con  p_rho  local_head
  static const std::map<std::string, AblationConfig, std::less<>> table = {
      {"I", {false, false, false, false, false}},    {"II", {true, false, false, false, false}},
      {"III", {true, true, false, false, false}},    {"IV", {true, true, true, false, false}},
      {"V", {true, true, true, true, false}},        {"VI", {false, false, true, false, false}},
      {"VII", {true, false, true, false, false}},    {"VIII", {true, false, true, true, false}},
  };
  auto it = table.find(name);
  if (it == table.end()) throw std::invalid_argument("unknown ablation setting '" + std::string(name) + "'");
  return it->second;
}

// ---- accuracy ----------------------------------------------------------------

void summarize_accuracy(RoundReport& report) {
  if (report.clients.empty()) {
    report.mean_accuracy = report.std_accuracy = 0;
    return;
  }
  Real sum = 0;
  for (const auto& c : report.clients) sum += c.accuracy;
  const Real n = static_cast<Real>(report.clients.size());
  report.mean_accuracy = sum / n;
  Real sq = 0;
  for (const auto& c : report.clients) sq += (c.accuracy - report.mean_accuracy) * (c.accuracy - report.mean_accuracy);
  report.std_accuracy = std::sqrt(sq / n);
}

std::size_t argmax(std::span<const Real> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

Real personalized_accuracy(const ModelBundle& bundle, const PromptSet* p_kappa, const Dataset& test,
                           const Classifier* head) {
  if (test.size() == 0) throw std::invalid_argument("personalized_accuracy: empty test set");
  Tape tape(Tape::Mode::inference);
  Tensor f = extract(tape, bundle.phi, test.all_features());
  if (p_kappa) f = transform_batch(tape, bundle.tau, f, *p_kappa);
  const Tensor logits = classify(tape, head ? *head : bundle.hk, f);
  const std::size_t c = logits.cols();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const std::span<const Real> row(logits.data().data() + i * c, c);
    if (static_cast<int>(argmax(row)) == test.labels[i]) ++correct;
  }
  return static_cast<Real>(correct) / static_cast<Real>(test.size());
}

Tensor extract_features(const FeatureExtractor& phi, const Dataset& data) {
  Tape tape(Tape::Mode::inference);
  return extract(tape, phi, data.all_features()).detach();
}

Tensor transformed_features(const ModelBundle& bundle, const PromptSet* prompts, const Dataset& data) {
  Tape tape(Tape::Mode::inference);
  Tensor f = extract(tape, bundle.phi, data.all_features());
  if (prompts) f = transform_batch(tape, bundle.tau, f, *prompts);
  return f.detach();
}

// ---- linear probe ----------------------------------------------------------------

namespace {

struct Split {
  std::vector<std::size_t> train, test;
};

Split draw_split(std::size_t n, Real train_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<Real>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  return {{order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train)},
          {order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end()}};
}

bool covers(const Split& split, std::span<const int> labels, const std::set<int>& classes) {
  std::set<int> seen;
  for (auto i : split.train) seen.insert(labels[i]);
  return seen == classes;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t m = x.cols();
  std::vector<Real> out;
  out.reserve(rows.size() * m);
  for (auto r : rows) out.insert(out.end(), x.data().begin() + r * m, x.data().begin() + (r + 1) * m);
  return Tensor::matrix(rows.size(), m, std::move(out));
}

}  // namespace

ProbeResult linear_probe(const Tensor& features, std::span<const int> labels, std::size_t num_classes,
                         std::uint64_t split_seed, const ProbeOptions& options) {
  const std::size_t s = features.rows();
  if (labels.size() != s) throw std::invalid_argument("linear_probe: label count does not match feature rows");
  if (num_classes < 2) throw std::invalid_argument("linear_probe: need at least 2 classes");
  if (s < 2 * num_classes) {
    throw std::invalid_argument("linear_probe: need at least 2C = " + std::to_string(2 * num_classes) +
                                " samples, got " + std::to_string(s));
  }
  if (!(options.train_fraction > 0 && options.train_fraction < 1))
    throw std::invalid_argument("linear_probe: train_fraction must lie in (0, 1)");
  for (auto l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw std::out_of_range("linear_probe: label out of range");

  const std::set<int> classes(labels.begin(), labels.end());
  ProbeResult result;
  Split split = draw_split(s, options.train_fraction, split_seed);
  if (!covers(split, labels, classes)) {
    ++result.redraws;
    split = draw_split(s, options.train_fraction, derive_seed(split_seed, "probe-redraw"));
    if (!covers(split, labels, classes))
      throw std::runtime_error("linear_probe: a class is missing from the training side after one re-draw");
  }

  // Standardize with train-side statistics.
  const std::size_t m = features.cols();
  std::vector<Real> mean(m, 0), stdev(m, 0);
  for (auto i : split.train)
    for (std::size_t j = 0; j < m; ++j) mean[j] += features.data()[i * m + j];
  for (auto& v : mean) v /= static_cast<Real>(split.train.size());
  for (auto i : split.train)
    for (std::size_t j = 0; j < m; ++j) {
      const Real d = features.data()[i * m + j] - mean[j];
      stdev[j] += d * d;
    }
  for (auto& v : stdev) {
    v = std::sqrt(v / static_cast<Real>(split.train.size()));
    if (v < 1e-12) v = 1;
  }
  auto standardized = [&](std::span<const std::size_t> rows) {
    Tensor x = gather_rows(features, rows);
    auto d = x.mutable_data();
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < m; ++j) d[r * m + j] = (d[r * m + j] - mean[j]) / stdev[j];
    return x;
  };
  const Tensor x_train = standardized(split.train);
  const Tensor x_test = standardized(split.test);
  std::vector<int> y_train, y_test;
  for (auto i : split.train) y_train.push_back(labels[i]);
  for (auto i : split.test) y_test.push_back(labels[i]);

  Tensor w = Tensor::zeros({num_classes, m}, true);
  Tensor b = Tensor::zeros({num_classes}, true);
  ad::ParamGroup<Real> group{"probe", {&w, &b}, options.learning_rate};
  for (std::size_t e = 0; e < options.epochs; ++e) {
    Tape tape;
    const Tensor loss = ad::cross_entropy(tape, ad::linear(tape, x_train, w, b), std::span<const int>(y_train));
    const auto grads = tape.backward(loss);
    ad::sgd_step(group, grads);
  }

  Tape tape(Tape::Mode::inference);
  const Tensor logits = ad::linear(tape, x_test, w, b);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y_test.size(); ++i) {
    const std::span<const Real> row(logits.data().data() + i * num_classes, num_classes);
    if (static_cast<int>(argmax(row)) == y_test[i]) ++correct;
  }
  result.accuracy = static_cast<Real>(correct) / static_cast<Real>(y_test.size());
  result.train_size = split.train.size();
  result.test_size = split.test.size();
  return result;
}

// ---- exports -------------------------------------------------------------------

void export_features(const ModelBundle& bundle, const PromptSet* prompts, const Dataset& data, std::size_t client_id,
                     const std::filesystem::path& path) {
  const Tensor f = transformed_features(bundle, prompts, data);
  const std::size_t m = f.cols();
  std::ostringstream out;
  out << "client,label";
  for (std::size_t j = 0; j < m; ++j) out << ",f" << j;
  out << "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << client_id << "," << data.labels[i];
    for (std::size_t j = 0; j < m; ++j) out << "," << io::format_real(f.data()[i * m + j]);
    out << "\n";
  }
  io::write_atomic(path, out.str());
}

void export_attention(const FeatureTransformer& tau, const Tensor& features, const PromptSet& prompts,
                      const std::filesystem::path& path) {
  Tape tape(Tape::Mode::inference);
  Tensor weights;
  transform_batch(tape, tau, features, prompts, &weights);
  const std::size_t cols = weights.cols();
  std::ostringstream out;
  out << "sample,w_f";
  for (std::size_t j = 1; j < cols; ++j) out << ",w_p" << j;
  out << "\n";
  for (std::size_t i = 0; i < weights.rows(); ++i) {
    out << i;
    for (std::size_t j = 0; j < cols; ++j) out << "," << io::format_real(weights.data()[i * cols + j]);
    out << "\n";
  }
  io::write_atomic(path, out.str());
}

FeatureExport load_feature_export(const std::filesystem::path& path) {
  const auto table = io::read_csv(path);
  if (table.header.size() < 3 || table.header[0] != "client" || table.header[1] != "label")
    throw std::runtime_error(path.string() + ": not a feature export");
  FeatureExport out;
  for (const auto& row : table.rows) {
    out.clients.push_back(static_cast<std::size_t>(io::parse_int(row[0])));
    out.labels.push_back(static_cast<int>(io::parse_int(row[1])));
    std::vector<Real> f;
    for (std::size_t j = 2; j < row.size(); ++j) f.push_back(io::parse_real(row[j]));
    out.features.push_back(std::move(f));
  }
  return out;
}

std::vector<std::vector<Real>> load_attention_export(const std::filesystem::path& path) {
  const auto table = io::read_csv(path);
  if (table.header.size() < 2 || table.header[0] != "sample" || table.header[1] != "w_f")
    throw std::runtime_error(path.string() + ": not an attention export");
  std::vector<std::vector<Real>> out;
  for (const auto& row : table.rows) {
    std::vector<Real> w;
    for (std::size_t j = 1; j < row.size(); ++j) w.push_back(io::parse_real(row[j]));
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace fedpft
