#include "fedpft/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fedpft/rng.hpp"

namespace fedpft {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{num_classes, input_dim, {}, {}};
  out.features.reserve(indices.size() * input_dim);
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    if (i >= size()) throw std::out_of_range("dataset index " + std::to_string(i) + " out of range");
    auto r = row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  std::vector<Real> values;
  values.reserve(indices.size() * input_dim);
  for (auto i : indices) {
    auto r = row(i);
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor::matrix(indices.size(), input_dim, std::move(values));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels[i]);
  return out;
}

Tensor Dataset::all_features() const { return Tensor::matrix(size(), input_dim, features); }

std::vector<std::size_t> Dataset::class_histogram() const {
  std::vector<std::size_t> h(num_classes, 0);
  for (auto y : labels) ++h[static_cast<std::size_t>(y)];
  return h;
}

void Dataset::validate() const {
  if (labels.empty()) throw std::invalid_argument("dataset is empty");
  if (features.size() != labels.size() * input_dim) throw std::invalid_argument("dataset feature/label count mismatch");
  for (auto y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw std::invalid_argument("dataset label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) +
                                  ")");
  }
}

Dataset make_synthetic_like(std::size_t num_classes, std::size_t input_dim, std::size_t per_class, Real spread,
                            std::uint64_t center_seed, std::uint64_t sample_seed) {
  if (num_classes == 0 || input_dim == 0 || per_class == 0 || !(spread > 0))
    throw std::invalid_argument("make_synthetic: all arguments must be positive");
  std::mt19937_64 center_rng(center_seed);
  std::normal_distribution<Real> normal(0.0, 1.0);
  std::vector<Real> centers(num_classes * input_dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    Real norm = 0;
    while (norm == 0) {
      norm = 0;
      for (std::size_t j = 0; j < input_dim; ++j) {
        centers[c * input_dim + j] = normal(center_rng);
        norm += centers[c * input_dim + j] * centers[c * input_dim + j];
      }
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < input_dim; ++j) centers[c * input_dim + j] *= spread / norm;
  }

  std::mt19937_64 rng(sample_seed);
  Dataset d{num_classes, input_dim, {}, {}};
  d.features.reserve(num_classes * per_class * input_dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      for (std::size_t j = 0; j < input_dim; ++j) d.features.push_back(centers[c * input_dim + j] + normal(rng));
      d.labels.push_back(static_cast<int>(c));
    }
  }
  return d;
}

Dataset make_synthetic(std::size_t num_classes, std::size_t input_dim, std::size_t per_class, Real spread,
                       std::uint64_t seed) {
  return make_synthetic_like(num_classes, input_dim, per_class, spread, seed, derive_seed(seed, "samples"));
}

Dataset load_csv_dataset(const std::filesystem::path& path, std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset file " + path.string() + " is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header[0] != "label") {
    throw std::runtime_error("dataset header must be 'label,f0,f1,...'");
  }
  for (std::size_t j = 1; j < header.size(); ++j) {
    if (header[j] != "f" + std::to_string(j - 1))
      throw std::runtime_error("dataset header column " + std::to_string(j) + " should be f" + std::to_string(j - 1));
  }
  Dataset d{0, header.size() - 1, {}, {}};
  std::size_t line_no = 1;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        if (col == 0) {
          d.labels.push_back(std::stoi(cell));
          max_label = std::max(max_label, d.labels.back());
        } else {
          d.features.push_back(std::stod(cell));
        }
      } catch (const std::exception&) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad value '" + cell + "'");
      }
      ++col;
    }
    if (col != header.size())
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
  }
  d.num_classes = num_classes ? num_classes : static_cast<std::size_t>(max_label + 1);
  d.validate();
  return d;
}

std::size_t PartitionAssignment::assigned() const {
  std::size_t n = 0;
  for (const auto& c : clients) n += c.size();
  return n;
}

void PartitionAssignment::validate(std::size_t total) const {
  std::vector<bool> seen(total, false);
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (clients[i].empty()) throw std::logic_error("partition leaves client " + std::to_string(i) + " empty");
    for (auto idx : clients[i]) {
      if (idx >= total) throw std::logic_error("partition index out of range");
      if (seen[idx]) throw std::logic_error("partition assigns index " + std::to_string(idx) + " twice");
      seen[idx] = true;
    }
  }
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(std::span<const int> labels, std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " out of range");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  return by_class;
}

std::size_t infer_classes(std::span<const int> labels) {
  int mx = -1;
  for (auto y : labels) mx = std::max(mx, y);
  return static_cast<std::size_t>(mx + 1);
}

void repair_empty(std::vector<std::vector<std::size_t>>& clients) {
  for (;;) {
    auto empty = std::find_if(clients.begin(), clients.end(), [](const auto& c) { return c.empty(); });
    if (empty == clients.end()) return;
    auto largest = std::max_element(clients.begin(), clients.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
    if (largest->size() < 2) throw std::invalid_argument("not enough samples to give every client one");
    empty->push_back(largest->back());
    largest->pop_back();
  }
}

}  // namespace

PartitionAssignment dirichlet_partition(std::span<const int> labels, std::size_t num_clients, Real alpha,
                                        std::uint64_t seed) {
  if (!(alpha > 0)) throw std::invalid_argument("dirichlet_partition: alpha must be positive");
  if (num_clients == 0) throw std::invalid_argument("dirichlet_partition: need at least one client");
  if (num_clients > labels.size())
    throw std::invalid_argument("dirichlet_partition: " + std::to_string(num_clients) + " clients for " +
                                std::to_string(labels.size()) + " samples");
  std::mt19937_64 rng(seed);
  auto by_class = indices_by_class(labels, infer_classes(labels));
  PartitionAssignment out;
  out.clients.resize(num_clients);
  std::gamma_distribution<Real> gamma(alpha, 1.0);
  std::vector<Real> share(num_clients);
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    Real total = 0;
    for (auto& s : share) {
      s = gamma(rng);
      total += s;
    }
    if (!(total > 0)) {
      // every draw underflowed; all mass goes to one client
      std::fill(share.begin(), share.end(), Real(0));
      share[std::uniform_int_distribution<std::size_t>(0, num_clients - 1)(rng)] = 1;
      total = 1;
    }
    const std::size_t n = idx.size();
    Real cumulative = 0;
    std::size_t begin = 0;
    for (std::size_t i = 0; i < num_clients; ++i) {
      cumulative += share[i] / total;
      std::size_t end = i + 1 == num_clients ? n : std::min(n, static_cast<std::size_t>(std::floor(cumulative * n)));
      end = std::max(end, begin);
      out.clients[i].insert(out.clients[i].end(), idx.begin() + static_cast<std::ptrdiff_t>(begin),
                            idx.begin() + static_cast<std::ptrdiff_t>(end));
      begin = end;
    }
  }
  repair_empty(out.clients);
  for (auto& c : out.clients) std::sort(c.begin(), c.end());
  return out;
}

PartitionAssignment pathological_partition(std::span<const int> labels, std::size_t num_classes,
                                           std::size_t num_clients, std::size_t classes_per_client,
                                           std::uint64_t seed) {
  if (num_clients == 0 || classes_per_client == 0)
    throw std::invalid_argument("pathological_partition: clients and classes per client must be positive");
  if (classes_per_client > num_classes)
    throw std::invalid_argument("pathological_partition: " + std::to_string(classes_per_client) +
                                " classes per client but only " + std::to_string(num_classes) + " classes");
  std::mt19937_64 rng(seed);
  auto by_class = indices_by_class(labels, num_classes);

  const std::size_t shards = num_clients * classes_per_client;
  std::vector<std::size_t> class_order(num_classes);
  std::iota(class_order.begin(), class_order.end(), 0);
  std::shuffle(class_order.begin(), class_order.end(), rng);
  // The first (shards % C) classes in the random order carry one extra shard.
  std::vector<std::size_t> shard_count(num_classes, shards / num_classes);
  for (std::size_t i = 0; i < shards % num_classes; ++i) ++shard_count[class_order[i]];

  std::size_t shard_size = SIZE_MAX;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (shard_count[c] > 0) shard_size = std::min(shard_size, by_class[c].size() / shard_count[c]);
  }
  if (shard_size == 0 || shard_size == SIZE_MAX)
    throw std::invalid_argument("pathological_partition: not enough samples for " + std::to_string(shards) +
                                " equal shards over " + std::to_string(num_classes) + " classes");

  // Shards listed class by class; client i takes positions i, i+N, i+2N, ...
  // Each class spans at most N consecutive positions, so a client never gets
  // the same class twice.
  std::vector<std::vector<std::size_t>> shard_list;
  for (auto c : class_order) {
    auto& idx = by_class[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t s = 0; s < shard_count[c]; ++s) {
      shard_list.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s * shard_size),
                              idx.begin() + static_cast<std::ptrdiff_t>((s + 1) * shard_size));
    }
  }
  PartitionAssignment out;
  out.clients.resize(num_clients);
  for (std::size_t i = 0; i < num_clients; ++i) {
    for (std::size_t j = 0; j < classes_per_client; ++j) {
      const auto& shard = shard_list[i + j * num_clients];
      out.clients[i].insert(out.clients[i].end(), shard.begin(), shard.end());
    }
    std::sort(out.clients[i].begin(), out.clients[i].end());
  }
  return out;
}

PartitionAssignment proportional_partition(std::span<const int> pool_labels,
                                           const std::vector<std::vector<std::size_t>>& train_histograms,
                                           std::uint64_t seed) {
  if (train_histograms.empty()) throw std::invalid_argument("proportional_partition: no clients");
  const std::size_t num_classes = train_histograms.front().size();
  std::mt19937_64 rng(seed);
  auto by_class = indices_by_class(pool_labels, num_classes);
  PartitionAssignment out;
  out.clients.resize(train_histograms.size());
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& idx = by_class[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t weight_total = 0;
    for (const auto& h : train_histograms) weight_total += h[c];
    if (weight_total == 0 || idx.empty()) continue;
    const std::size_t n = idx.size();
    std::vector<std::size_t> count(train_histograms.size());
    std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (remainder, client)
    std::size_t given = 0;
    for (std::size_t i = 0; i < train_histograms.size(); ++i) {
      const std::size_t num = n * train_histograms[i][c];
      count[i] = num / weight_total;
      given += count[i];
      remainders.emplace_back(num % weight_total, i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; given < n && r < remainders.size(); ++r, ++given) ++count[remainders[r].second];
    std::size_t begin = 0;
    for (std::size_t i = 0; i < count.size(); ++i) {
      out.clients[i].insert(out.clients[i].end(), idx.begin() + static_cast<std::ptrdiff_t>(begin),
                            idx.begin() + static_cast<std::ptrdiff_t>(begin + count[i]));
      begin += count[i];
    }
  }
  repair_empty(out.clients);
  for (auto& c : out.clients) std::sort(c.begin(), c.end());
  return out;
}

std::vector<std::size_t> class_histogram(std::span<const int> labels, std::span<const std::size_t> indices,
                                         std::size_t num_classes) {
  std::vector<std::size_t> h(num_classes, 0);
  for (auto i : indices) ++h.at(static_cast<std::size_t>(labels[i]));
  return h;
}

nlohmann::json partition_to_json(const PartitionAssignment& p, std::span<const int> labels,
                                 std::size_t num_classes) {
  nlohmann::json clients = nlohmann::json::array();
  for (std::size_t i = 0; i < p.clients.size(); ++i) {
    clients.push_back({{"client", i},
                       {"size", p.clients[i].size()},
                       {"class_histogram", class_histogram(labels, p.clients[i], num_classes)},
                       {"indices", p.clients[i]}});
  }
  return {{"num_clients", p.clients.size()}, {"num_classes", num_classes}, {"clients", clients}};
}

std::pair<std::vector<Real>, std::vector<Real>> two_views(std::span<const Real> x, const AugmentationPolicy& policy,
                                                          std::mt19937_64& rng) {
  if (policy.noise_std < 0 || policy.mask_prob < 0 || policy.mask_prob > 1)
    throw std::invalid_argument("augmentation policy out of range");
  auto view = [&]() {
    std::vector<Real> v(x.begin(), x.end());
    if (policy.noise_std > 0) {
      std::normal_distribution<Real> noise(0.0, policy.noise_std);
      for (auto& e : v) e += noise(rng);
    }
    if (policy.mask_prob > 0) {
      std::bernoulli_distribution mask(policy.mask_prob);
      for (auto& e : v)
        if (mask(rng)) e = 0;
    }
    return v;
  };
  auto first = view();
  auto second = view();
  return {std::move(first), std::move(second)};
}

std::pair<Tensor, Tensor> two_views(const Tensor& batch, const AugmentationPolicy& policy, std::mt19937_64& rng) {
  const std::size_t b = batch.rows(), d = batch.cols();
  std::vector<Real> a, c;
  a.reserve(b * d);
  c.reserve(b * d);
  for (std::size_t i = 0; i < b; ++i) {
    auto [v1, v2] = two_views(batch.data().subspan(i * d, d), policy, rng);
    a.insert(a.end(), v1.begin(), v1.end());
    c.insert(c.end(), v2.begin(), v2.end());
  }
  return {Tensor::matrix(b, d, std::move(a)), Tensor::matrix(b, d, std::move(c))};
}

}  // namespace fedpft
