#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fedpft/autodiff/tape.hpp"
#include "fedpft/autodiff/tensor.hpp"

// Differentiable primitives over row-major matrices. Rank-1 tensors are
// treated as a single row. Every op records itself on the tape only when one
// of its inputs is tracked, so evaluating with frozen parameters costs nothing
// on the tape.
namespace fedpft::ad {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void add_into(std::vector<T>* dst, const std::vector<T>& src) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
  detail::require(k == b.rows(), "matmul: inner dimensions differ " + shape_string(a.shape()) +
                                     " x " + shape_string(b.shape()));
  std::vector<T> out(r * c, T(0));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += aip * bv[p * c + j];
    }
  }
  auto y = Tensor<T>::matrix(r, c, std::move(out));
  if (tape.needs_record({&a, &b})) {
    tape.record({&a, &b}, y, [an = a.node_ptr(), bn = b.node_ptr(), r, k, c](const auto& g, auto& in) {
      const auto& av = an->data;
      const auto& bv = bn->data;
      if (auto* da = in[0]) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            T acc = T(0);
            for (std::size_t j = 0; j < c; ++j) acc += g[i * c + j] * bv[p * c + j];
            (*da)[i * k + p] += acc;
          }
      }
      if (auto* db = in[1]) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const T aip = av[i * k + p];
            for (std::size_t j = 0; j < c; ++j) (*db)[p * c + j] += aip * g[i * c + j];
          }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.values()[i * c + j];
  auto y = Tensor<T>::matrix(c, r, std::move(out));
  if (tape.needs_record({&a})) {
    tape.record({&a}, y, [r, c](const auto& g, auto& in) {
      auto* da = in[0];
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*da)[i * c + j] += g[j * r + i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.size() == b.size() && a.rows() == b.rows(),
                  "add: shapes differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor<T> y(a.shape(), std::move(out));
  if (tape.needs_record({&a, &b})) {
    tape.record({&a, &b}, y, [](const auto& g, auto& in) {
      detail::add_into(in[0], g);
      detail::add_into(in[1], g);
    });
  }
  return y;
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.size() == b.size() && a.rows() == b.rows(),
                  "sub: shapes differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor<T> y(a.shape(), std::move(out));
  if (tape.needs_record({&a, &b})) {
    tape.record({&a, &b}, y, [](const auto& g, auto& in) {
      detail::add_into(in[0], g);
      if (auto* db = in[1])
        for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] -= g[i];
    });
  }
  return y;
}

// a (r x c) plus a row vector b (c values) broadcast over rows.
template <typename T>
Tensor<T> add_row(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t r = a.rows(), c = a.cols();
  detail::require(b.size() == c, "add_row: bias has " + std::to_string(b.size()) +
                                     " values for " + std::to_string(c) + " columns");
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
  Tensor<T> y(a.shape(), std::move(out));
  if (tape.needs_record({&a, &b})) {
    tape.record({&a, &b}, y, [r, c](const auto& g, auto& in) {
      detail::add_into(in[0], g);
      if (auto* db = in[1])
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) (*db)[j] += g[i * c + j];
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.size() == b.size() && a.rows() == b.rows(),
                  "mul: shapes differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor<T> y(a.shape(), std::move(out));
  if (tape.needs_record({&a, &b})) {
    tape.record({&a, &b}, y, [an = a.node_ptr(), bn = b.node_ptr()](const auto& g, auto& in) {
      if (auto* da = in[0])
        for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] * bn->data[i];
      if (auto* db = in[1])
        for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] += g[i] * an->data[i];
    });
  }
  return y;
}

// Scales row i of a (r x c) by s[i], with s shaped r x 1.
template <typename T>
Tensor<T> mul_col(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& s) {
  const std::size_t r = a.rows(), c = a.cols();
  detail::require(s.size() == r, "mul_col: scale has " + std::to_string(s.size()) +
                                     " values for " + std::to_string(r) + " rows");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.values()[i * c + j] * s[i];
  Tensor<T> y(a.shape(), std::move(out));
  if (tape.needs_record({&a, &s})) {
    tape.record({&a, &s}, y, [an = a.node_ptr(), sn = s.node_ptr(), r, c](const auto& g, auto& in) {
      if (auto* da = in[0])
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) (*da)[i * c + j] += g[i * c + j] * sn->data[i];
      if (auto* ds = in[1])
        for (std::size_t i = 0; i < r; ++i) {
          T acc = T(0);
          for (std::size_t j = 0; j < c; ++j) acc += g[i * c + j] * an->data[i * c + j];
          (*ds)[i] += acc;
        }
    });
  }
  return y;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  Tensor<T> y(a.shape(), std::move(out));
  if (tape.needs_record({&a})) {
    tape.record({&a}, y, [factor](const auto& g, auto& in) {
      auto* da = in[0];
      for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] * factor;
    });
  }
  return y;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
  Tensor<T> y(a.shape(), std::move(out));
  if (tape.needs_record({&a})) {
    tape.record({&a}, y, [an = a.node_ptr()](const auto& g, auto& in) {
      auto* da = in[0];
      for (std::size_t i = 0; i < g.size(); ++i)
        if (an->data[i] > T(0)) (*da)[i] += g[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = a.values().data() + i * c;
    T mx = *std::max_element(row, row + c);
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      z += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  Tensor<T> y(a.shape(), std::move(out));
  if (tape.needs_record({&a})) {
    tape.record({&a}, y, [yn = y.node_ptr(), r, c](const auto& g, auto& in) {
      auto* da = in[0];
      const auto& yv = yn->data;
      for (std::size_t i = 0; i < r; ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < c; ++j) dot += yv[i * c + j] * g[i * c + j];
        for (std::size_t j = 0; j < c; ++j) (*da)[i * c + j] += yv[i * c + j] * (g[i * c + j] - dot);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  T total = T(0);
  for (auto v : a.data()) total += v;
  auto y = Tensor<T>::scalar(total);
  if (tape.needs_record({&a})) {
    tape.record({&a}, y, [](const auto& g, auto& in) {
      auto* da = in[0];
      for (auto& v : *da) v += g[0];
    });
  }
  return y;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& a) {
  return scale(tape, sum(tape, a), T(1) / static_cast<T>(a.size()));
}

// Per-row sums, r x 1.
template <typename T>
Tensor<T> row_sum(Tape<T>& tape, const Tensor<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(r, T(0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += a.values()[i * c + j];
  auto y = Tensor<T>::matrix(r, 1, std::move(out));
  if (tape.needs_record({&a})) {
    tape.record({&a}, y, [r, c](const auto& g, auto& in) {
      auto* da = in[0];
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*da)[i * c + j] += g[i];
    });
  }
  return y;
}

// Stacks matrices with equal column counts along the row axis.
template <typename T>
Tensor<T> concat_rows(Tape<T>& tape, const std::vector<const Tensor<T>*>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts.front()->cols();
  std::size_t r = 0;
  std::vector<T> out;
  std::vector<std::size_t> offsets;
  for (const auto* p : parts) {
    detail::require(p->cols() == c, "concat_rows: column counts differ");
    offsets.push_back(out.size());
    out.insert(out.end(), p->values().begin(), p->values().end());
    r += p->rows();
  }
  auto y = Tensor<T>::matrix(r, c, std::move(out));
  bool any = false;
  for (const auto* p : parts) any = any || tape.needs_record({p});
  if (any) {
    tape.record(parts, y, [offsets](const auto& g, auto& in) {
      for (std::size_t k = 0; k < in.size(); ++k) {
        if (auto* dp = in[k])
          for (std::size_t i = 0; i < dp->size(); ++i) (*dp)[i] += g[offsets[k] + i];
      }
    });
  }
  return y;
}

// Joins a (r x ca) and b (r x cb) side by side.
template <typename T>
Tensor<T> concat_cols(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
  detail::require(b.rows() == r, "concat_cols: row counts differ");
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out[i * c + j] = a.values()[i * ca + j];
    for (std::size_t j = 0; j < cb; ++j) out[i * c + ca + j] = b.values()[i * cb + j];
  }
  auto y = Tensor<T>::matrix(r, c, std::move(out));
  if (tape.needs_record({&a, &b})) {
    tape.record({&a, &b}, y, [r, ca, cb, c](const auto& g, auto& in) {
      if (auto* da = in[0])
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < ca; ++j) (*da)[i * ca + j] += g[i * c + j];
      if (auto* db = in[1])
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < cb; ++j) (*db)[i * cb + j] += g[i * c + ca + j];
    });
  }
  return y;
}

template <typename T>
Tensor<T> slice_rows(Tape<T>& tape, const Tensor<T>& a, std::size_t begin, std::size_t end) {
  const std::size_t c = a.cols();
  detail::require(begin < end && end <= a.rows(), "slice_rows: range out of bounds");
  std::vector<T> out(a.values().begin() + begin * c, a.values().begin() + end * c);
  auto y = Tensor<T>::matrix(end - begin, c, std::move(out));
  if (tape.needs_record({&a})) {
    tape.record({&a}, y, [begin, c](const auto& g, auto& in) {
      auto* da = in[0];
      for (std::size_t i = 0; i < g.size(); ++i) (*da)[begin * c + i] += g[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> slice_cols(Tape<T>& tape, const Tensor<T>& a, std::size_t begin, std::size_t end) {
  const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
  detail::require(begin < end && end <= c, "slice_cols: range out of bounds");
  std::vector<T> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.values()[i * c + begin + j];
  auto y = Tensor<T>::matrix(r, w, std::move(out));
  if (tape.needs_record({&a})) {
    tape.record({&a}, y, [r, c, w, begin](const auto& g, auto& in) {
      auto* da = in[0];
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) (*da)[i * c + begin + j] += g[i * w + j];
    });
  }
  return y;
}

// Divides every row by its L2 norm. A zero row has no direction and throws.
template <typename T>
Tensor<T> l2_normalize_rows(Tape<T>& tape, const Tensor<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(a.size());
  std::vector<T> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    T sq = T(0);
    for (std::size_t j = 0; j < c; ++j) sq += a.values()[i * c + j] * a.values()[i * c + j];
    norms[i] = std::sqrt(sq);
    if (!(norms[i] > T(0))) throw std::domain_error("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.values()[i * c + j] / norms[i];
  }
  Tensor<T> y(a.shape(), std::move(out));
  if (tape.needs_record({&a})) {
    tape.record({&a}, y, [yn = y.node_ptr(), norms, r, c](const auto& g, auto& in) {
      auto* da = in[0];
      const auto& yv = yn->data;
      for (std::size_t i = 0; i < r; ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < c; ++j) dot += yv[i * c + j] * g[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          (*da)[i * c + j] += (g[i * c + j] - yv[i * c + j] * dot) / norms[i];
      }
    });
  }
  return y;
}

// Mean over rows of -log softmax(logits_i)[labels_i], via log-sum-exp.
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels) {
  const std::size_t b = logits.rows(), c = logits.cols();
  detail::require(labels.size() == b, "cross_entropy: " + std::to_string(labels.size()) +
                                          " labels for " + std::to_string(b) + " rows");
  if (c < 2) throw std::invalid_argument("cross_entropy: need at least two classes");
  std::vector<T> probs(b * c);
  T total = T(0);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(c) + ")");
    const T* row = logits.values().data() + i * c;
    for (std::size_t j = 0; j < c; ++j)
      if (!std::isfinite(row[j])) throw std::domain_error("cross_entropy: non-finite logit");
    T mx = *std::max_element(row, row + c);
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    total += lse - row[labels[i]];
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
  }
  auto y = Tensor<T>::scalar(total / static_cast<T>(b));
  if (tape.needs_record({&logits})) {
    std::vector<int> ys(labels.begin(), labels.end());
    tape.record({&logits}, y, [probs = std::move(probs), ys = std::move(ys), b, c](const auto& g, auto& in) {
      auto* dl = in[0];
      const T w = g[0] / static_cast<T>(b);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < c; ++j) (*dl)[i * c + j] += w * probs[i * c + j];
        (*dl)[i * c + static_cast<std::size_t>(ys[i])] -= w;
      }
    });
  }
  return y;
}

// Mean InfoNCE over rows: for query q_i with positive key k_i and the shared
// negatives n_1..n_K, loss_i = -log(exp(q_i.k_i/t) / (exp(q_i.k_i/t) + sum_j exp(q_i.n_j/t))).
template <typename T>
Tensor<T> info_nce(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k_pos, const Tensor<T>& negatives,
                   T temperature) {
  const std::size_t b = q.rows(), d = q.cols(), nk = negatives.rows();
  detail::require(k_pos.rows() == b && k_pos.cols() == d, "info_nce: query/key shapes differ");
  detail::require(negatives.cols() == d, "info_nce: negative dimension differs");
  if (!(temperature > T(0))) throw std::invalid_argument("info_nce: temperature must be positive");
  const std::size_t width = nk + 1;
  std::vector<T> probs(b * width);
  std::vector<T> logits(width);
  const auto& qv = q.values();
  const auto& kv = k_pos.values();
  const auto& nv = negatives.values();
  T total = T(0);
  for (std::size_t i = 0; i < b; ++i) {
    T s = T(0);
    for (std::size_t t = 0; t < d; ++t) s += qv[i * d + t] * kv[i * d + t];
    logits[0] = s / temperature;
    for (std::size_t j = 0; j < nk; ++j) {
      T sj = T(0);
      for (std::size_t t = 0; t < d; ++t) sj += qv[i * d + t] * nv[j * d + t];
      logits[j + 1] = sj / temperature;
    }
    T mx = *std::max_element(logits.begin(), logits.end());
    T z = T(0);
    for (auto l : logits) z += std::exp(l - mx);
    const T lse = mx + std::log(z);
    total += lse - logits[0];
    for (std::size_t j = 0; j < width; ++j) probs[i * width + j] = std::exp(logits[j] - lse);
  }
  auto y = Tensor<T>::scalar(total / static_cast<T>(b));
  if (tape.needs_record({&q, &k_pos, &negatives})) {
    tape.record({&q, &k_pos, &negatives}, y,
                [probs = std::move(probs), qn = q.node_ptr(), kn = k_pos.node_ptr(), nn = negatives.node_ptr(),
                 b, d, nk, width, temperature](const auto& g, auto& in) {
                  const T w = g[0] / (static_cast<T>(b) * temperature);
                  const auto& qv = qn->data;
                  const auto& kv = kn->data;
                  const auto& nv = nn->data;
                  for (std::size_t i = 0; i < b; ++i) {
                    const T d0 = probs[i * width] - T(1);
                    if (auto* dq = in[0]) {
                      for (std::size_t t = 0; t < d; ++t) {
                        T acc = d0 * kv[i * d + t];
                        for (std::size_t j = 0; j < nk; ++j) acc += probs[i * width + j + 1] * nv[j * d + t];
                        (*dq)[i * d + t] += w * acc;
                      }
                    }
                    if (auto* dk = in[1])
                      for (std::size_t t = 0; t < d; ++t) (*dk)[i * d + t] += w * d0 * qv[i * d + t];
                    if (auto* dn = in[2])
                      for (std::size_t j = 0; j < nk; ++j)
                        for (std::size_t t = 0; t < d; ++t)
                          (*dn)[j * d + t] += w * probs[i * width + j + 1] * qv[i * d + t];
                  }
                });
  }
  return y;
}

// x (B x in) times weight^T (weight is out x in) plus bias (out).
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require(x.cols() == weight.cols(), "linear: input width " + std::to_string(x.cols()) +
                                                 " does not match weight " + shape_string(weight.shape()));
  return add_row(tape, matmul(tape, x, transpose(tape, weight)), bias);
}

template <typename T>
struct AttentionWeights {
  Tensor<T> wq, wk, wv, wo;
};

template <typename T>
struct AttentionResult {
  Tensor<T> output;     // s x m
  Tensor<T> attention;  // s x s, row i holds the weights row i attends with
};

// Single-head scaled dot-product self-attention:
// softmax((X Wq)(X Wk)^T / sqrt(m)) (X Wv) Wo.
template <typename T>
AttentionResult<T> attention_block(Tape<T>& tape, const Tensor<T>& x, const AttentionWeights<T>& w) {
  const std::size_t m = x.cols();
  for (const auto* p : {&w.wq, &w.wk, &w.wv, &w.wo}) {
    detail::require(p->rows() == m && p->cols() == m,
                    "attention_block: weight " + shape_string(p->shape()) + " for width " + std::to_string(m));
  }
  auto q = matmul(tape, x, w.wq);
  auto k = matmul(tape, x, w.wk);
  auto v = matmul(tape, x, w.wv);
  auto scores = scale(tape, matmul(tape, q, transpose(tape, k)), T(1) / std::sqrt(static_cast<T>(m)));
  auto attn = softmax_rows(tape, scores);
  auto out = matmul(tape, matmul(tape, attn, v), w.wo);
  return {std::move(out), std::move(attn)};
}

}  // namespace fedpft::ad
