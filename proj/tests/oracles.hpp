#pragma once

// Brute-force reference implementations used only by the tests. Everything
// accumulates in double with plain loops and shares no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "clusterattn/tensor.hpp"

namespace oracle {

using clusterattn::Index;
using clusterattn::Tensor;
using Dense = clusterattn::Matrix<double>;

inline Tensor random_matrix(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Tensor m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<float>(n(rng));
  }
  return m;
}

inline Dense matmul(const Tensor& a, const Tensor& b) {
  Dense c(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (Index t = 0; t < a.cols(); ++t) acc += static_cast<double>(a(i, t)) * b(t, j);
      c(i, j) = acc;
    }
  }
  return c;
}

inline double dot(const Tensor& a, Index i, const Tensor& b, Index j) {
  double acc = 0.0;
  for (Index d = 0; d < a.cols(); ++d) acc += static_cast<double>(a(i, d)) * b(j, d);
  return acc;
}

inline double sq_dist(const Tensor& a, Index i, const Tensor& b, Index j) {
  double acc = 0.0;
  for (Index d = 0; d < a.cols(); ++d) {
    const double diff = static_cast<double>(a(i, d)) - b(j, d);
    acc += diff * diff;
  }
  return acc;
}

// softmax(q k^T / sqrt(D)) v, one query at a time.
inline Dense attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Dense out = Dense::Zero(q.rows(), v.cols());
  std::vector<double> s(static_cast<std::size_t>(k.rows()));
  for (Index i = 0; i < q.rows(); ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < k.rows(); ++j) {
      s[j] = scale * dot(q, i, k, j);
      peak = std::max(peak, s[j]);
    }
    double z = 0.0;
    for (Index j = 0; j < k.rows(); ++j) z += (s[j] = std::exp(s[j] - peak));
    for (Index j = 0; j < k.rows(); ++j) {
      for (Index d = 0; d < v.cols(); ++d) out(i, d) += s[j] / z * v(j, d);
    }
  }
  return out;
}

// Indices sorted by descending score, lower index first on ties.
inline std::vector<Index> argsort_desc(const std::vector<double>& scores) {
  std::vector<Index> idx(scores.size());
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return scores[a] > scores[b]; });
  return idx;
}

inline std::vector<double> row_scores(const Tensor& q, Index i, const Tensor& k) {
  std::vector<double> s(static_cast<std::size_t>(k.rows()));
  for (Index j = 0; j < k.rows(); ++j) s[j] = dot(q, i, k, j);
  return s;
}

// Quest bound straight from the member keys: sum_d max(q_d max_k k_d, q_d min_k k_d).
inline double quest_from_members(const Tensor& q, Index i, const Tensor& k, const std::vector<Index>& members) {
  double score = 0.0;
  for (Index d = 0; d < k.cols(); ++d) {
    double hi = -std::numeric_limits<double>::infinity(), lo = std::numeric_limits<double>::infinity();
    for (Index m : members) {
      hi = std::max(hi, static_cast<double>(k(m, d)));
      lo = std::min(lo, static_cast<double>(k(m, d)));
    }
    score += std::max(q(i, d) * hi, q(i, d) * lo);
  }
  return score;
}

inline std::vector<std::vector<Index>> members_of(const std::vector<Index>& assignments, Index clusters) {
  std::vector<std::vector<Index>> m(static_cast<std::size_t>(clusters));
  for (Index i = 0; i < static_cast<Index>(assignments.size()); ++i) m[assignments[i]].push_back(i);
  return m;
}

inline double mse(const Tensor& x, const Tensor& centers, const std::vector<Index>& assignments) {
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) total += sq_dist(x, i, centers, assignments[i]);
  return total / static_cast<double>(x.rows());
}

inline double mean_distance(const Tensor& x, const Tensor& centers, const std::vector<Index>& assignments) {
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) total += std::sqrt(sq_dist(x, i, centers, assignments[i]));
  return total / static_cast<double>(x.rows());
}

// Davies-Bouldin from its definition.
inline double davies_bouldin(const Tensor& x, const Tensor& centers, const std::vector<Index>& assignments) {
  const Index k = centers.rows();
  if (k < 2) return 0.0;
  std::vector<double> spread(static_cast<std::size_t>(k), 0.0);
  std::vector<double> count(static_cast<std::size_t>(k), 0.0);
  for (Index i = 0; i < x.rows(); ++i) {
    spread[assignments[i]] += std::sqrt(sq_dist(x, i, centers, assignments[i]));
    count[assignments[i]] += 1.0;
  }
  for (Index c = 0; c < k; ++c) spread[c] /= count[c];
  double total = 0.0;
  for (Index i = 0; i < k; ++i) {
    double worst = 0.0;
    for (Index j = 0; j < k; ++j) {
      if (i != j) worst = std::max(worst, (spread[i] + spread[j]) / std::sqrt(sq_dist(centers, i, centers, j)));
    }
    total += worst;
  }
  return total / static_cast<double>(k);
}

// Within-cluster sum of squares of the best 2-partition, by enumeration.
inline std::vector<Index> best_two_partition(const Tensor& x) {
  const Index n = x.rows();
  double best = std::numeric_limits<double>::infinity();
  std::vector<Index> best_labels;
  for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
    std::vector<Index> labels(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) labels[i] = (mask >> i) & 1u;
    Tensor centers = Tensor::Zero(2, x.cols());
    double cnt[2] = {0, 0};
    for (Index i = 0; i < n; ++i) {
      centers.row(labels[i]) += x.row(i);
      cnt[labels[i]] += 1;
    }
    centers.row(0) /= static_cast<float>(cnt[0]);
    centers.row(1) /= static_cast<float>(cnt[1]);
    const double w = mse(x, centers, labels);
    if (w < best) {
      best = w;
      best_labels = labels;
    }
  }
  return best_labels;
}

// Whether two labelings describe the same partition.
inline bool same_partition(const std::vector<Index>& a, const std::vector<Index>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) {
      if ((a[i] == a[j]) != (b[i] == b[j])) return false;
    }
  }
  return true;
}

}  // namespace oracle
