#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "clusterattn/tensor.hpp"

namespace clusterattn {

// Queries are processed in tiles of this many rows so the score matrix never
// exceeds kAttentionTile x Lk.
inline constexpr Index kAttentionTile = 256;

template <typename Scalar>
Scalar attention_scale(Index head_dim) {
  return Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));
}

namespace detail {

template <typename Scalar>
Matrix<Scalar> full_attention(const MatrixRef<Scalar>& q, const MatrixRef<Scalar>& k,
                              const MatrixRef<Scalar>& v) {
  if (q.cols() != k.cols()) {
    throw DimensionError("full_attention: q is " + shape_string(q) + " but k is " + shape_string(k));
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("full_attention: k is " + shape_string(k) + " but v is " + shape_string(v));
  }
  const Scalar scale = attention_scale<Scalar>(q.cols());
  Matrix<Scalar> out(q.rows(), v.cols());
  Matrix<Scalar> scores;
  for (Index r = 0; r < q.rows(); r += kAttentionTile) {
    const Index n = std::min(kAttentionTile, q.rows() - r);
    scores.resize(n, k.rows());
    scores.noalias() = q.middleRows(r, n) * k.transpose();
    row_softmax_inplace(scores, scale);
    out.middleRows(r, n).noalias() = scores * v;
  }
  return out;
}

}  // namespace detail

// softmax(q k^T / sqrt(D)) v, exact.
template <typename DerivedQ, typename DerivedK, typename DerivedV>
Matrix<typename DerivedQ::Scalar> full_attention(const Eigen::MatrixBase<DerivedQ>& q,
                                                 const Eigen::MatrixBase<DerivedK>& k,
                                                 const Eigen::MatrixBase<DerivedV>& v) {
  using Scalar = typename DerivedQ::Scalar;
  return detail::full_attention<Scalar>(q, k, v);
}

// Orders (score, index) pairs by descending score, lower index first on ties.
template <typename Scalar>
struct ScoreOrder {
  const Scalar* scores;
  bool operator()(Index a, Index b) const {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  }
};

// Indices of the `count` largest entries of `scores`, best first.
template <typename Scalar>
std::vector<Index> top_indices(const Scalar* scores, Index size, Index count) {
  std::vector<Index> idx(static_cast<std::size_t>(size));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::partial_sort(idx.begin(), idx.begin() + count, idx.end(), ScoreOrder<Scalar>{scores});
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

// The `count` keys with the largest q.k score, ties to the lower index.
template <typename DerivedQ, typename DerivedK>
std::vector<Index> exact_topk_keys(const Eigen::MatrixBase<DerivedQ>& q_row, const Eigen::MatrixBase<DerivedK>& k,
                                   Index count) {
  using Scalar = typename DerivedK::Scalar;
  if (q_row.size() != k.cols()) {
    throw DimensionError("exact_topk_keys: query has " + std::to_string(q_row.size()) +
                         " dims but keys are " + shape_string(k));
  }
  if (count < 1 || count > k.rows()) {
    throw ParameterError("exact_topk_keys: count " + std::to_string(count) + " outside [1, " +
                         std::to_string(k.rows()) + "]");
  }
  Vector<Scalar> scores(k.rows());
  for (Index j = 0; j < k.rows(); ++j) {
    Scalar acc = 0;
    for (Index d = 0; d < k.cols(); ++d) acc += k(j, d) * static_cast<Scalar>(q_row.coeff(d));
    scores[j] = acc;
  }
  return top_indices(scores.data(), scores.size(), count);
}

// Row-wise exact top-k for a whole query matrix. Scores come from a tiled
// GEMM, so near-ties may resolve differently than the single-row version.
template <typename DerivedQ, typename DerivedK>
std::vector<std::vector<Index>> exact_topk_keys_batch(const Eigen::MatrixBase<DerivedQ>& q,
                                                      const Eigen::MatrixBase<DerivedK>& k, Index count) {
  using Scalar = typename DerivedK::Scalar;
  if (q.cols() != k.cols()) {
    throw DimensionError("exact_topk_keys_batch: q is " + shape_string(q) + " but k is " + shape_string(k));
  }
  if (count < 1 || count > k.rows()) {
    throw ParameterError("exact_topk_keys_batch: count " + std::to_string(count) + " outside [1, " +
                         std::to_string(k.rows()) + "]");
  }
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(q.rows()));
  const MatrixRef<Scalar> qr(q), kr(k);
  Matrix<Scalar> scores;
  for (Index r = 0; r < q.rows(); r += kAttentionTile) {
    const Index n = std::min(kAttentionTile, q.rows() - r);
    scores.resize(n, k.rows());
    scores.noalias() = qr.middleRows(r, n) * kr.transpose();
    for (Index i = 0; i < n; ++i) {
      out[static_cast<std::size_t>(r + i)] = top_indices(scores.row(i).data(), k.rows(), count);
    }
  }
  return out;
}

struct ErrorMetrics {
  double rel_l2 = 0.0;      // ||ref - approx||_F / ||ref||_F
  double cosine_sim = 1.0;  // mean per-row cosine similarity
  double snr_db = std::numeric_limits<double>::infinity();  // +inf when identical
  double max_abs = 0.0;
};

ErrorMetrics compare_outputs(const Tensor& reference, const Tensor& approx);

}  // namespace clusterattn
