#pragma once

// Cluster criticality scoring. The Quest score of a cluster is the tightest
// per-dimension upper bound on q.k over its members:
//
//   quest(q, c) = sum_d max(q_d * max_c[d], q_d * min_c[d])
//
// where max_c / min_c are the elementwise extremes of the member keys. For
// q_d >= 0 the max term wins and for q_d < 0 the min term does, so the whole
// score matrix for a batch of queries is two GEMMs:
//
//   S = max(Q, 0) * max_vec^T + min(Q, 0) * min_vec^T

#include <algorithm>
#include <span>
#include <vector>

#include "clusterattn/attention.hpp"
#include "clusterattn/tensor.hpp"

namespace clusterattn {

template <typename Scalar>
struct ClusterEnvelope {
  Matrix<Scalar> max_vec;  // [C, D]
  Matrix<Scalar> min_vec;  // [C, D]

  Index num_clusters() const { return max_vec.rows(); }
};

template <typename Derived>
ClusterEnvelope<typename Derived::Scalar> build_envelopes(const Eigen::MatrixBase<Derived>& k,
                                                          std::span<const Index> assignments, Index num_clusters) {
  using Scalar = typename Derived::Scalar;
  if (static_cast<Index>(assignments.size()) != k.rows()) {
    throw DimensionError("build_envelopes: " + std::to_string(assignments.size()) + " assignments for keys " +
                         shape_string(k));
  }
  ClusterEnvelope<Scalar> env;
  env.max_vec.setConstant(num_clusters, k.cols(), -std::numeric_limits<Scalar>::infinity());
  env.min_vec.setConstant(num_clusters, k.cols(), std::numeric_limits<Scalar>::infinity());
  for (Index i = 0; i < k.rows(); ++i) {
    const Index c = assignments[static_cast<std::size_t>(i)];
    if (c < 0 || c >= num_clusters) {
      throw ParameterError("build_envelopes: assignment " + std::to_string(c) + " outside [0, " +
                           std::to_string(num_clusters) + ")");
    }
    env.max_vec.row(c) = env.max_vec.row(c).cwiseMax(k.row(i));
    env.min_vec.row(c) = env.min_vec.row(c).cwiseMin(k.row(i));
  }
  return env;
}

// Scalar evaluation of one (query, cluster) score, term by term.
template <typename DerivedQ, typename Scalar = typename DerivedQ::Scalar>
Scalar quest_scalar(const Eigen::MatrixBase<DerivedQ>& q_row, const ClusterEnvelope<Scalar>& env, Index c) {
  if (c < 0 || c >= env.num_clusters()) {
    throw ParameterError("quest_scalar: cluster " + std::to_string(c) + " outside [0, " +
                         std::to_string(env.num_clusters()) + ")");
  }
  if (q_row.size() != env.max_vec.cols()) {
    throw DimensionError("quest_scalar: query has " + std::to_string(q_row.size()) + " dims, envelope has " +
                         std::to_string(env.max_vec.cols()));
  }
  Scalar score = 0;
  for (Index d = 0; d < q_row.size(); ++d) {
    const Scalar qd = q_row.coeff(d);
    score += std::max(qd * env.max_vec(c, d), qd * env.min_vec(c, d));
  }
  return score;
}

// Full [G, C] score matrix by the scalar per-term loop.
template <typename DerivedQ, typename Scalar = typename DerivedQ::Scalar>
Matrix<Scalar> quest_scores_scalar(const Eigen::MatrixBase<DerivedQ>& q_reps, const ClusterEnvelope<Scalar>& env) {
  if (q_reps.cols() != env.max_vec.cols()) {
    throw DimensionError("quest_scores_scalar: queries are " + shape_string(q_reps) + ", envelope is " +
                         shape_string(env.max_vec));
  }
  Matrix<Scalar> s(q_reps.rows(), env.num_clusters());
  for (Index g = 0; g < q_reps.rows(); ++g) {
    for (Index c = 0; c < env.num_clusters(); ++c) s(g, c) = quest_scalar(q_reps.row(g), env, c);
  }
  return s;
}

// Quest scores as two clamped GEMMs.
template <typename DerivedQ, typename Scalar = typename DerivedQ::Scalar>
Matrix<Scalar> tensor_quest(const Eigen::MatrixBase<DerivedQ>& q_reps, const ClusterEnvelope<Scalar>& env) {
  if (q_reps.cols() != env.max_vec.cols()) {
    throw DimensionError("tensor_quest: queries are " + shape_string(q_reps) + ", envelope is " +
                         shape_string(env.max_vec));
  }
  const Matrix<Scalar> q_pos = q_reps.cwiseMax(Scalar(0));
  const Matrix<Scalar> q_neg = q_reps.cwiseMin(Scalar(0));
  Matrix<Scalar> s(q_reps.rows(), env.num_clusters());
  s.noalias() = q_pos * env.max_vec.transpose();
  s.noalias() += q_neg * env.min_vec.transpose();
  return s;
}

// Literal reading of the clamped form with a single key matrix: both terms
// use the cluster centers, positive parts against positive parts. Kept for
// ablation only; it is not an upper bound.
template <typename DerivedQ, typename DerivedC>
Matrix<typename DerivedQ::Scalar> tensor_quest_clamped_centers(const Eigen::MatrixBase<DerivedQ>& q_reps,
                                                               const Eigen::MatrixBase<DerivedC>& centers) {
  using Scalar = typename DerivedQ::Scalar;
  if (q_reps.cols() != centers.cols()) {
    throw DimensionError("tensor_quest_clamped_centers: queries are " + shape_string(q_reps) + ", centers are " +
                         shape_string(centers));
  }
  Matrix<Scalar> s(q_reps.rows(), centers.rows());
  s.noalias() = q_reps.cwiseMax(Scalar(0)) * centers.cwiseMax(Scalar(0)).transpose();
  s.noalias() += q_reps.cwiseMin(Scalar(0)) * centers.cwiseMin(Scalar(0)).transpose();
  return s;
}

// Mean-center baseline: S = Q * centers^T.
template <typename DerivedQ, typename DerivedC>
Matrix<typename DerivedQ::Scalar> mean_center_scores(const Eigen::MatrixBase<DerivedQ>& q_reps,
                                                     const Eigen::MatrixBase<DerivedC>& centers) {
  return matmul(q_reps, centers.transpose());
}

template <typename Scalar>
struct SelectionResult {
  Matrix<Scalar> scores;                   // [G, C]
  std::vector<std::vector<Index>> selected;  // per query cluster, best first
  double density = 0.0;                    // mean selected-key fraction over query clusters
};

// Top-`topk` clusters per row of `scores` (ties to the lower index).
// `counts` holds the member count of each key cluster.
template <typename Scalar>
SelectionResult<Scalar> select_topk_clusters(Matrix<Scalar> scores, Index topk, std::span<const Index> counts) {
  const Index c = scores.cols();
  if (topk < 1 || topk > c) {
    throw ParameterError("select_topk_clusters: topk " + std::to_string(topk) + " outside [1, " +
                         std::to_string(c) + "]");
  }
  if (static_cast<Index>(counts.size()) != c) {
    throw DimensionError("select_topk_clusters: " + std::to_string(counts.size()) + " cluster sizes for " +
                         std::to_string(c) + " clusters");
  }
  Index total = 0;
  for (Index n : counts) total += n;

  SelectionResult<Scalar> out;
  out.selected.reserve(static_cast<std::size_t>(scores.rows()));
  double density_sum = 0.0;
  for (Index g = 0; g < scores.rows(); ++g) {
    std::vector<Index> pick = top_indices(scores.row(g).data(), c, topk);
    Index covered = 0;
    for (Index j : pick) covered += counts[static_cast<std::size_t>(j)];
    density_sum += total > 0 ? static_cast<double>(covered) / static_cast<double>(total) : 0.0;
    out.selected.push_back(std::move(pick));
  }
  out.density = scores.rows() > 0 ? density_sum / static_cast<double>(scores.rows()) : 0.0;
  out.scores = std::move(scores);
  return out;
}

}  // namespace clusterattn
