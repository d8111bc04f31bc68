#include "clusterattn/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace clusterattn {
namespace {

constexpr Index kAssignTile = 1024;
constexpr std::uint64_t kStageSeedStride = 0x9E3779B97F4A7C15ULL;

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Index uniform_index(std::mt19937_64& rng, Index n) {
  return std::min(static_cast<Index>(uniform01(rng) * static_cast<double>(n)), n - 1);
}

void check_cluster_count(const char* who, Index k, Index n) {
  if (n == 0) throw ParameterError(std::string(who) + ": empty input");
  if (k < 1) throw ParameterError(std::string(who) + ": cluster count must be >= 1, got " + std::to_string(k));
  if (k > n) {
    throw ParameterError(std::string(who) + ": cluster count " + std::to_string(k) + " exceeds point count " +
                         std::to_string(n));
  }
}

std::vector<Index> count_members(const std::vector<Index>& assignments, Index num_clusters) {
  std::vector<Index> counts(static_cast<std::size_t>(num_clusters), 0);
  for (Index a : assignments) ++counts[static_cast<std::size_t>(a)];
  return counts;
}

Tensor kmeans_plus_plus(const Tensor& x, Index k, std::mt19937_64& rng) {
  const Index n = x.rows();
  Tensor centers(k, x.cols());
  Index pick = uniform_index(rng, n);
  centers.row(0) = x.row(pick);
  // Sampling weights only need float precision; direct differences avoid cancellation.
  Vector<float> d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();

  for (Index c = 1; c < k; ++c) {
    double total = 0.0;
    for (Index i = 0; i < n; ++i) total += d2[i];
    if (total <= 0.0) {
      pick = uniform_index(rng, n);
    } else {
      const double target = uniform01(rng) * total;
      double running = 0.0;
      pick = -1;
      for (Index i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        running += d2[i];
        if (running > target) break;
      }
    }
    centers.row(c) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  return centers;
}

// Nearest-center assignment that guarantees every cluster keeps at least one
// member: an empty cluster is re-centered on the point farthest from its
// current center, then assignment is redone.
Assignment assign_and_repair(const Tensor& x, Tensor& centers) {
  const Index k = centers.rows();
  for (Index attempt = 0;; ++attempt) {
    Assignment asg = nearest_centers(x, centers);
    std::vector<Index> counts = count_members(asg.index, k);
    if (std::find(counts.begin(), counts.end(), 0) == counts.end()) return asg;

    for (Index j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      Index far = -1;
      for (Index i = 0; i < x.rows(); ++i) {
        if (counts[asg.index[i]] > 1 && (far < 0 || asg.sq_dist[i] > asg.sq_dist[far])) far = i;
      }
      if (far < 0) break;
      centers.row(j) = x.row(far);
      --counts[asg.index[far]];
      asg.index[far] = j;
      asg.sq_dist[far] = 0.0;
      counts[j] = 1;
    }
    // Duplicate points can keep bouncing a repaired center back to empty;
    // after k rounds accept the in-place repair.
    if (attempt >= k) return asg;
  }
}

Tensor member_means(const Tensor& x, const std::vector<Index>& assignments, Index k) {
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
  std::vector<Index> counts(static_cast<std::size_t>(k), 0);
  for (Index i = 0; i < x.rows(); ++i) {
    sums.row(assignments[i]) += x.row(i).cast<double>();
    ++counts[assignments[i]];
  }
  for (Index j = 0; j < k; ++j) {
    if (counts[j] > 0) sums.row(j) /= static_cast<double>(counts[j]);
  }
  return sums.cast<float>();
}

double sum_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

ClusterModel lloyd(const Tensor& x, Tensor centers, const KMeansOptions& opts) {
  const Index k = centers.rows();
  ClusterModel model;
  Assignment asg = assign_and_repair(x, centers);
  model.wcss_history.push_back(sum_of(asg.sq_dist));

  for (Index it = 0; it < opts.max_iter; ++it) {
    Tensor updated = member_means(x, asg.index, k);
    double movement = 0.0;
    for (Index j = 0; j < k; ++j) movement += std::sqrt(squared_distance(updated.row(j), centers.row(j)));
    movement /= static_cast<double>(k);
    centers = std::move(updated);
    ++model.iterations;
    asg = assign_and_repair(x, centers);
    model.wcss_history.push_back(sum_of(asg.sq_dist));
    if (movement < opts.tol) break;
  }

  model.centers = std::move(centers);
  model.assignments = std::move(asg.index);
  model.counts = count_members(model.assignments, k);
  return model;
}

Tensor gather_rows(const Tensor& x, const std::vector<Index>& rows) {
  Tensor out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = x.row(rows[i]);
  return out;
}

QueryClustering finish_query_clustering(const Tensor& points, ClusterModel model,
                                        std::vector<Index> degenerate) {
  QueryClustering out;
  out.representatives = member_means(points, model.assignments, model.num_clusters());
  out.model = std::move(model);
  out.degenerate_rows = std::move(degenerate);
  return out;
}

}  // namespace

double squared_distance(const Eigen::Ref<const RowVector<float>>& a, const Eigen::Ref<const RowVector<float>>& b) {
  return (a.cast<double>() - b.cast<double>()).squaredNorm();
}

Assignment nearest_centers(const Tensor& x, const Tensor& centers) {
  if (x.cols() != centers.cols()) {
    throw DimensionError("nearest_centers: points are " + shape_string(x) + " but centers are " +
                         shape_string(centers));
  }
  const Index n = x.rows();
  const Index k = centers.rows();
  Assignment asg;
  asg.index.resize(static_cast<std::size_t>(n));
  asg.sq_dist.resize(static_cast<std::size_t>(n));
  // Distances are translation invariant; working relative to the center
  // mean keeps the expanded form from cancelling on data far from the origin.
  const Eigen::RowVector<float, Eigen::Dynamic> origin = centers.colwise().mean();
  const Tensor shifted_centers = centers.rowwise() - origin;
  const Vector<float> center_norms = shifted_centers.rowwise().squaredNorm();
  const float max_center_norm = k > 0 ? center_norms.maxCoeff() : 0.0f;
  Tensor tile, dots;
  for (Index r = 0; r < n; r += kAssignTile) {
    const Index m = std::min(kAssignTile, n - r);
    tile = x.middleRows(r, m).rowwise() - origin;
    dots.resize(m, k);
    dots.noalias() = tile * shifted_centers.transpose();
    // ||x||^2 is common to every center and dropped from the comparison.
    dots = (dots * -2.0f).rowwise() + center_norms.transpose();
    for (Index i = 0; i < m; ++i) {
      Index best = 0;
      const float best_score = dots.row(i).minCoeff(&best);
      double best_d2 = squared_distance(x.row(r + i), centers.row(best));
      // Scores within float rounding of the best are settled exactly.
      const float slack = 1e-5f * (tile.row(i).squaredNorm() + max_center_norm);
      if ((dots.row(i).array() <= best_score + slack).count() > 1) {
        for (Index j = 0; j < k; ++j) {
          if (j == best || dots(i, j) > best_score + slack) continue;
          const double d2 = squared_distance(x.row(r + i), centers.row(j));
          if (d2 < best_d2 || (d2 == best_d2 && j < best)) {
            best_d2 = d2;
            best = j;
          }
        }
      }
      asg.index[r + i] = best;
      asg.sq_dist[r + i] = best_d2;
    }
  }
  return asg;
}

ClusterModel kmeans(const Tensor& x, Index k, std::uint64_t seed, const KMeansOptions& opts) {
  check_cluster_count("kmeans", k, x.rows());
  std::mt19937_64 rng(seed);
  return lloyd(x, kmeans_plus_plus(x, k, rng), opts);
}

ClusterModel warm_start_update(const Tensor& x, const Tensor& prev_centers, const KMeansOptions& opts) {
  check_cluster_count("warm_start_update", prev_centers.rows(), x.rows());
  if (x.cols() != prev_centers.cols()) {
    throw DimensionError("warm_start_update: points are " + shape_string(x) + " but centers are " +
                         shape_string(prev_centers));
  }
  return lloyd(x, prev_centers, opts);
}

QueryClustering cluster_queries(const Tensor& q, Index num_clusters, std::uint64_t seed,
                                const KMeansOptions& opts, bool normalize) {
  check_cluster_count("cluster_queries", num_clusters, q.rows());
  if (!normalize) return finish_query_clustering(q, kmeans(q, num_clusters, seed, opts), {});
  NormalizedRows<float> unit = l2_normalize_rows(q);
  ClusterModel model = kmeans(unit.rows, num_clusters, seed, opts);
  return finish_query_clustering(unit.rows, std::move(model), std::move(unit.degenerate));
}

QueryClustering update_query_clusters(const Tensor& q, const Tensor& prev_centers, const KMeansOptions& opts,
                                      bool normalize) {
  if (!normalize) return finish_query_clustering(q, warm_start_update(q, prev_centers, opts), {});
  NormalizedRows<float> unit = l2_normalize_rows(q);
  ClusterModel model = warm_start_update(unit.rows, prev_centers, opts);
  return finish_query_clustering(unit.rows, std::move(model), std::move(unit.degenerate));
}

Index proportional_stage_schedule(Index /*stage*/, Index remaining, Index total, Index m0) {
  const Index proportional = (m0 * remaining + total - 1) / total;
  return std::max<Index>(8, proportional);
}

ClusterModel multi_stage_cluster_keys(const Tensor& k, float tau, std::uint64_t seed,
                                      const MultiStageOptions& opts, const ClusterModel* stage0) {
  const Index n = k.rows();
  if (n == 0) throw ParameterError("multi_stage_cluster_keys: empty input");
  if (opts.m0 < 1) throw ParameterError("multi_stage_cluster_keys: m0 must be >= 1");
  if (opts.n_max < opts.m0) {
    throw ParameterError("multi_stage_cluster_keys: n_max " + std::to_string(opts.n_max) + " is below m0 " +
                         std::to_string(opts.m0));
  }
  if (stage0 && static_cast<Index>(stage0->assignments.size()) != n) {
    throw DimensionError("multi_stage_cluster_keys: stage-0 model covers " +
                         std::to_string(stage0->assignments.size()) + " tokens, keys have " + std::to_string(n));
  }

  if (!(tau > 0.0f)) {
    // No token can ever be retired; treat the layer as incompressible.
    ClusterModel model = stage0 ? *stage0 : kmeans(k, std::min(opts.m0, n), seed, opts.kmeans);
    model.flag_full = true;
    model.tau = tau;
    model.stage_count = 0;
    model.warnings.push_back("tau <= 0: no token can satisfy the distance threshold; layer flagged full");
    return model;
  }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<Index> unassigned(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) unassigned[i] = i;
  std::vector<double> best_d2(static_cast<std::size_t>(n), inf);
  std::vector<Index> best(static_cast<std::size_t>(n), -1);
  std::vector<Tensor> rounds;
  Index total_centers = 0;

  ClusterModel out;
  out.tau = tau;
  Index stage = 0;
  while (!unassigned.empty()) {
    if (total_centers >= opts.n_max) {
      out.flag_full = true;
      break;
    }
    const Index remaining = static_cast<Index>(unassigned.size());
    ClusterModel round;
    if (stage == 0 && stage0) {
      round = *stage0;
    } else {
      Index m = stage == 0 ? opts.m0 : opts.schedule(stage, remaining, n, opts.m0);
      m = std::clamp<Index>(m, 1, remaining);
      round = kmeans(gather_rows(k, unassigned), m, seed + static_cast<std::uint64_t>(stage) * kStageSeedStride,
                     opts.kmeans);
    }
    out.iterations += round.iterations;
    const Index offset = total_centers;

    // Fold the new centers into every token's running nearest center. Ties
    // keep the earlier (lower-index) center.
    const Assignment fresh = nearest_centers(k, round.centers);
    for (Index i = 0; i < n; ++i) {
      if (fresh.sq_dist[i] < best_d2[i]) {
        best_d2[i] = fresh.sq_dist[i];
        best[i] = offset + fresh.index[i];
      }
    }

    std::vector<Index> still_out;
    for (std::size_t pos = 0; pos < unassigned.size(); ++pos) {
      const Index i = unassigned[pos];
      const Index c = round.assignments[pos];
      const double d2 = squared_distance(k.row(i), round.centers.row(c));
      if (d2 < best_d2[i]) {
        best_d2[i] = d2;
        best[i] = offset + c;
      }
      if (std::sqrt(d2) < static_cast<double>(tau)) continue;
      still_out.push_back(i);
    }
    unassigned = std::move(still_out);
    total_centers += round.centers.rows();
    rounds.push_back(std::move(round.centers));
    ++stage;
    out.stage_mse.push_back(sum_of(best_d2) / static_cast<double>(n));
  }
  out.stage_count = stage;

  // Concatenate round centers, keeping only those that ended up with members.
  std::vector<Index> counts = count_members(best, total_centers);
  std::vector<Index> remap(static_cast<std::size_t>(total_centers), -1);
  Index kept = 0;
  for (Index c = 0; c < total_centers; ++c) {
    if (counts[c] > 0) remap[c] = kept++;
  }
  out.centers.resize(kept, k.cols());
  Index global = 0;
  for (const Tensor& block : rounds) {
    for (Index r = 0; r < block.rows(); ++r, ++global) {
      if (remap[global] >= 0) out.centers.row(remap[global]) = block.row(r);
    }
  }
  out.assignments.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out.assignments[i] = remap[best[i]];
  out.counts = count_members(out.assignments, kept);
  return out;
}

float compute_tau(const Tensor& k, const ClusterModel& stage0, float factor) {
  if (static_cast<Index>(stage0.assignments.size()) != k.rows()) {
    throw DimensionError("compute_tau: model covers " + std::to_string(stage0.assignments.size()) +
                         " tokens, keys have " + std::to_string(k.rows()));
  }
  return static_cast<float>(static_cast<double>(factor) * mean_intra_cluster_distance(k, stage0));
}

double reconstruction_mse(const Tensor& x, const ClusterModel& model) {
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) total += squared_distance(x.row(i), model.centers.row(model.assignments[i]));
  return x.rows() ? total / static_cast<double>(x.rows()) : 0.0;
}

double mean_intra_cluster_distance(const Tensor& x, const ClusterModel& model) {
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    total += std::sqrt(squared_distance(x.row(i), model.centers.row(model.assignments[i])));
  }
  return x.rows() ? total / static_cast<double>(x.rows()) : 0.0;
}

double davies_bouldin(const Tensor& x, const ClusterModel& model) {
  const Index k = model.num_clusters();
  if (k < 2) return 0.0;
  std::vector<double> spread(static_cast<std::size_t>(k), 0.0);
  std::vector<Index> counts(static_cast<std::size_t>(k), 0);
  for (Index i = 0; i < x.rows(); ++i) {
    const Index c = model.assignments[i];
    spread[c] += std::sqrt(squared_distance(x.row(i), model.centers.row(c)));
    ++counts[c];
  }
  for (Index c = 0; c < k; ++c) {
    if (counts[c] > 0) spread[c] /= static_cast<double>(counts[c]);
  }
  double total = 0.0;
  for (Index i = 0; i < k; ++i) {
    double worst = 0.0;
    for (Index j = 0; j < k; ++j) {
      if (j == i) continue;
      const double sep = std::sqrt(squared_distance(model.centers.row(i), model.centers.row(j)));
      const double ratio = sep > 0.0 ? (spread[i] + spread[j]) / sep : std::numeric_limits<double>::infinity();
      worst = std::max(worst, ratio);
    }
    total += worst;
  }
  return total / static_cast<double>(k);
}

CompactnessReport compactness(const std::vector<Tensor>& k_heads, const std::vector<ClusterModel>& models) {
  if (k_heads.size() != models.size()) {
    throw DimensionError("compactness: " + std::to_string(k_heads.size()) + " heads but " +
                         std::to_string(models.size()) + " models");
  }
  CompactnessReport report;
  double db_total = 0.0;
  for (std::size_t h = 0; h < k_heads.size(); ++h) {
    report.mse_per_head.push_back(reconstruction_mse(k_heads[h], models[h]));
    db_total += davies_bouldin(k_heads[h], models[h]);
  }
  if (!k_heads.empty()) {
    report.mse_layer = sum_of(report.mse_per_head) / static_cast<double>(k_heads.size());
    report.db_index = db_total / static_cast<double>(k_heads.size());
  }
  report.comp = report.mse_layer > 0.0 ? 1.0 / report.mse_layer : std::numeric_limits<double>::infinity();
  return report;
}

}  // namespace clusterattn
