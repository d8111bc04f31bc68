#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "clusterattn/tensor.hpp"

namespace clusterattn {

struct KMeansOptions {
  Index max_iter = 25;
  // Lloyd stops once the mean center displacement drops below this.
  float tol = 1e-4f;
};

struct ClusterModel {
  Tensor centers;                  // [C, D]
  std::vector<Index> assignments;  // nearest center per token
  std::vector<Index> counts;       // members per center, all >= 1
  bool flag_full = false;          // multi-stage ran out of center budget
  Index stage_count = 0;           // multi-stage rounds executed
  float tau = 0.0f;                // threshold used by the producing call
  Index iterations = 0;            // Lloyd center updates, summed over stages

  // Within-cluster sum of squares after every assignment pass (kmeans and
  // warm start only).
  std::vector<double> wcss_history;
  // Nearest-center MSE over all tokens after each multi-stage round.
  std::vector<double> stage_mse;
  std::vector<std::string> warnings;

  Index num_clusters() const { return centers.rows(); }
};

// Nearest center per row of x (ties to the lower center index) and the
// exact squared distance to it.
struct Assignment {
  std::vector<Index> index;
  std::vector<double> sq_dist;
};

Assignment nearest_centers(const Tensor& x, const Tensor& centers);

// Exact squared distance between two rows, accumulated in double.
double squared_distance(const Eigen::Ref<const RowVector<float>>& a, const Eigen::Ref<const RowVector<float>>& b);

// k-means++ seeding followed by Lloyd iterations.
ClusterModel kmeans(const Tensor& x, Index k, std::uint64_t seed, const KMeansOptions& opts = {});

// Lloyd iterations from the given centers; the cluster count stays fixed.
ClusterModel warm_start_update(const Tensor& x, const Tensor& prev_centers, const KMeansOptions& opts = {});

inline constexpr Index kDefaultQueryClusters = 65;

struct QueryClustering {
  ClusterModel model;
  Tensor representatives;  // centroids of the normalized members, [G, D]
  std::vector<Index> degenerate_rows;
};

// Clusters queries by angle: k-means on L2-normalized rows. With
// `normalize == false` the raw rows are clustered instead (ablation only).
QueryClustering cluster_queries(const Tensor& q, Index num_clusters, std::uint64_t seed,
                                const KMeansOptions& opts = {}, bool normalize = true);

// Same, but warm-started from the previous step's centers.
QueryClustering update_query_clusters(const Tensor& q, const Tensor& prev_centers,
                                      const KMeansOptions& opts = {}, bool normalize = true);

// Cluster count for multi-stage round `stage` >= 1 given `remaining`
// unassigned tokens out of `total`.
using StageSchedule = std::function<Index(Index stage, Index remaining, Index total, Index m0)>;

// m_t = max(8, ceil(m0 * remaining / total)).
Index proportional_stage_schedule(Index stage, Index remaining, Index total, Index m0);

inline constexpr Index kDefaultInitialClusters = 100;
inline constexpr Index kDefaultMaxClusters = 1000;
inline constexpr float kDefaultTauFactor = 1.5f;

struct MultiStageOptions {
  Index m0 = kDefaultInitialClusters;
  Index n_max = kDefaultMaxClusters;
  KMeansOptions kmeans;
  StageSchedule schedule = proportional_stage_schedule;
};

// Threshold-bounded multi-stage clustering. Each round clusters the still
// unassigned tokens, retires those strictly within `tau` of their round
// center, and accumulates the round's centers. Stops when every token is
// retired, or flags the layer as hard to compress once the accumulated
// center count reaches n_max. Tokens finally go to their nearest accumulated
// center; centers left without members are dropped.
//
// `stage0`, when given, is used as round 0 instead of re-running k-means
// (it must cluster all of `k` with opts.m0 centers).
ClusterModel multi_stage_cluster_keys(const Tensor& k, float tau, std::uint64_t seed,
                                      const MultiStageOptions& opts = {},
                                      const ClusterModel* stage0 = nullptr);

// factor * mean_i ||k_i - c(k_i)||.
float compute_tau(const Tensor& k, const ClusterModel& stage0, float factor = kDefaultTauFactor);

// Mean squared token-to-assigned-center distance.
double reconstruction_mse(const Tensor& x, const ClusterModel& model);

// Mean intra-cluster distance and center separation combined per
// Davies-Bouldin. Zero for a single cluster.
double davies_bouldin(const Tensor& x, const ClusterModel& model);

// Mean distance from each token to its assigned center.
double mean_intra_cluster_distance(const Tensor& x, const ClusterModel& model);

struct CompactnessReport {
  std::vector<double> mse_per_head;
  double mse_layer = 0.0;
  double comp = 0.0;  // 1 / mse_layer, +inf when mse_layer == 0
  double db_index = 0.0;  // mean over heads
};

CompactnessReport compactness(const std::vector<Tensor>& k_heads, const std::vector<ClusterModel>& models);

}  // namespace clusterattn
