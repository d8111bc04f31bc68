#pragma once

// End-to-end cluster-sparse attention. Per (layer, head):
//
//   step 0   cluster normalized queries; cluster keys with the multi-stage
//            threshold scheme; layers that exhaust the center budget fall
//            back to full attention for the rest of the run.
//   step >0  cluster counts and modes are frozen; both clusterings are
//            warm-started from the previous step's centers.
//
// Sparse heads score key clusters against query-cluster representatives,
// keep the top clusters per query cluster, and run exact softmax attention
// of each query over the gathered keys only.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clusterattn/attention.hpp"
#include "clusterattn/clustering.hpp"
#include "clusterattn/quest.hpp"

namespace clusterattn {

enum class AttentionMode { Full, Sparse };

enum class Scorer {
  Quest,         // envelope upper bound, two GEMMs
  MeanCenter,    // q . center
  QuestClamped,  // clamped centers, ablation only
};

enum class ClusterCounts {
  Adaptive,  // multi-stage threshold clustering decides C per head
  Uniform,   // plain k-means with a fixed C for every head
};

std::string to_string(AttentionMode mode);
std::string to_string(Scorer scorer);
std::string to_string(ClusterCounts counts);

inline constexpr Index kDefaultTopK = 64;

struct PipelineParams {
  Index q_clusters = kDefaultQueryClusters;
  Index topk = kDefaultTopK;
  // When > 0, topk is ceil(topk_fraction * C) per head instead of `topk`.
  double topk_fraction = 0.0;
  float tau_factor = kDefaultTauFactor;
  Index m0 = kDefaultInitialClusters;
  Index n_max = kDefaultMaxClusters;
  KMeansOptions kmeans;
  Scorer scorer = Scorer::Quest;
  ClusterCounts cluster_counts = ClusterCounts::Adaptive;
  Index uniform_key_clusters = 0;  // C for ClusterCounts::Uniform
  bool normalize_queries = true;
  // Keep the step-0 threshold for later steps (only relevant to reporting;
  // warm start does not re-run the threshold scheme).
  bool freeze_tau = true;
  Index threads = 1;
};

// Frozen per-layer decision.
struct LayerPolicy {
  AttentionMode mode = AttentionMode::Sparse;
  std::vector<Index> key_cluster_count;  // per head
  std::vector<float> tau;                // per head
  std::vector<bool> flag_full;           // per head, from step-0 clustering
  bool forced_full = false;              // set by the full-attention quota
  Index topk = kDefaultTopK;
  Index q_clusters = kDefaultQueryClusters;
  // Step-0 reconstruction MSE against m0 uniform centers, used to rank layers.
  double rank_mse = 0.0;
};

struct HeadState {
  Tensor key_centers;
  Tensor query_centers;
};

struct StepState {
  std::vector<HeadState> heads;
  Index step = 0;
};

struct HeadInput {
  Tensor q, k, v;  // [L, D] each
};

// Clusterings for one head at one step.
struct HeadClustering {
  QueryClustering queries;
  ClusterModel keys;
  std::optional<ClusterModel> stage0;  // step 0 only
  float tau = 0.0f;
};

struct FlopCounts {
  double full = 0.0;
  double sparse = 0.0;
  double overhead = 0.0;

  double est_speedup() const { return full / (sparse + overhead); }
};

struct FlopInputs {
  Index seq_len = 0;
  Index head_dim = 0;
  Index key_clusters = 0;
  Index query_clusters = 0;
  double density = 1.0;
  Index key_iterations = 0;    // Lloyd iterations of the key clustering
  Index query_iterations = 0;  // Lloyd iterations of the query clustering
  AttentionMode mode = AttentionMode::Sparse;
};

// full     = 4 L^2 D
// sparse   = 4 L (density L) D, or `full` in Full mode
// overhead = 2 L D (C key_iters + G query_iters)   clustering
//          + L D                                   envelope build (Sparse)
//          + 4 G C D                               scoring (Sparse)
FlopCounts count_flops(const FlopInputs& in);

struct HeadStats {
  AttentionMode mode = AttentionMode::Sparse;
  Index key_clusters = 0;
  Index query_clusters = 0;
  Index topk = 0;
  double density = 1.0;
  Index key_iterations = 0;
  Index query_iterations = 0;
  FlopCounts flops;
};

struct HeadOutput {
  Tensor output;
  HeadStats stats;
  // Sparse mode only: which key clusters each query cluster attended.
  std::vector<Index> query_assignments;
  std::vector<Index> key_assignments;
  std::vector<std::vector<Index>> selected;
  std::vector<Index> key_counts;
};

struct RunStats {
  double density = 1.0;  // mean over heads
  FlopCounts flops;      // summed over heads
  CompactnessReport compactness;
  std::vector<HeadStats> heads;
};

struct LayerResult {
  std::vector<HeadOutput> heads;
  RunStats stats;
};

// Step-0 clustering of one head (query clustering, stage-0 k-means, tau,
// multi-stage keys or uniform k-means).
HeadClustering plan_head(const HeadInput& in, const PipelineParams& params, std::uint64_t seed);

// Warm-started clustering for steps >= 1.
HeadClustering update_head(const HeadInput& in, const PipelineParams& params, const HeadState& state);

// Attention for one head given its clustering. Full mode ignores the
// clustering and returns full_attention bit-for-bit.
HeadOutput attend_head(const HeadInput& in, const HeadClustering& clustering, const PipelineParams& params,
                       AttentionMode mode);

// Step-0 policy for a layer from its head clusterings.
LayerPolicy make_policy(const std::vector<HeadInput>& heads, const std::vector<HeadClustering>& plans,
                        const PipelineParams& params);

// One layer at one step. An empty `state` means step 0: the layer is
// clustered, `policy` is filled in (unless `preset_plans` carries the step-0
// clusterings already) and the state is seeded. Later steps reuse `policy`
// and warm-start from `state`.
LayerResult cluster_sparse_attention(const std::vector<HeadInput>& heads, const PipelineParams& params,
                                     LayerPolicy& policy, StepState& state, std::uint64_t seed,
                                     std::vector<HeadClustering>* preset_plans = nullptr);

// All layers over all steps. inputs[step][layer] holds that layer's heads.
struct DenoiseResult {
  std::vector<LayerPolicy> policies;
  std::vector<std::vector<LayerResult>> steps;  // [step][layer]
};

DenoiseResult run_denoise_steps(const std::vector<std::vector<std::vector<HeadInput>>>& inputs,
                                const PipelineParams& params, double full_layer_quota, std::uint64_t seed);

// Number of layers the quota forces to full attention.
Index quota_layer_count(Index num_layers, double quota);

// Per-layer and per-head seeds derived from a run seed; stable across steps.
// cluster_sparse_attention takes a layer seed.
std::uint64_t layer_seed(std::uint64_t seed, Index layer);
std::uint64_t head_seed(std::uint64_t layer_seed, Index head);

}  // namespace clusterattn
