#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clusterattn/sparse_attention.hpp"
#include "json.hpp"

namespace clusterattn::harness {

enum class LayerKind { Compact, Dispersed, Mixed };

std::string to_string(LayerKind kind);

// Synthetic layer distribution.
struct LayerSpec {
  LayerKind kind = LayerKind::Compact;
  Index components = 32;            // Gaussian components (compact / mixed)
  double component_sigma = 0.5;     // per-coordinate std inside a component
  double drift_sigma = 0.0;         // per-step drift, as a fraction of tensor RMS
  double query_scale_spread = 0.5;  // std of the log-normal query scale
  Index query_components = 8;       // components queries align with (0 = all)
};

struct ExperimentConfig {
  std::vector<LayerSpec> layers{LayerSpec{}};
  Index heads = 1;
  Index seq_len = 1024;
  Index head_dim = 64;
  Index steps = 1;

  Index q_clusters = kDefaultQueryClusters;
  Index topk = kDefaultTopK;
  double topk_fraction = 0.0;
  double tau_factor = kDefaultTauFactor;
  Index m0 = kDefaultInitialClusters;
  Index n_max = kDefaultMaxClusters;
  double full_layer_quota = 0.15;
  std::uint64_t seed = 0;

  Scorer scorer = Scorer::Quest;
  ClusterCounts cluster_counts = ClusterCounts::Adaptive;
  Index uniform_key_clusters = 0;
  bool normalize_queries = true;
  Index kmeans_max_iter = 25;
  double kmeans_tol = 1e-4;
  // 0 selects max(16, topk * mean_cluster_size / 4).
  Index recall_k = 0;
  Index threads = 1;
  bool deterministic = false;
  Index pca_samples = 4096;
};

using Json = nlohmann::ordered_json;

Json to_json(const ExperimentConfig& cfg);
// Throws ValidationError listing every unknown, mistyped or out-of-range field.
ExperimentConfig config_from_json(const Json& j);
ExperimentConfig parse_config(const std::string& text);
std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

// Empty when the config is valid.
std::vector<std::string> validation_errors(const ExperimentConfig& cfg);
void validate(const ExperimentConfig& cfg);

PipelineParams pipeline_params(const ExperimentConfig& cfg);

Scorer parse_scorer(const std::string& name);

}  // namespace clusterattn::harness
