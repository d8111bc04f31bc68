#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "clusterattn/harness/config.hpp"
#include "clusterattn/harness/synthetic.hpp"

namespace clusterattn::harness {

// One (step, layer, head) result.
struct HeadRow {
  Index step = 0;
  Index layer = 0;
  Index head = 0;
  AttentionMode mode = AttentionMode::Sparse;
  Index key_clusters = 0;
  Index topk = 0;
  double density = 1.0;
  ErrorMetrics error;
  Index recall_k = 0;
  double recall = 1.0;
  Index key_iterations = 0;
  Index query_iterations = 0;
  FlopCounts flops;
  // Layer-level compactness at this step, repeated on every head row.
  double mse_layer = 0.0;
  double comp = 0.0;
  double db_index = 0.0;
};

struct LayerStepRecord {
  Index step = 0;
  Index layer = 0;
  AttentionMode mode = AttentionMode::Sparse;
  bool forced_full = false;
  std::vector<Index> key_clusters;
  std::vector<float> tau;
  CompactnessReport compactness;
  std::vector<HeadRow> heads;
};

struct Totals {
  double mean_rel_l2 = 0.0;
  double mean_cosine = 0.0;
  double mean_snr_db = 0.0;  // over finite values; +inf if none
  double min_snr_db = 0.0;
  double mean_recall = 0.0;
  double mean_density = 0.0;
  FlopCounts flops;
  Index full_layers = 0;
  Index layers = 0;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<LayerStepRecord> layers;  // step-major
  Totals totals;
  double wall_clock_full_ms = 0.0;
  double wall_clock_sparse_ms = 0.0;
};

// Fraction of each query's exact top-`k` keys that fall in the key clusters
// its query cluster selected, averaged over queries. 1 for Full mode.
double recall_at_k(const HeadInput& in, const HeadOutput& out, Index k);

// Recall depth used by the report for a head.
Index default_recall_k(const ExperimentConfig& cfg, Index seq_len, Index key_clusters, Index topk);

RunReport run_experiment(const ExperimentConfig& cfg, const Workload& workload);

Json report_to_json(const RunReport& report);
std::string report_csv(const RunReport& report);
extern const std::vector<std::string> kCsvColumns;

// Writes report.json and layers.csv into `out_dir`.
void write_report(const std::filesystem::path& out_dir, const RunReport& report);

// Compactness, Davies-Bouldin and PCA export only; writes analysis.json and
// pca/step0_layer<l>_head<h>_{q,k}.csv.
Json analyze(const ExperimentConfig& cfg, const Workload& workload, const std::filesystem::path& out_dir);

struct BenchResult {
  Index seq_len = 0;
  Index head_dim = 0;
  double full_ms = 0.0;    // median
  double sparse_ms = 0.0;  // median, clustering + scoring + attention
  double density = 0.0;
  Index key_clusters = 0;
  double speedup() const { return full_ms / sparse_ms; }
};

// Wall-clock of one step-0 head: full attention vs the whole sparse pipeline.
BenchResult bench(const ExperimentConfig& cfg, Index repeats);

Json bench_to_json(const BenchResult& r);

}  // namespace clusterattn::harness
