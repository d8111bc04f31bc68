#include "clusterattn/harness/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "clusterattn/harness/pca.hpp"

namespace clusterattn::harness {
namespace fs = std::filesystem;
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

// JSON has no infinities; they are written as strings.
Json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw IoError(path.string() + ": write failed");
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": " + ec.message());
}

Json compactness_json(const CompactnessReport& c) {
  Json j;
  Json per_head = Json::array();
  for (double m : c.mse_per_head) per_head.push_back(number(m));
  j["mse_per_head"] = per_head;
  j["mse_layer"] = number(c.mse_layer);
  j["comp"] = number(c.comp);
  j["db_index"] = number(c.db_index);
  return j;
}

void check_workload(const Workload& w) {
  if (w.empty() || w.front().empty()) throw ContractError("workload is empty");
  for (const auto& step : w) {
    for (const auto& layer : step) {
      if (layer.empty()) throw ContractError("workload has a layer without heads");
    }
  }
}

// Mean distance of unit queries to the centroid of their cluster, where the
// clusters may have been formed on other (e.g. unnormalized) coordinates.
std::pair<double, double> spread_in_unit_space(const Tensor& unit, const ClusterModel& model) {
  ClusterModel in_unit = model;
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(model.num_clusters(), unit.cols());
  for (Index i = 0; i < unit.rows(); ++i) sums.row(model.assignments[i]) += unit.row(i).cast<double>();
  for (Index c = 0; c < model.num_clusters(); ++c) sums.row(c) /= static_cast<double>(model.counts[c]);
  in_unit.centers = sums.cast<float>();
  return {mean_intra_cluster_distance(unit, in_unit), davies_bouldin(unit, in_unit)};
}

}  // namespace

const std::vector<std::string> kCsvColumns = {
    "step",         "layer", "head",    "mode",     "C",          "density",    "rel_l2",         "cosine", "snr_db",
    "recall_at_k",  "mse_layer", "comp", "db_index", "flops_full", "flops_sparse", "flops_overhead", "est_speedup"};

double recall_at_k(const HeadInput& in, const HeadOutput& out, Index k) {
  if (out.stats.mode == AttentionMode::Full) return 1.0;
  const Index num_clusters = static_cast<Index>(out.key_counts.size());
  std::vector<std::vector<char>> chosen(out.selected.size(), std::vector<char>(static_cast<std::size_t>(num_clusters), 0));
  for (std::size_t g = 0; g < out.selected.size(); ++g) {
    for (Index c : out.selected[g]) chosen[g][c] = 1;
  }
  const auto top = exact_topk_keys_batch(in.q, in.k, k);
  double total = 0.0;
  for (Index i = 0; i < in.q.rows(); ++i) {
    const auto& mask = chosen[static_cast<std::size_t>(out.query_assignments[i])];
    Index hits = 0;
    for (Index key : top[i]) hits += mask[out.key_assignments[key]];
    total += static_cast<double>(hits) / static_cast<double>(k);
  }
  return in.q.rows() ? total / static_cast<double>(in.q.rows()) : 1.0;
}

Index default_recall_k(const ExperimentConfig& cfg, Index seq_len, Index key_clusters, Index topk) {
  Index k = cfg.recall_k;
  if (k <= 0) {
    const Index c = std::max<Index>(key_clusters, 1);
    k = std::max<Index>(16, topk * seq_len / (4 * c));
  }
  return std::clamp<Index>(k, 1, seq_len);
}

RunReport run_experiment(const ExperimentConfig& cfg, const Workload& workload) {
  validate(cfg);
  check_workload(workload);
  const PipelineParams params = pipeline_params(cfg);

  RunReport report;
  report.config = cfg;
  auto start = Clock::now();
  const DenoiseResult res = run_denoise_steps(workload, params, cfg.full_layer_quota, cfg.seed);
  report.wall_clock_sparse_ms = elapsed_ms(start);

  const std::size_t num_layers = workload.front().size();
  std::vector<CompactnessReport> snapshot(num_layers);
  double full_ms = 0.0;
  for (std::size_t t = 0; t < res.steps.size(); ++t) {
    for (std::size_t l = 0; l < num_layers; ++l) {
      const LayerResult& lr = res.steps[t][l];
      const LayerPolicy& policy = res.policies[l];
      LayerStepRecord rec;
      rec.step = static_cast<Index>(t);
      rec.layer = static_cast<Index>(l);
      rec.mode = policy.mode;
      rec.forced_full = policy.forced_full;
      rec.key_clusters = policy.key_cluster_count;
      rec.tau = policy.tau;
      // Full layers stop clustering after step 0; keep reporting that snapshot.
      if (t == 0 || policy.mode == AttentionMode::Sparse) snapshot[l] = lr.stats.compactness;
      rec.compactness = snapshot[l];

      for (std::size_t h = 0; h < lr.heads.size(); ++h) {
        const HeadInput& in = workload[t][l][h];
        const HeadOutput& out = lr.heads[h];
        start = Clock::now();
        const Tensor reference = full_attention(in.q, in.k, in.v);
        full_ms += elapsed_ms(start);

        HeadRow row;
        row.step = rec.step;
        row.layer = rec.layer;
        row.head = static_cast<Index>(h);
        row.mode = out.stats.mode;
        row.key_clusters = out.stats.key_clusters;
        row.topk = out.stats.topk;
        row.density = out.stats.density;
        row.error = compare_outputs(reference, out.output);
        row.recall_k = default_recall_k(cfg, in.k.rows(), row.key_clusters, row.topk);
        row.recall = recall_at_k(in, out, row.recall_k);
        row.key_iterations = out.stats.key_iterations;
        row.query_iterations = out.stats.query_iterations;
        row.flops = out.stats.flops;
        row.mse_layer = rec.compactness.mse_layer;
        row.comp = rec.compactness.comp;
        row.db_index = rec.compactness.db_index;
        rec.heads.push_back(row);
      }
      report.layers.push_back(std::move(rec));
    }
  }
  report.wall_clock_full_ms = full_ms;

  Totals& tot = report.totals;
  double snr_sum = 0.0;
  Index snr_count = 0, rows = 0;
  tot.min_snr_db = std::numeric_limits<double>::infinity();
  for (const LayerStepRecord& rec : report.layers) {
    if (rec.step == 0) {
      ++tot.layers;
      if (rec.mode == AttentionMode::Full) ++tot.full_layers;
    }
    for (const HeadRow& r : rec.heads) {
      ++rows;
      tot.mean_rel_l2 += r.error.rel_l2;
      tot.mean_cosine += r.error.cosine_sim;
      tot.mean_recall += r.recall;
      tot.mean_density += r.density;
      tot.min_snr_db = std::min(tot.min_snr_db, r.error.snr_db);
      if (std::isfinite(r.error.snr_db)) {
        snr_sum += r.error.snr_db;
        ++snr_count;
      }
      tot.flops.full += r.flops.full;
      tot.flops.sparse += r.flops.sparse;
      tot.flops.overhead += r.flops.overhead;
    }
  }
  if (rows > 0) {
    const double n = static_cast<double>(rows);
    tot.mean_rel_l2 /= n;
    tot.mean_cosine /= n;
    tot.mean_recall /= n;
    tot.mean_density /= n;
  }
  tot.mean_snr_db = snr_count ? snr_sum / static_cast<double>(snr_count) : std::numeric_limits<double>::infinity();
  return report;
}

Json report_to_json(const RunReport& report) {
  Json j;
  j["config"] = to_json(report.config);
  Json layers = Json::array();
  for (const LayerStepRecord& rec : report.layers) {
    Json l;
    l["step"] = rec.step;
    l["layer"] = rec.layer;
    l["mode"] = to_string(rec.mode);
    l["forced_full"] = rec.forced_full;
    l["key_clusters"] = rec.key_clusters;
    Json taus = Json::array();
    for (float t : rec.tau) taus.push_back(number(t));
    l["tau"] = taus;
    l["compactness"] = compactness_json(rec.compactness);
    Json heads = Json::array();
    for (const HeadRow& r : rec.heads) {
      Json h;
      h["head"] = r.head;
      h["mode"] = to_string(r.mode);
      h["C"] = r.key_clusters;
      h["topk"] = r.topk;
      h["density"] = number(r.density);
      h["error"] = {{"rel_l2", number(r.error.rel_l2)},
                    {"cosine", number(r.error.cosine_sim)},
                    {"snr_db", number(r.error.snr_db)},
                    {"max_abs", number(r.error.max_abs)}};
      h["recall_k"] = r.recall_k;
      h["recall_at_k"] = number(r.recall);
      h["key_iterations"] = r.key_iterations;
      h["query_iterations"] = r.query_iterations;
      h["flops"] = {{"full", number(r.flops.full)},
                    {"sparse", number(r.flops.sparse)},
                    {"overhead", number(r.flops.overhead)}};
      h["est_speedup"] = number(r.flops.est_speedup());
      heads.push_back(h);
    }
    l["heads"] = heads;
    layers.push_back(l);
  }
  j["layers"] = layers;

  const Totals& t = report.totals;
  Json tot;
  tot["layers"] = t.layers;
  tot["full_layers"] = t.full_layers;
  tot["mean_rel_l2"] = number(t.mean_rel_l2);
  tot["mean_cosine"] = number(t.mean_cosine);
  tot["mean_snr_db"] = number(t.mean_snr_db);
  tot["min_snr_db"] = number(t.min_snr_db);
  tot["mean_recall_at_k"] = number(t.mean_recall);
  tot["mean_density"] = number(t.mean_density);
  tot["flops_full"] = number(t.flops.full);
  tot["flops_sparse"] = number(t.flops.sparse);
  tot["flops_overhead"] = number(t.flops.overhead);
  tot["est_speedup"] = number(t.flops.est_speedup());
  if (!report.config.deterministic) {
    tot["wall_clock_ms"] = {{"full_reference", report.wall_clock_full_ms},
                            {"sparse_pipeline", report.wall_clock_sparse_ms}};
  }
  j["totals"] = tot;
  return j;
}

std::string report_csv(const RunReport& report) {
  std::string out;
  for (std::size_t i = 0; i < kCsvColumns.size(); ++i) out += (i ? "," : "") + kCsvColumns[i];
  out += "\n";
  for (const LayerStepRecord& rec : report.layers) {
    for (const HeadRow& r : rec.heads) {
      const std::vector<std::string> cells = {std::to_string(r.step),
                                              std::to_string(r.layer),
                                              std::to_string(r.head),
                                              to_string(r.mode),
                                              std::to_string(r.key_clusters),
                                              format_number(r.density),
                                              format_number(r.error.rel_l2),
                                              format_number(r.error.cosine_sim),
                                              format_number(r.error.snr_db),
                                              format_number(r.recall),
                                              format_number(r.mse_layer),
                                              format_number(r.comp),
                                              format_number(r.db_index),
                                              format_number(r.flops.full),
                                              format_number(r.flops.sparse),
                                              format_number(r.flops.overhead),
                                              format_number(r.flops.est_speedup())};
      for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
      out += "\n";
    }
  }
  return out;
}

void write_report(const fs::path& out_dir, const RunReport& report) {
  make_dirs(out_dir);
  write_text(out_dir / "report.json", report_to_json(report).dump(2) + "\n");
  write_text(out_dir / "layers.csv", report_csv(report));
}

Json analyze(const ExperimentConfig& cfg, const Workload& workload, const fs::path& out_dir) {
  validate(cfg);
  check_workload(workload);
  const PipelineParams params = pipeline_params(cfg);
  make_dirs(out_dir / "pca");

  Json j;
  j["config"] = to_json(cfg);
  Json layers = Json::array();
  const auto& step0 = workload.front();
  for (std::size_t l = 0; l < step0.size(); ++l) {
    std::vector<Tensor> keys;
    std::vector<ClusterModel> uniform;
    Json heads = Json::array();
    for (std::size_t h = 0; h < step0[l].size(); ++h) {
      const HeadInput& in = step0[l][h];
      const HeadClustering plan = plan_head(in, params, head_seed(layer_seed(cfg.seed, static_cast<Index>(l)),
                                                                  static_cast<Index>(h)));
      const ClusterModel& base = plan.stage0 ? *plan.stage0 : plan.keys;

      // Query clustering quality, both measured on unit vectors.
      const Index g = std::min(params.q_clusters, in.q.rows());
      const Tensor unit = l2_normalize_rows(in.q).rows;
      const ClusterModel raw = kmeans(in.q, g, cfg.seed, params.kmeans);
      const ClusterModel normalized = kmeans(unit, g, cfg.seed, params.kmeans);
      const auto [raw_spread, raw_db] = spread_in_unit_space(unit, raw);
      const auto [norm_spread, norm_db] = spread_in_unit_space(unit, normalized);

      Json hj;
      hj["head"] = h;
      hj["uniform"] = {{"C", base.num_clusters()},
                       {"mse", number(reconstruction_mse(in.k, base))},
                       {"db_index", number(davies_bouldin(in.k, base))},
                       {"mean_intra_distance", number(mean_intra_cluster_distance(in.k, base))}};
      hj["multi_stage"] = {{"tau", number(plan.tau)},
                           {"C", plan.keys.num_clusters()},
                           {"flag_full", plan.keys.flag_full},
                           {"stage_count", plan.keys.stage_count},
                           {"mse", number(reconstruction_mse(in.k, plan.keys))}};
      hj["queries"] = {{"clusters", g},
                       {"normalized", {{"mean_intra_distance", number(norm_spread)}, {"db_index", number(norm_db)}}},
                       {"raw", {{"mean_intra_distance", number(raw_spread)}, {"db_index", number(raw_db)}}}};
      heads.push_back(hj);
      keys.push_back(in.k);
      uniform.push_back(base);

      const std::string stem = "step0_layer" + std::to_string(l) + "_head" + std::to_string(h);
      write_pca_csv(out_dir / "pca" / (stem + "_k.csv"), pca_project(in.k, 2, cfg.pca_samples, cfg.seed));
      write_pca_csv(out_dir / "pca" / (stem + "_q.csv"), pca_project(in.q, 2, cfg.pca_samples, cfg.seed));
    }
    Json lj;
    lj["layer"] = l;
    lj["compactness"] = compactness_json(compactness(keys, uniform));
    lj["heads"] = heads;
    layers.push_back(lj);
  }
  j["layers"] = layers;
  write_text(out_dir / "analysis.json", j.dump(2) + "\n");
  return j;
}

BenchResult bench(const ExperimentConfig& cfg, Index repeats) {
  validate(cfg);
  if (repeats < 1) throw ValidationError("repeats: must be >= 1");
  PipelineParams params = pipeline_params(cfg);
  params.threads = 1;
  const auto layer = gen_synthetic(cfg.layers.front(), cfg.seq_len, cfg.head_dim, 1, 1, cfg.seed);
  const HeadInput& in = layer[0][0];

  BenchResult r;
  r.seq_len = cfg.seq_len;
  r.head_dim = cfg.head_dim;
  std::vector<double> full, sparse;
  for (Index i = 0; i < repeats; ++i) {
    auto start = Clock::now();
    const Tensor o = full_attention(in.q, in.k, in.v);
    full.push_back(elapsed_ms(start));

    start = Clock::now();
    const HeadClustering plan = plan_head(in, params, cfg.seed);
    const AttentionMode mode = plan.keys.flag_full ? AttentionMode::Full : AttentionMode::Sparse;
    const HeadOutput out = attend_head(in, plan, params, mode);
    sparse.push_back(elapsed_ms(start));
    r.density = out.stats.density;
    r.key_clusters = out.stats.key_clusters;
  }
  r.full_ms = median(full);
  r.sparse_ms = median(sparse);
  return r;
}

Json bench_to_json(const BenchResult& r) {
  Json j;
  j["seq_len"] = r.seq_len;
  j["head_dim"] = r.head_dim;
  j["key_clusters"] = r.key_clusters;
  j["density"] = number(r.density);
  j["full_ms"] = r.full_ms;
  j["sparse_ms"] = r.sparse_ms;
  j["speedup"] = number(r.speedup());
  return j;
}

}  // namespace clusterattn::harness
