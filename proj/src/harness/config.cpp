#include "clusterattn/harness/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace clusterattn::harness {
namespace {

LayerKind parse_kind(const std::string& s) {
  if (s == "compact") return LayerKind::Compact;
  if (s == "dispersed") return LayerKind::Dispersed;
  if (s == "mixed") return LayerKind::Mixed;
  throw ValidationError("kind: unknown layer kind '" + s + "'");
}

ClusterCounts parse_counts(const std::string& s) {
  if (s == "adaptive") return ClusterCounts::Adaptive;
  if (s == "uniform") return ClusterCounts::Uniform;
  throw ValidationError("cluster_counts: expected adaptive or uniform, got '" + s + "'");
}

Json layer_to_json(const LayerSpec& s) {
  Json j;
  j["kind"] = to_string(s.kind);
  j["components"] = s.components;
  j["component_sigma"] = s.component_sigma;
  j["drift_sigma"] = s.drift_sigma;
  j["query_scale_spread"] = s.query_scale_spread;
  j["query_components"] = s.query_components;
  return j;
}

// Reads optional fields from a JSON object, collecting problems instead of
// stopping at the first one.
class FieldReader {
 public:
  FieldReader(const Json& j, std::string prefix, std::vector<std::string>& errors)
      : j_(j), prefix_(std::move(prefix)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back(where("") + "expected a JSON object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    try {
      const Json& v = j_.at(key);
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("expected number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("expected string");
      }
      out = v.get<T>();
    } catch (const std::exception& e) {
      errors_.push_back(where(key) + e.what());
    }
  }

  template <typename T, typename Parse>
  void read_enum(const char* key, T& out, Parse parse) {
    std::string s;
    const std::size_t before = errors_.size();
    read(key, s);
    if (errors_.size() != before || s.empty()) return;
    try {
      out = parse(s);
    } catch (const std::exception& e) {
      errors_.push_back(where(key) + e.what());
    }
  }

  void mark(const char* key) { seen_.insert(key); }

  void reject_unknown() {
    if (!j_.is_object()) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) errors_.push_back(where(key) + "unknown field");
    }
  }

 private:
  std::string where(const std::string& key) const {
    return prefix_ + key + (key.empty() ? "" : ": ");
  }

  const Json& j_;
  std::string prefix_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

void collect(std::vector<std::string>& errors, bool ok, const std::string& message) {
  if (!ok) errors.push_back(message);
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Compact:
      return "compact";
    case LayerKind::Dispersed:
      return "dispersed";
    case LayerKind::Mixed:
      return "mixed";
  }
  return "unknown";
}

Scorer parse_scorer(const std::string& name) {
  if (name == "quest") return Scorer::Quest;
  if (name == "mean" || name == "mean-center") return Scorer::MeanCenter;
  if (name == "quest-clamped") return Scorer::QuestClamped;
  throw ValidationError("scorer: expected quest, mean-center or quest-clamped, got '" + name + "'");
}

Json to_json(const ExperimentConfig& cfg) {
  Json j;
  Json layers = Json::array();
  for (const LayerSpec& s : cfg.layers) layers.push_back(layer_to_json(s));
  j["layers"] = layers;
  j["heads"] = cfg.heads;
  j["seq_len"] = cfg.seq_len;
  j["head_dim"] = cfg.head_dim;
  j["steps"] = cfg.steps;
  j["q_clusters"] = cfg.q_clusters;
  j["topk"] = cfg.topk;
  j["topk_fraction"] = cfg.topk_fraction;
  j["tau_factor"] = cfg.tau_factor;
  j["m0"] = cfg.m0;
  j["n_max"] = cfg.n_max;
  j["full_layer_quota"] = cfg.full_layer_quota;
  j["seed"] = cfg.seed;
  j["scorer"] = to_string(cfg.scorer);
  j["cluster_counts"] = to_string(cfg.cluster_counts);
  j["uniform_key_clusters"] = cfg.uniform_key_clusters;
  j["normalize_queries"] = cfg.normalize_queries;
  j["kmeans_max_iter"] = cfg.kmeans_max_iter;
  j["kmeans_tol"] = cfg.kmeans_tol;
  j["recall_k"] = cfg.recall_k;
  j["threads"] = cfg.threads;
  j["deterministic"] = cfg.deterministic;
  j["pca_samples"] = cfg.pca_samples;
  return j;
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig cfg;
  std::vector<std::string> errors;
  FieldReader r(j, "", errors);
  r.mark("layers");
  if (j.is_object() && j.contains("layers")) {
    const Json& layers = j.at("layers");
    if (!layers.is_array()) {
      errors.push_back("layers: expected an array");
    } else {
      cfg.layers.clear();
      for (std::size_t i = 0; i < layers.size(); ++i) {
        LayerSpec s;
        FieldReader lr(layers[i], "layers[" + std::to_string(i) + "].", errors);
        lr.read_enum("kind", s.kind, parse_kind);
        lr.read("components", s.components);
        lr.read("component_sigma", s.component_sigma);
        lr.read("drift_sigma", s.drift_sigma);
        lr.read("query_scale_spread", s.query_scale_spread);
        lr.read("query_components", s.query_components);
        lr.reject_unknown();
        cfg.layers.push_back(s);
      }
    }
  }
  r.read("heads", cfg.heads);
  r.read("seq_len", cfg.seq_len);
  r.read("head_dim", cfg.head_dim);
  r.read("steps", cfg.steps);
  r.read("q_clusters", cfg.q_clusters);
  r.read("topk", cfg.topk);
  r.read("topk_fraction", cfg.topk_fraction);
  r.read("tau_factor", cfg.tau_factor);
  r.read("m0", cfg.m0);
  r.read("n_max", cfg.n_max);
  r.read("full_layer_quota", cfg.full_layer_quota);
  r.read("seed", cfg.seed);
  r.read_enum("scorer", cfg.scorer, parse_scorer);
  r.read_enum("cluster_counts", cfg.cluster_counts, parse_counts);
  r.read("uniform_key_clusters", cfg.uniform_key_clusters);
  r.read("normalize_queries", cfg.normalize_queries);
  r.read("kmeans_max_iter", cfg.kmeans_max_iter);
  r.read("kmeans_tol", cfg.kmeans_tol);
  r.read("recall_k", cfg.recall_k);
  r.read("threads", cfg.threads);
  r.read("deterministic", cfg.deterministic);
  r.read("pca_samples", cfg.pca_samples);
  r.reject_unknown();

  if (errors.empty()) errors = validation_errors(cfg);
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ValidationError(msg);
  }
  return cfg;
}

ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ValidationError(std::string("invalid config: not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

std::string serialize_config(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open config");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<std::string> validation_errors(const ExperimentConfig& cfg) {
  std::vector<std::string> e;
  collect(e, !cfg.layers.empty(), "layers: at least one layer is required");
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& s = cfg.layers[i];
    const std::string p = "layers[" + std::to_string(i) + "].";
    collect(e, s.components >= 1, p + "components: must be >= 1");
    collect(e, s.component_sigma >= 0.0, p + "component_sigma: must be >= 0");
    collect(e, s.drift_sigma >= 0.0, p + "drift_sigma: must be >= 0");
    collect(e, s.query_scale_spread >= 0.0, p + "query_scale_spread: must be >= 0");
    collect(e, s.query_components >= 0, p + "query_components: must be >= 0");
  }
  collect(e, cfg.heads >= 1, "heads: must be >= 1");
  collect(e, cfg.seq_len >= 1, "seq_len: must be >= 1");
  collect(e, cfg.head_dim >= 1, "head_dim: must be >= 1");
  collect(e, cfg.steps >= 1, "steps: must be >= 1");
  collect(e, cfg.q_clusters >= 1, "q_clusters: must be >= 1");
  collect(e, cfg.topk >= 1, "topk: must be >= 1");
  collect(e, cfg.topk_fraction >= 0.0 && cfg.topk_fraction <= 1.0, "topk_fraction: must be in [0, 1]");
  collect(e, cfg.tau_factor > 0.0, "tau_factor: must be > 0");
  collect(e, cfg.m0 >= 1, "m0: must be >= 1");
  collect(e, cfg.n_max >= cfg.m0, "n_max: must be >= m0");
  collect(e, cfg.full_layer_quota >= 0.0 && cfg.full_layer_quota <= 1.0, "full_layer_quota: must be in [0, 1]");
  collect(e, cfg.cluster_counts != ClusterCounts::Uniform || cfg.uniform_key_clusters >= 1,
          "uniform_key_clusters: must be >= 1 when cluster_counts is uniform");
  collect(e, cfg.uniform_key_clusters >= 0, "uniform_key_clusters: must be >= 0");
  collect(e, cfg.kmeans_max_iter >= 0, "kmeans_max_iter: must be >= 0");
  collect(e, cfg.kmeans_tol >= 0.0, "kmeans_tol: must be >= 0");
  collect(e, cfg.recall_k >= 0, "recall_k: must be >= 0");
  collect(e, cfg.threads >= 1, "threads: must be >= 1");
  collect(e, cfg.pca_samples >= 2, "pca_samples: must be >= 2");
  return e;
}

void validate(const ExperimentConfig& cfg) {
  const auto errors = validation_errors(cfg);
  if (errors.empty()) return;
  std::string msg = "invalid config:";
  for (const auto& err : errors) msg += "\n  " + err;
  throw ValidationError(msg);
}

PipelineParams pipeline_params(const ExperimentConfig& cfg) {
  PipelineParams p;
  p.q_clusters = cfg.q_clusters;
  p.topk = cfg.topk;
  p.topk_fraction = cfg.topk_fraction;
  p.tau_factor = static_cast<float>(cfg.tau_factor);
  p.m0 = cfg.m0;
  p.n_max = cfg.n_max;
  p.kmeans.max_iter = cfg.kmeans_max_iter;
  p.kmeans.tol = static_cast<float>(cfg.kmeans_tol);
  p.scorer = cfg.scorer;
  p.cluster_counts = cfg.cluster_counts;
  p.uniform_key_clusters = cfg.uniform_key_clusters;
  p.normalize_queries = cfg.normalize_queries;
  p.threads = cfg.deterministic ? 1 : cfg.threads;
  return p;
}

}  // namespace clusterattn::harness
