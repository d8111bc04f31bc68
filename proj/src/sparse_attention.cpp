#include "clusterattn/sparse_attention.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace clusterattn {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t kQuerySalt = 0x71756572ULL;
constexpr std::uint64_t kKeySalt = 0x6b657973ULL;

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
// thrown by any worker is rethrown on the caller.
template <typename Fn>
void parallel_for(Index n, Index threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex mu;
  Index next = 0;
  auto worker = [&] {
    while (true) {
      Index i;
      {
        std::lock_guard lock(mu);
        if (next >= n || error) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (Index t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Members of each cluster laid out contiguously (CSR).
struct Members {
  std::vector<Index> offsets;
  std::vector<Index> rows;

  Index size(Index c) const { return offsets[c + 1] - offsets[c]; }
};

Members group_members(const std::vector<Index>& assignments, Index num_clusters) {
  Members m;
  m.offsets.assign(static_cast<std::size_t>(num_clusters) + 1, 0);
  for (Index a : assignments) ++m.offsets[a + 1];
  std::partial_sum(m.offsets.begin(), m.offsets.end(), m.offsets.begin());
  m.rows.resize(assignments.size());
  std::vector<Index> cursor(m.offsets.begin(), m.offsets.end() - 1);
  for (Index i = 0; i < static_cast<Index>(assignments.size()); ++i) m.rows[cursor[assignments[i]]++] = i;
  return m;
}

Index effective_topk(const PipelineParams& params, Index num_clusters) {
  Index topk = params.topk;
  if (params.topk_fraction > 0.0) {
    topk = static_cast<Index>(std::ceil(params.topk_fraction * static_cast<double>(num_clusters) - 1e-9));
  }
  return std::clamp<Index>(topk, 1, num_clusters);
}

void check_head_shapes(const HeadInput& in) {
  if (in.q.cols() != in.k.cols()) {
    throw DimensionError("head input: q is " + shape_string(in.q) + " but k is " + shape_string(in.k));
  }
  if (in.k.rows() != in.v.rows()) {
    throw DimensionError("head input: k is " + shape_string(in.k) + " but v is " + shape_string(in.v));
  }
}

}  // namespace

std::string to_string(AttentionMode mode) { return mode == AttentionMode::Full ? "full" : "sparse"; }

std::string to_string(Scorer scorer) {
  switch (scorer) {
    case Scorer::Quest:
      return "quest";
    case Scorer::MeanCenter:
      return "mean-center";
    case Scorer::QuestClamped:
      return "quest-clamped";
  }
  return "unknown";
}

std::string to_string(ClusterCounts counts) {
  return counts == ClusterCounts::Adaptive ? "adaptive" : "uniform";
}

std::uint64_t layer_seed(std::uint64_t seed, Index layer) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(layer)));
}

std::uint64_t head_seed(std::uint64_t layer_seed, Index head) {
  return splitmix64(layer_seed + static_cast<std::uint64_t>(head));
}

FlopCounts count_flops(const FlopInputs& in) {
  const double l = static_cast<double>(in.seq_len);
  const double d = static_cast<double>(in.head_dim);
  const double c = static_cast<double>(in.key_clusters);
  const double g = static_cast<double>(in.query_clusters);
  FlopCounts f;
  f.full = 4.0 * l * l * d;
  f.overhead = 2.0 * l * d *
               (c * static_cast<double>(in.key_iterations) + g * static_cast<double>(in.query_iterations));
  if (in.mode == AttentionMode::Full) {
    f.sparse = f.full;
  } else {
    f.sparse = 4.0 * l * (in.density * l) * d;
    f.overhead += l * d + 4.0 * g * c * d;
  }
  return f;
}

Index quota_layer_count(Index num_layers, double quota) {
  return static_cast<Index>(std::floor(quota * static_cast<double>(num_layers) + 1e-9));
}

HeadClustering plan_head(const HeadInput& in, const PipelineParams& params, std::uint64_t seed) {
  check_head_shapes(in);
  const Index n = in.k.rows();
  HeadClustering out;
  out.queries = cluster_queries(in.q, std::min(params.q_clusters, in.q.rows()), splitmix64(seed ^ kQuerySalt),
                                params.kmeans, params.normalize_queries);
  const std::uint64_t key_seed = splitmix64(seed ^ kKeySalt);
  if (params.cluster_counts == ClusterCounts::Uniform) {
    out.keys = kmeans(in.k, std::min(params.uniform_key_clusters, n), key_seed, params.kmeans);
    return out;
  }
  MultiStageOptions opts;
  opts.m0 = std::min(params.m0, n);
  opts.n_max = std::max(params.n_max, opts.m0);
  opts.kmeans = params.kmeans;
  out.stage0 = kmeans(in.k, opts.m0, key_seed, params.kmeans);
  out.tau = compute_tau(in.k, *out.stage0, params.tau_factor);
  out.keys = multi_stage_cluster_keys(in.k, out.tau, key_seed, opts, &*out.stage0);
  return out;
}

HeadClustering update_head(const HeadInput& in, const PipelineParams& params, const HeadState& state) {
  check_head_shapes(in);
  HeadClustering out;
  out.queries = update_query_clusters(in.q, state.query_centers, params.kmeans, params.normalize_queries);
  out.keys = warm_start_update(in.k, state.key_centers, params.kmeans);
  return out;
}

HeadOutput attend_head(const HeadInput& in, const HeadClustering& clustering, const PipelineParams& params,
                       AttentionMode mode) {
  check_head_shapes(in);
  const Index seq_len = in.k.rows();
  HeadOutput out;
  HeadStats& st = out.stats;
  st.mode = mode;
  st.key_clusters = clustering.keys.num_clusters();
  st.query_clusters = clustering.queries.representatives.rows();
  st.key_iterations = clustering.keys.iterations;
  st.query_iterations = clustering.queries.model.iterations;

  if (mode == AttentionMode::Full) {
    out.output = full_attention(in.q, in.k, in.v);
    st.density = 1.0;
  } else {
    const ClusterModel& keys = clustering.keys;
    const Tensor& reps = clustering.queries.representatives;
    const Index num_clusters = keys.num_clusters();

    Tensor scores;
    switch (params.scorer) {
      case Scorer::Quest:
        scores = tensor_quest(reps, build_envelopes(in.k, keys.assignments, num_clusters));
        break;
      case Scorer::MeanCenter:
        scores = mean_center_scores(reps, keys.centers);
        break;
      case Scorer::QuestClamped:
        scores = tensor_quest_clamped_centers(reps, keys.centers);
        break;
    }
    st.topk = effective_topk(params, num_clusters);
    SelectionResult<float> sel = select_topk_clusters(std::move(scores), st.topk, keys.counts);
    st.density = sel.density;

    const Members key_members = group_members(keys.assignments, num_clusters);
    const Members query_members =
        group_members(clustering.queries.model.assignments, clustering.queries.model.num_clusters());

    out.output.resize(in.q.rows(), in.v.cols());
    Tensor qg, kg, vg;
    for (Index g = 0; g < static_cast<Index>(sel.selected.size()); ++g) {
      const Index nq = query_members.size(g);
      if (nq == 0) continue;
      Index nk = 0;
      for (Index c : sel.selected[g]) nk += key_members.size(c);
      kg.resize(nk, in.k.cols());
      vg.resize(nk, in.v.cols());
      Index row = 0;
      for (Index c : sel.selected[g]) {
        for (Index p = key_members.offsets[c]; p < key_members.offsets[c + 1]; ++p, ++row) {
          kg.row(row) = in.k.row(key_members.rows[p]);
          vg.row(row) = in.v.row(key_members.rows[p]);
        }
      }
      qg.resize(nq, in.q.cols());
      for (Index i = 0; i < nq; ++i) qg.row(i) = in.q.row(query_members.rows[query_members.offsets[g] + i]);
      const Tensor og = full_attention(qg, kg, vg);
      for (Index i = 0; i < nq; ++i) out.output.row(query_members.rows[query_members.offsets[g] + i]) = og.row(i);
    }

    out.query_assignments = clustering.queries.model.assignments;
    out.key_assignments = keys.assignments;
    out.selected = std::move(sel.selected);
    out.key_counts = keys.counts;
  }

  st.flops = count_flops({seq_len, in.q.cols(), st.key_clusters, st.query_clusters, st.density, st.key_iterations,
                          st.query_iterations, mode});
  return out;
}

LayerPolicy make_policy(const std::vector<HeadInput>& heads, const std::vector<HeadClustering>& plans,
                        const PipelineParams& params) {
  if (heads.size() != plans.size()) {
    throw DimensionError("make_policy: " + std::to_string(heads.size()) + " heads but " +
                         std::to_string(plans.size()) + " clusterings");
  }
  LayerPolicy policy;
  policy.topk = params.topk;
  policy.q_clusters = params.q_clusters;
  bool any_full = false;
  double mse = 0.0;
  for (std::size_t h = 0; h < plans.size(); ++h) {
    const HeadClustering& p = plans[h];
    policy.key_cluster_count.push_back(p.keys.num_clusters());
    policy.tau.push_back(p.tau);
    policy.flag_full.push_back(p.keys.flag_full);
    any_full = any_full || p.keys.flag_full;
    mse += reconstruction_mse(heads[h].k, p.stage0 ? *p.stage0 : p.keys);
  }
  policy.rank_mse = plans.empty() ? 0.0 : mse / static_cast<double>(plans.size());
  policy.mode = any_full ? AttentionMode::Full : AttentionMode::Sparse;
  return policy;
}

LayerResult cluster_sparse_attention(const std::vector<HeadInput>& heads, const PipelineParams& params,
                                     LayerPolicy& policy, StepState& state, std::uint64_t seed,
                                     std::vector<HeadClustering>* preset_plans) {
  const Index num_heads = static_cast<Index>(heads.size());
  const bool first_step = state.heads.empty();
  std::vector<HeadClustering> clusterings(static_cast<std::size_t>(num_heads));

  if (first_step) {
    if (preset_plans) {
      if (static_cast<Index>(preset_plans->size()) != num_heads) {
        throw ContractError("cluster_sparse_attention: preset clusterings do not match head count");
      }
      clusterings = std::move(*preset_plans);
    } else {
      parallel_for(num_heads, params.threads,
                   [&](Index h) { clusterings[h] = plan_head(heads[h], params, head_seed(seed, h)); });
      policy = make_policy(heads, clusterings, params);
    }
  } else {
    if (static_cast<Index>(state.heads.size()) != num_heads) {
      throw ContractError("cluster_sparse_attention: step " + std::to_string(state.step) + " has " +
                          std::to_string(num_heads) + " heads, state has " + std::to_string(state.heads.size()));
    }
    for (Index h = 0; h < num_heads; ++h) {
      if (heads[h].k.cols() != state.heads[h].key_centers.cols()) {
        throw ContractError("cluster_sparse_attention: head " + std::to_string(h) + " dimension changed to " +
                            std::to_string(heads[h].k.cols()));
      }
    }
    if (policy.mode == AttentionMode::Sparse) {
      parallel_for(num_heads, params.threads,
                   [&](Index h) { clusterings[h] = update_head(heads[h], params, state.heads[h]); });
    }
  }

  LayerResult result;
  result.heads.resize(static_cast<std::size_t>(num_heads));
  parallel_for(num_heads, params.threads,
               [&](Index h) { result.heads[h] = attend_head(heads[h], clusterings[h], params, policy.mode); });

  // Multi-stage centers are not Lloyd-stationary, so the state carried to
  // the next step is their Lloyd refinement on this step's keys.
  std::vector<Tensor> next_key_centers(static_cast<std::size_t>(num_heads));
  if (first_step && policy.mode == AttentionMode::Sparse) {
    parallel_for(num_heads, params.threads, [&](Index h) {
      ClusterModel polished = warm_start_update(heads[h].k, clusterings[h].keys.centers, params.kmeans);
      HeadStats& st = result.heads[h].stats;
      st.key_iterations += polished.iterations;
      st.flops = count_flops({heads[h].k.rows(), heads[h].q.cols(), st.key_clusters, st.query_clusters, st.density,
                              st.key_iterations, st.query_iterations, st.mode});
      next_key_centers[h] = std::move(polished.centers);
    });
  }
  for (Index h = 0; h < num_heads; ++h) result.heads[h].stats.key_clusters = policy.key_cluster_count[h];

  const bool clustered = first_step || policy.mode == AttentionMode::Sparse;
  if (clustered) {
    if (first_step) state.heads.resize(static_cast<std::size_t>(num_heads));
    std::vector<Tensor> keys;
    std::vector<ClusterModel> models;
    for (Index h = 0; h < num_heads; ++h) {
      state.heads[h].key_centers =
          next_key_centers[h].size() ? std::move(next_key_centers[h]) : clusterings[h].keys.centers;
      state.heads[h].query_centers = clusterings[h].queries.model.centers;
      keys.push_back(heads[h].k);
      models.push_back(std::move(clusterings[h].keys));
    }
    result.stats.compactness = compactness(keys, models);
  }
  ++state.step;

  double density = 0.0;
  for (const HeadOutput& h : result.heads) {
    density += h.stats.density;
    result.stats.flops.full += h.stats.flops.full;
    result.stats.flops.sparse += h.stats.flops.sparse;
    result.stats.flops.overhead += h.stats.flops.overhead;
    result.stats.heads.push_back(h.stats);
  }
  result.stats.density = num_heads ? density / static_cast<double>(num_heads) : 1.0;
  return result;
}

DenoiseResult run_denoise_steps(const std::vector<std::vector<std::vector<HeadInput>>>& inputs,
                                const PipelineParams& params, double full_layer_quota, std::uint64_t seed) {
  DenoiseResult result;
  if (inputs.empty()) return result;
  const auto& first = inputs.front();
  const Index num_layers = static_cast<Index>(first.size());

  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (inputs[t].size() != first.size()) {
      throw ContractError("run_denoise_steps: step " + std::to_string(t) + " has " +
                          std::to_string(inputs[t].size()) + " layers, step 0 has " + std::to_string(first.size()));
    }
    for (Index l = 0; l < num_layers; ++l) {
      if (inputs[t][l].size() != first[l].size()) {
        throw ContractError("run_denoise_steps: step " + std::to_string(t) + " layer " + std::to_string(l) +
                            " head count changed");
      }
      for (std::size_t h = 0; h < first[l].size(); ++h) {
        const HeadInput& a = inputs[t][l][h];
        const HeadInput& b = first[l][h];
        if (a.q.rows() != b.q.rows() || a.q.cols() != b.q.cols() || a.k.rows() != b.k.rows() ||
            a.k.cols() != b.k.cols() || a.v.rows() != b.v.rows() || a.v.cols() != b.v.cols()) {
          throw ContractError("run_denoise_steps: shape drift at step " + std::to_string(t) + " layer " +
                              std::to_string(l) + " head " + std::to_string(h));
        }
      }
    }
  }

  result.policies.resize(static_cast<std::size_t>(num_layers));
  std::vector<StepState> states(static_cast<std::size_t>(num_layers));

  // Step 0: cluster every layer first so the quota can rank them.
  std::vector<std::vector<HeadClustering>> plans(static_cast<std::size_t>(num_layers));
  for (Index l = 0; l < num_layers; ++l) {
    const auto& heads = first[l];
    plans[l].resize(heads.size());
    parallel_for(static_cast<Index>(heads.size()), params.threads,
                 [&](Index h) { plans[l][h] = plan_head(heads[h], params, head_seed(layer_seed(seed, l), h)); });
    result.policies[l] = make_policy(heads, plans[l], params);
  }
  std::vector<Index> order(static_cast<std::size_t>(num_layers));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return result.policies[a].rank_mse > result.policies[b].rank_mse;
  });
  const Index forced = std::min(quota_layer_count(num_layers, full_layer_quota), num_layers);
  for (Index i = 0; i < forced; ++i) {
    result.policies[order[i]].forced_full = true;
    result.policies[order[i]].mode = AttentionMode::Full;
  }

  for (std::size_t t = 0; t < inputs.size(); ++t) {
    std::vector<LayerResult> layer_results;
    layer_results.reserve(static_cast<std::size_t>(num_layers));
    for (Index l = 0; l < num_layers; ++l) {
      layer_results.push_back(cluster_sparse_attention(inputs[t][l], params, result.policies[l], states[l],
                                                       layer_seed(seed, l), t == 0 ? &plans[l] : nullptr));
    }
    result.steps.push_back(std::move(layer_results));
  }
  return result;
}

}  // namespace clusterattn
