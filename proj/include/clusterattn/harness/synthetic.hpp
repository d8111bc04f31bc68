#pragma once

#include <cstdint>
#include <vector>

#include "clusterattn/harness/config.hpp"
#include "clusterattn/sparse_attention.hpp"

namespace clusterattn::harness {

// [step][layer][head]
using Workload = std::vector<std::vector<std::vector<HeadInput>>>;

// One layer's heads over all steps: [step][head].
//
// compact    keys from `components` isotropic Gaussians
// dispersed  keys from an isotropic multivariate Student-t with 2 dof
// mixed      compact, with a quarter of the tokens replaced by dispersed ones
//
// Queries point along a random subset of the component means, with
// log-normal scale so normalization matters. Values are standard normal.
// Step t adds Gaussian drift of drift_sigma * RMS to q, k and v.
std::vector<std::vector<HeadInput>> gen_synthetic(const LayerSpec& spec, Index seq_len, Index head_dim,
                                                  Index heads, Index steps, std::uint64_t seed);

Workload gen_workload(const ExperimentConfig& cfg);

}  // namespace clusterattn::harness
