#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "clusterattn/tensor.hpp"

namespace clusterattn::harness {

struct PcaProjection {
  std::vector<Index> rows;          // sampled token indices, ascending
  Matrix<double> coords;            // [rows, components]
  Matrix<double> axes;              // [components, D], unit principal directions
  std::vector<double> explained;    // variance along each axis
};

// Projects up to `max_samples` tokens (sampled without replacement) onto the
// leading principal axes of their covariance.
PcaProjection pca_project(const Tensor& x, Index components = 2, Index max_samples = 4096,
                          std::uint64_t seed = 0);

// CSV with columns token,pc1,pc2,...
void write_pca_csv(const std::filesystem::path& path, const PcaProjection& p);

}  // namespace clusterattn::harness
