#include "clusterattn/harness/pca.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace clusterattn::harness {

PcaProjection pca_project(const Tensor& x, Index components, Index max_samples, std::uint64_t seed) {
  if (components < 1 || components > x.cols()) {
    throw ParameterError("pca_project: components must be in [1, " + std::to_string(x.cols()) + "]");
  }
  if (x.rows() < 2) throw ParameterError("pca_project: need at least two tokens");

  PcaProjection p;
  p.rows.resize(static_cast<std::size_t>(x.rows()));
  std::iota(p.rows.begin(), p.rows.end(), Index{0});
  if (x.rows() > max_samples) {
    std::mt19937_64 rng(seed);
    std::shuffle(p.rows.begin(), p.rows.end(), rng);
    p.rows.resize(static_cast<std::size_t>(max_samples));
    std::sort(p.rows.begin(), p.rows.end());
  }

  const Index n = static_cast<Index>(p.rows.size());
  Matrix<double> sample(n, x.cols());
  for (Index i = 0; i < n; ++i) sample.row(i) = x.row(p.rows[i]).cast<double>();
  const RowVector<double> mean = sample.colwise().mean();
  sample.rowwise() -= mean;
  const Eigen::MatrixXd cov = (sample.transpose() * sample) / static_cast<double>(n - 1);

  // Eigenvalues come back ascending; take the last `components`.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Index d = x.cols();
  p.axes.resize(components, d);
  for (Index c = 0; c < components; ++c) {
    p.axes.row(c) = eig.eigenvectors().col(d - 1 - c).transpose();
    p.explained.push_back(eig.eigenvalues()[d - 1 - c]);
  }
  p.coords = sample * p.axes.transpose();
  return p;
}

void write_pca_csv(const std::filesystem::path& path, const PcaProjection& p) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << "token";
  for (Index c = 0; c < p.coords.cols(); ++c) out << ",pc" << (c + 1);
  out << "\n";
  char buf[32];
  for (Index i = 0; i < p.coords.rows(); ++i) {
    out << p.rows[static_cast<std::size_t>(i)];
    for (Index c = 0; c < p.coords.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", p.coords(i, c));
      out << ',' << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError(path.string() + ": write failed");
}

}  // namespace clusterattn::harness
