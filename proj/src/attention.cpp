#include "clusterattn/attention.hpp"

namespace clusterattn {

ErrorMetrics compare_outputs(const Tensor& reference, const Tensor& approx) {
  if (reference.rows() != approx.rows() || reference.cols() != approx.cols()) {
    throw DimensionError("compare_outputs: reference is " + shape_string(reference) + " but approx is " +
                         shape_string(approx));
  }
  const Eigen::MatrixXd ref = reference.cast<double>();
  const Eigen::MatrixXd diff = ref - approx.cast<double>();
  const double ref_sq = ref.squaredNorm();
  const double diff_sq = diff.squaredNorm();
  constexpr double inf = std::numeric_limits<double>::infinity();

  ErrorMetrics m;
  if (ref_sq > 0.0) {
    m.rel_l2 = std::sqrt(diff_sq / ref_sq);
  } else {
    m.rel_l2 = diff_sq > 0.0 ? inf : 0.0;
  }
  m.snr_db = diff_sq > 0.0 ? 10.0 * std::log10(ref_sq / diff_sq) : inf;
  m.max_abs = diff.size() ? diff.cwiseAbs().maxCoeff() : 0.0;

  double cos_sum = 0.0;
  for (Index i = 0; i < ref.rows(); ++i) {
    const double na = ref.row(i).norm();
    const double nb = approx.row(i).cast<double>().norm();
    if (na == 0.0 && nb == 0.0) {
      cos_sum += 1.0;
    } else if (na > 0.0 && nb > 0.0) {
      const double c = ref.row(i).dot(approx.row(i).cast<double>()) / (na * nb);
      cos_sum += std::clamp(c, -1.0, 1.0);
    }
  }
  m.cosine_sim = ref.rows() ? cos_sum / static_cast<double>(ref.rows()) : 1.0;
  return m;
}

}  // namespace clusterattn
