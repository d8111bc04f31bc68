#pragma once

// Dense row-major matrices and the handful of kernels the rest of the
// library is built on. Everything is templated on the scalar type; the
// library itself instantiates float.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "clusterattn/errors.hpp"

namespace clusterattn {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// A view over any row-major matrix block with contiguous rows.
template <typename Scalar>
using MatrixRef = Eigen::Ref<const Matrix<Scalar>>;

using Tensor = Matrix<float>;

inline std::string shape_string(Index rows, Index cols) {
  return "[" + std::to_string(rows) + "," + std::to_string(cols) + "]";
}

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m) {
  return shape_string(m.rows(), m.cols());
}

// c = a * b. Single-threaded Eigen GEMM: for a given build and operand shape
// each output element is reduced in the same order on every call, so results
// are bit-reproducible run to run.
template <typename DerivedA, typename DerivedB>
Matrix<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                         const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, a is " + shape_string(a) +
                         " and b is " + shape_string(b));
  }
  Matrix<typename DerivedA::Scalar> c(a.rows(), b.cols());
  c.noalias() = a * b;
  return c;
}

// In-place variant used by the attention kernels: rows of s become
// softmax(scale * s) with row-max subtraction.
template <typename Derived>
void row_softmax_inplace(Eigen::MatrixBase<Derived>& s, typename Derived::Scalar scale) {
  using Scalar = typename Derived::Scalar;
  for (Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    row *= scale;
    const Scalar peak = row.maxCoeff();
    row.array() = (row.array() - peak).exp();
    row /= row.sum();
  }
}

template <typename Derived>
Matrix<typename Derived::Scalar> row_softmax(const Eigen::MatrixBase<Derived>& s,
                                             typename Derived::Scalar scale) {
  Matrix<typename Derived::Scalar> out = s;
  row_softmax_inplace(out, scale);
  return out;
}

template <typename Scalar>
struct NormalizedRows {
  Matrix<Scalar> rows;
  // Rows whose norm fell below the degeneracy threshold; returned as zeros.
  std::vector<Index> degenerate;
};

// Rows with norm below this are treated as zero vectors.
inline constexpr double kDegenerateNorm = 1e-12;
// Rows already this close to unit norm are passed through untouched, which
// makes normalization bit-exactly idempotent.
inline constexpr double kUnitNormSlack = 1e-6;

template <typename Derived>
NormalizedRows<typename Derived::Scalar> l2_normalize_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  NormalizedRows<Scalar> out{Matrix<Scalar>(x.rows(), x.cols()), {}};
  for (Index i = 0; i < x.rows(); ++i) {
    const double norm = std::sqrt(x.row(i).template cast<double>().squaredNorm());
    if (norm < kDegenerateNorm) {
      out.rows.row(i).setZero();
      out.degenerate.push_back(i);
    } else if (std::abs(norm - 1.0) <= kUnitNormSlack) {
      out.rows.row(i) = x.row(i);
    } else {
      out.rows.row(i) = (x.row(i).template cast<double>() / norm).template cast<Scalar>();
    }
  }
  return out;
}

}  // namespace clusterattn
