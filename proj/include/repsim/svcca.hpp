#pragma once

// SVCCA core: variance-thresholded SVD truncation followed by regularized
// CCA, summarized by the mean canonical correlation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "repsim/types.hpp"

namespace repsim {

// Sentinel: resolve epsilon per side as 1e-10 * trace(cov) / dim.
inline constexpr double kAutoEpsilon = -1.0;
inline constexpr double kDefaultTau = 0.99;

template <typename Scalar>
struct TruncatedSubspace {
  Matrix<Scalar> projected;   // n x kept_dim, centered data in the top singular directions
  Scalar retained_variance{}; // fraction of squared-singular-value energy kept
  Index original_dim{};
  Index kept_dim{};
};

template <typename Scalar>
struct CcaResult {
  Vector<Scalar> correlations;  // descending, clipped to [0,1]
  Matrix<Scalar> map_a;         // p x k
  Matrix<Scalar> map_b;         // q x k
  Scalar mean_correlation{};
  bool rank_warning = false;    // n-1 < p+q: correlations inflated by overfitting
};

// Smallest k with cumulative energy >= tau * total, skipping exact zeros and
// extending through ties at the boundary. Singular values must be descending.
template <typename Scalar>
Index truncation_rank(const Vector<Scalar>& singular_values, double tau) {
  require(tau > 0.0 && tau <= 1.0, errc::invalid_argument, "variance fraction outside (0,1]");
  Index positive = 0;
  while (positive < singular_values.size() && singular_values[positive] > Scalar(0)) ++positive;
  require(positive > 0, errc::degenerate_input, "no positive singular values");

  std::vector<Scalar> cum(static_cast<std::size_t>(positive));
  Scalar running = 0;
  for (Index i = 0; i < positive; ++i) {
    running += singular_values[i] * singular_values[i];
    cum[static_cast<std::size_t>(i)] = running;
  }
  const Scalar target = static_cast<Scalar>(tau) * cum.back();

  Index k = 1;
  while (k < positive && cum[static_cast<std::size_t>(k - 1)] < target) ++k;
  while (k < positive && singular_values[k] == singular_values[k - 1]) ++k;
  return k;
}

template <typename Derived>
Matrix<typename Derived::Scalar> center_columns(const Eigen::MatrixBase<Derived>& m) {
  Matrix<typename Derived::Scalar> out = m;
  out.rowwise() -= m.colwise().mean();
  return out;
}

template <typename Derived>
TruncatedSubspace<typename Derived::Scalar> svd_truncate(const Eigen::MatrixBase<Derived>& m,
                                                         double tau) {
  using Scalar = typename Derived::Scalar;
  require(m.rows() >= 2, errc::degenerate_input, "svd_truncate needs at least two rows");
  require(m.allFinite(), errc::non_finite_data, "svd_truncate input has NaN or Inf");

  const Matrix<Scalar> centered = center_columns(m);
  Eigen::BDCSVD<Matrix<Scalar>> svd(centered, Eigen::ComputeThinU);
  require(svd.info() == Eigen::Success, errc::numerical_failure, "SVD did not converge");

  const Vector<Scalar>& s = svd.singularValues();
  const Index k = truncation_rank(s, tau);

  // Same left-to-right accumulation as truncation_rank, so the reported
  // fraction is consistent with the cut that was made.
  Scalar kept = 0, total = 0;
  for (Index i = 0; i < s.size(); ++i) {
    total += s[i] * s[i];
    if (i + 1 == k) kept = total;
  }

  TruncatedSubspace<Scalar> out;
  out.projected = svd.matrixU().leftCols(k) * s.head(k).asDiagonal();
  out.original_dim = m.cols();
  out.kept_dim = k;
  out.retained_variance = kept / total;
  return out;
}

namespace detail {

// V diag(max(lambda, eps))^{-1/2} V^T of a symmetric positive semidefinite matrix.
template <typename Scalar>
Matrix<Scalar> inverse_sqrt(const Matrix<Scalar>& sym, Scalar eps) {
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(sym);
  require(es.info() == Eigen::Success, errc::numerical_failure,
          "covariance eigendecomposition did not converge");
  const Vector<Scalar> floored = es.eigenvalues().cwiseMax(eps);
  return es.eigenvectors() * floored.cwiseSqrt().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

template <typename Scalar>
Scalar resolve_epsilon(Scalar requested, const Matrix<Scalar>& cov) {
  if (requested != static_cast<Scalar>(kAutoEpsilon)) return requested;
  return Scalar(1e-10) * cov.trace() / static_cast<Scalar>(cov.cols());
}

}  // namespace detail

template <typename DerivedA, typename DerivedB>
CcaResult<typename DerivedA::Scalar> cca(const Eigen::MatrixBase<DerivedA>& a,
                                         const Eigen::MatrixBase<DerivedB>& b,
                                         typename DerivedA::Scalar epsilon =
                                             typename DerivedA::Scalar(kAutoEpsilon)) {
  using Scalar = typename DerivedA::Scalar;
  const Index n = a.rows();
  require(b.rows() == n, errc::mismatched_rows, "cca inputs differ in row count");
  require(n >= 2, errc::degenerate_input, "cca needs at least two rows");

  const Index p = a.cols();
  const Index q = b.cols();
  const Matrix<Scalar> ac = center_columns(a);
  const Matrix<Scalar> bc = center_columns(b);

  const Scalar norm = Scalar(1) / static_cast<Scalar>(n - 1);
  Matrix<Scalar> saa = ac.transpose() * ac * norm;
  Matrix<Scalar> sbb = bc.transpose() * bc * norm;
  const Matrix<Scalar> sab = ac.transpose() * bc * norm;

  const Scalar eps_a = detail::resolve_epsilon(epsilon, saa);
  const Scalar eps_b = detail::resolve_epsilon(epsilon, sbb);
  saa.diagonal().array() += eps_a;
  sbb.diagonal().array() += eps_b;

  const Matrix<Scalar> isqrt_a = detail::inverse_sqrt(saa, eps_a);
  const Matrix<Scalar> isqrt_b = detail::inverse_sqrt(sbb, eps_b);
  const Matrix<Scalar> t = isqrt_a * sab * isqrt_b;
  require(t.allFinite(), errc::numerical_failure, "whitened cross-covariance is not finite");

  Eigen::BDCSVD<Matrix<Scalar>> svd(t, Eigen::ComputeThinU | Eigen::ComputeThinV);
  require(svd.info() == Eigen::Success, errc::numerical_failure,
          "CCA correlation SVD did not converge");

  CcaResult<Scalar> out;
  out.correlations = svd.singularValues().cwiseMin(Scalar(1)).cwiseMax(Scalar(0));
  out.map_a = isqrt_a * svd.matrixU();
  out.map_b = isqrt_b * svd.matrixV();
  out.mean_correlation = out.correlations.mean();
  out.rank_warning = n - 1 < p + q;
  return out;
}

template <typename DerivedA, typename DerivedB>
CcaResult<typename DerivedA::Scalar> svcca_score(const Eigen::MatrixBase<DerivedA>& a,
                                                 const Eigen::MatrixBase<DerivedB>& b,
                                                 double tau = kDefaultTau,
                                                 typename DerivedA::Scalar epsilon =
                                                     typename DerivedA::Scalar(kAutoEpsilon)) {
  require(a.rows() == b.rows(), errc::mismatched_rows, "svcca_score inputs differ in row count");
  const auto ta = svd_truncate(a, tau);
  const auto tb = svd_truncate(b, tau);
  return cca(ta.projected, tb.projected, epsilon);
}

}  // namespace repsim
