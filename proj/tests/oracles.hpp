#pragma once

// Independent reference implementations used only by tests. Each one takes a
// different route than the library code it checks.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "repsim/activation_io.hpp"
#include "repsim/types.hpp"

namespace repsim::oracle {

// Canonical correlations via the generalized symmetric eigenproblem
//   [0 Sab; Sba 0] v = rho [Saa 0; 0 Sbb] v
// whose eigenvalues come in +-rho pairs. No whitening, no regularization;
// inputs must be full column rank.
inline Vectord cca_correlations(const Matrixd& a, const Matrixd& b) {
  const Index n = a.rows();
  const Index p = a.cols();
  const Index q = b.cols();
  Matrixd ac = a.rowwise() - a.colwise().mean();
  Matrixd bc = b.rowwise() - b.colwise().mean();
  const double norm = 1.0 / static_cast<double>(n - 1);
  const Matrixd saa = ac.transpose() * ac * norm;
  const Matrixd sbb = bc.transpose() * bc * norm;
  const Matrixd sab = ac.transpose() * bc * norm;

  Matrixd lhs = Matrixd::Zero(p + q, p + q);
  lhs.topRightCorner(p, q) = sab;
  lhs.bottomLeftCorner(q, p) = sab.transpose();
  Matrixd rhs = Matrixd::Zero(p + q, p + q);
  rhs.topLeftCorner(p, p) = saa;
  rhs.bottomRightCorner(q, q) = sbb;

  Eigen::GeneralizedSelfAdjointEigenSolver<Matrixd> es(lhs, rhs);
  const Index k = std::min(p, q);
  Vectord rho(k);
  for (Index i = 0; i < k; ++i) rho[i] = es.eigenvalues()[p + q - 1 - i];  // descending
  return rho;
}

// Cyclic Jacobi eigendecomposition of a small symmetric matrix, ascending.
// Deliberately not Eigen's tridiagonalization path.
inline void jacobi_eig(Matrixd a, Vectord& eigenvalues, Matrixd& eigenvectors) {
  const Index n = a.rows();
  Matrixd v = Matrixd::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-28) break;
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j) {
        if (a(i, j) == 0) continue;
        const double theta = (a(j, j) - a(i, i)) / (2 * a(i, j));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1);
        const double s = t * c;
        Eigen::JacobiRotation<double> rot(c, s);
        a.applyOnTheLeft(i, j, rot.adjoint());
        a.applyOnTheRight(i, j, rot);
        v.applyOnTheRight(i, j, rot);
      }
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](Index x, Index y) { return a(x, x) < a(y, y); });
  eigenvalues.resize(n);
  eigenvectors.resize(n, n);
  for (Index i = 0; i < n; ++i) {
    eigenvalues[i] = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    eigenvectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
}

// Per-sentence mean by scalar column-major loops, double precision.
inline Matrixd mean_pool_reference(const TokenActivations& tokens) {
  const auto n = static_cast<Index>(tokens.token_counts.size());
  const Index d = tokens.data.cols();
  Matrixd out(n, d);
  Index row = 0;
  for (Index i = 0; i < n; ++i) {
    const Index t = tokens.token_counts[static_cast<std::size_t>(i)];
    for (Index c = 0; c < d; ++c) {
      double sum = 0;
      for (Index k = 0; k < t; ++k) sum += static_cast<double>(tokens.data(row + k, c));
      out(i, c) = sum / static_cast<double>(t);
    }
    row += t;
  }
  return out;
}

}  // namespace repsim::oracle
