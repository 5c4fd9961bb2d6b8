#include "repsim/spectral.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

namespace repsim {
namespace {

bool connected(const Matrixd& a) {
  const Index n = a.rows();
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::vector<Index> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    const Index u = stack.back();
    stack.pop_back();
    for (Index v = 0; v < n; ++v)
      if (!seen[static_cast<std::size_t>(v)] && a(u, v) > 0) {
        seen[static_cast<std::size_t>(v)] = true;
        stack.push_back(v);
      }
  }
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

void fix_signs(Matrixd& coords) {
  for (Index c = 0; c < coords.cols(); ++c) {
    Index arg = 0;
    double best = -1;
    for (Index i = 0; i < coords.rows(); ++i) {
      const double mag = std::abs(coords(i, c));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    if (coords(arg, c) < 0) coords.col(c) = -coords.col(c);
  }
}

}  // namespace

AffinityMatrix build_affinity(const SimilarityMatrix& sim, std::optional<Index> knn) {
  const Index L = sim.values.rows();
  require(L >= 2, errc::degenerate_input, "affinity needs at least two nodes");
  require(sim.values.cols() == L && static_cast<Index>(sim.labels.size()) == L,
          errc::shape_mismatch, "similarity matrix is not square over its labels");

  AffinityMatrix aff;
  aff.labels = sim.labels;
  aff.values = sim.values.cwiseMax(0.0).cwiseMin(1.0);
  aff.values.diagonal().setZero();

  if (knn) {
    require(*knn >= 1, errc::invalid_argument, "knn must be positive");
    Matrixd kept = Matrixd::Zero(L, L);
    for (Index i = 0; i < L; ++i) {
      std::vector<Index> order(static_cast<std::size_t>(L));
      std::iota(order.begin(), order.end(), Index{0});
      std::sort(order.begin(), order.end(), [&](Index a, Index b) {
        if (aff.values(i, a) != aff.values(i, b)) return aff.values(i, a) > aff.values(i, b);
        return a < b;
      });
      const Index take = std::min(*knn, L - 1);
      for (Index r = 0; r < take; ++r) kept(i, order[static_cast<std::size_t>(r)]) = aff.values(i, order[static_cast<std::size_t>(r)]);
    }
    aff.values = kept.cwiseMax(kept.transpose());
    aff.values.diagonal().setZero();
  }

  for (Index i = 0; i < L; ++i)
    require((aff.values.row(i).array() > 0).any(), errc::isolated_node,
            "node '" + aff.labels[static_cast<std::size_t>(i)] + "' has no positive affinity");
  return aff;
}

EmbeddingCoordinates laplacian_eigenmap(const AffinityMatrix& aff, Index m) {
  const Index L = aff.values.rows();
  require(m >= 1, errc::invalid_argument, "embedding dimension must be positive");
  require(m <= L - 2, errc::invalid_argument,
          "embedding dimension must leave at least one spare eigenvector (m <= L-2)");
  require(connected(aff.values), errc::disconnected_graph, "affinity graph is disconnected");

  const Vectord degree = aff.values.rowwise().sum();
  const Vectord dinv_sqrt = degree.cwiseSqrt().cwiseInverse();
  Matrixd lsym = Matrixd::Identity(L, L) -
                 dinv_sqrt.asDiagonal() * aff.values * dinv_sqrt.asDiagonal();

  Eigen::SelfAdjointEigenSolver<Matrixd> es(lsym);
  require(es.info() == Eigen::Success, errc::numerical_failure,
          "Laplacian eigendecomposition did not converge");

  EmbeddingCoordinates emb;
  emb.labels = aff.labels;
  // Index 0 is the constant eigenvector (eigenvalue 0); the next m follow.
  emb.eigenvalues = es.eigenvalues().segment(1, m).cwiseMax(0.0).cwiseMin(2.0);
  emb.coords = dinv_sqrt.asDiagonal() * es.eigenvectors().middleCols(1, m);
  fix_signs(emb.coords);
  return emb;
}

std::string to_csv(const EmbeddingCoordinates& emb) {
  std::ostringstream os;
  os << "language";
  for (Index c = 0; c < emb.coords.cols(); ++c) os << ",x" << c + 1;
  os << '\n';
  for (Index i = 0; i < emb.coords.rows(); ++i) {
    os << emb.labels[static_cast<std::size_t>(i)];
    for (Index c = 0; c < emb.coords.cols(); ++c) os << ',' << format_double(emb.coords(i, c));
    os << '\n';
  }
  return os.str();
}

std::string to_json_string(const EmbeddingCoordinates& emb) {
  nlohmann::ordered_json j;
  j["labels"] = emb.labels;
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(emb.coords.rows()));
  for (Index i = 0; i < emb.coords.rows(); ++i)
    for (Index c = 0; c < emb.coords.cols(); ++c)
      rows[static_cast<std::size_t>(i)].push_back(emb.coords(i, c));
  j["coords"] = rows;
  j["eigenvalues"] = std::vector<double>(emb.eigenvalues.begin(), emb.eigenvalues.end());
  return j.dump(2) + "\n";
}

}  // namespace repsim
