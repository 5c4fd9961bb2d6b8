#pragma once

// Laplacian-eigenmap coordinates from a similarity matrix, for cluster plots.

#include <optional>
#include <string>
#include <vector>

#include "repsim/pairwise.hpp"
#include "repsim/types.hpp"

namespace repsim {

struct AffinityMatrix {
  std::vector<std::string> labels;
  Matrixd values;  // symmetric, non-negative, zero diagonal
};

struct EmbeddingCoordinates {
  std::vector<std::string> labels;
  Matrixd coords;       // L x m
  Vectord eigenvalues;  // m smallest nonzero, ascending, in [0, 2]
};

// Clamp to [0,1], zero the diagonal; with knn, keep each row's knn largest
// entries and re-symmetrize by max(a, a^T).
AffinityMatrix build_affinity(const SimilarityMatrix& sim, std::optional<Index> knn = {});

// Symmetric normalized Laplacian, eigenvectors of the m smallest nonzero
// eigenvalues, back-scaled by D^{-1/2}. Sign convention: each coordinate
// column's largest-magnitude entry is positive (ties: lowest index wins).
EmbeddingCoordinates laplacian_eigenmap(const AffinityMatrix& aff, Index m);

std::string to_csv(const EmbeddingCoordinates& emb);
std::string to_json_string(const EmbeddingCoordinates& emb);

}  // namespace repsim
