#pragma once

// All-pairs similarity across languages at a layer, score distributions,
// nearest-neighbor reports, and before/after drift with external-metric
// correlation.

#include <optional>
#include <string>
#include <vector>

#include "repsim/activation_io.hpp"
#include "repsim/svcca.hpp"
#include "repsim/types.hpp"

namespace repsim {

enum class Strategy { mean_pool, token };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct SimilarityMatrix {
  std::vector<std::string> labels;
  std::string layer;
  Matrixd values;  // L x L, symmetric, unit diagonal, entries in [0,1]
  Strategy strategy = Strategy::mean_pool;
  double tau = kDefaultTau;
  double epsilon = kAutoEpsilon;
};

struct LayerSummary {
  std::string layer;
  std::vector<double> scores;  // strict upper triangle, row-major pair order
  double mean = 0, stddev = 0, min = 0, q25 = 0, median = 0, q75 = 0, max = 0;
  std::vector<std::size_t> histogram;  // 50 bins over [0,1]
};

struct Neighbor {
  std::string language;
  double score = 0;
};

struct DriftReport {
  std::vector<std::string> labels;
  std::string layer;
  std::vector<double> drift_scores;  // per-language before/after mean correlation
  std::optional<std::vector<double>> external_metric;
  std::optional<double> pearson;
  std::optional<double> spearman;
};

// Per-language data matrix for a strategy: pooled sentence rows (pooling
// token data on demand) or flattened token rows.
Matrixd language_matrix(const ActivationSet& dataset, const std::string& language,
                        const std::string& layer, Strategy strategy);

// Symmetrized mean SVCCA scores: values[i][j] = (s(i,j) + s(j,i)) / 2 with
// the diagonal forced to 1. Pairs run concurrently (REPSIM_THREADS caps the
// worker count); a failed pair aborts with the pair named.
SimilarityMatrix pairwise_similarity(const ActivationSet& dataset, const std::string& layer,
                                     Strategy strategy, double tau = kDefaultTau,
                                     double epsilon = kAutoEpsilon);

std::vector<LayerSummary> layer_distribution(const ActivationSet& dataset,
                                             const std::vector<std::string>& layers,
                                             Strategy strategy, double tau = kDefaultTau,
                                             double epsilon = kAutoEpsilon);

// Top-k other languages by similarity, descending; ties broken by label.
std::vector<Neighbor> nearest_neighbors(const SimilarityMatrix& sim, const std::string& language,
                                        Index k);

DriftReport finetune_drift(const ActivationSet& before, const ActivationSet& after,
                           const std::string& layer, double tau = kDefaultTau,
                           double epsilon = kAutoEpsilon);

DriftReport correlate_with_metric(DriftReport report, const std::vector<double>& metric);

// Shortest-digit formatting is not stable across libcs; 17 significant
// digits round-trip any double bit-exactly.
std::string format_double(double v);

std::string to_csv(const SimilarityMatrix& sim);
std::string to_json_string(const SimilarityMatrix& sim);
SimilarityMatrix similarity_from_json_string(const std::string& text);
SimilarityMatrix read_similarity_json(const std::filesystem::path& path);

std::string to_csv(const DriftReport& report);
std::string to_json_string(const DriftReport& report);
std::string to_csv(const std::vector<LayerSummary>& summaries);
std::string to_json_string(const std::vector<LayerSummary>& summaries);
std::string to_csv(const std::vector<Neighbor>& neighbors);

}  // namespace repsim
