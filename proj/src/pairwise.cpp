#include "repsim/pairwise.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include "repsim/stats.hpp"

namespace repsim {
namespace {

std::size_t worker_count(std::size_t jobs) {
  std::size_t cap = std::thread::hardware_concurrency();
  if (cap == 0) cap = 1;
  if (const char* env = std::getenv("REPSIM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v > 0) cap = std::min(cap, static_cast<std::size_t>(v));
  }
  return std::max<std::size_t>(1, std::min(cap, jobs));
}

// Runs fn(0..jobs-1) on a small pool. Each job writes only its own slots, so
// output is identical no matter how jobs land on threads. The first failure
// in job order is rethrown after all workers finish.
void parallel_for(std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs == 0) return;
  const std::size_t workers = worker_count(jobs);
  if (workers == 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Matrixd pooled_language_matrix(const ActivationSet& set, const std::string& language,
                               const std::string& layer) {
  if (set.manifest.granularity == Granularity::pooled)
    return set.matrix(language, layer).data.cast<double>();
  return mean_pool(set.tokens(language, layer)).data.cast<double>();
}

struct PairInputs {
  std::vector<TruncatedSubspace<double>> trunc;  // mean_pool strategy
  std::vector<Matrixd> flat;                     // token strategy
};

PairInputs prepare_inputs(const ActivationSet& set, const std::string& layer, Strategy strategy,
                          double tau) {
  const auto& langs = set.manifest.languages;
  PairInputs in;
  if (strategy == Strategy::mean_pool) {
    std::vector<Matrixd> data(langs.size());
    for (std::size_t i = 0; i < langs.size(); ++i)
      data[i] = pooled_language_matrix(set, langs[i], layer);
    for (const auto& m : data)
      require(m.rows() == data.front().rows(), errc::mismatched_rows,
              "languages disagree on sentence count at layer '" + layer + "'");
    in.trunc.resize(langs.size());
    parallel_for(langs.size(), [&](std::size_t i) {
      try {
        in.trunc[i] = svd_truncate(data[i], tau);
      } catch (const Error& e) {
        fail(e.code(), "language '" + langs[i] + "': " + e.what());
      }
    });
  } else {
    require(set.manifest.granularity == Granularity::token, errc::invalid_argument,
            "token strategy needs a token-granularity dataset");
    in.flat.resize(langs.size());
    for (std::size_t i = 0; i < langs.size(); ++i)
      in.flat[i] = token_flatten(set.tokens(langs[i], layer)).data.cast<double>();
  }
  return in;
}

double symmetrized_score(const PairInputs& in, std::size_t i, std::size_t j, Strategy strategy,
                         double tau, double epsilon) {
  if (strategy == Strategy::mean_pool) {
    const double sij = cca(in.trunc[i].projected, in.trunc[j].projected, epsilon).mean_correlation;
    const double sji = cca(in.trunc[j].projected, in.trunc[i].projected, epsilon).mean_correlation;
    return 0.5 * (sij + sji);
  }
  // Unequal token totals: both sides truncated to the common row count.
  const Index rows = std::min(in.flat[i].rows(), in.flat[j].rows());
  const auto a = in.flat[i].topRows(rows);
  const auto b = in.flat[j].topRows(rows);
  const double sij = svcca_score(a, b, tau, epsilon).mean_correlation;
  const double sji = svcca_score(b, a, tau, epsilon).mean_correlation;
  return 0.5 * (sij + sji);
}

}  // namespace

Matrixd language_matrix(const ActivationSet& dataset, const std::string& language,
                        const std::string& layer, Strategy strategy) {
  if (strategy == Strategy::mean_pool) return pooled_language_matrix(dataset, language, layer);
  require(dataset.manifest.granularity == Granularity::token, errc::invalid_argument,
          "token strategy needs a token-granularity dataset");
  return token_flatten(dataset.tokens(language, layer)).data.cast<double>();
}

std::string to_string(Strategy s) { return s == Strategy::mean_pool ? "mean_pool" : "token"; }

Strategy strategy_from_string(const std::string& s) {
  if (s == "mean_pool") return Strategy::mean_pool;
  if (s == "token") return Strategy::token;
  fail(errc::invalid_argument, "unknown strategy '" + s + "'");
}

SimilarityMatrix pairwise_similarity(const ActivationSet& dataset, const std::string& layer,
                                     Strategy strategy, double tau, double epsilon) {
  const auto& langs = dataset.manifest.languages;
  const std::size_t L = langs.size();
  require(L >= 2, errc::degenerate_input, "pairwise similarity needs at least two languages");

  const PairInputs inputs = prepare_inputs(dataset, layer, strategy, tau);

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(L * (L - 1) / 2);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = i + 1; j < L; ++j) pairs.emplace_back(i, j);

  SimilarityMatrix sim;
  sim.labels = langs;
  sim.layer = layer;
  sim.strategy = strategy;
  sim.tau = tau;
  sim.epsilon = epsilon;
  sim.values = Matrixd::Identity(static_cast<Index>(L), static_cast<Index>(L));

  parallel_for(pairs.size(), [&](std::size_t p) {
    const auto [i, j] = pairs[p];
    try {
      const double v = symmetrized_score(inputs, i, j, strategy, tau, epsilon);
      sim.values(static_cast<Index>(i), static_cast<Index>(j)) = v;
      sim.values(static_cast<Index>(j), static_cast<Index>(i)) = v;
    } catch (const Error& e) {
      fail(e.code(), "pair (" + langs[i] + ", " + langs[j] + "): " + e.what());
    }
  });
  return sim;
}

std::vector<LayerSummary> layer_distribution(const ActivationSet& dataset,
                                             const std::vector<std::string>& layers,
                                             Strategy strategy, double tau, double epsilon) {
  require(!layers.empty(), errc::invalid_argument, "no layers requested");
  std::vector<LayerSummary> out;
  out.reserve(layers.size());
  for (const auto& layer : layers) {
    const SimilarityMatrix sim = pairwise_similarity(dataset, layer, strategy, tau, epsilon);
    LayerSummary s;
    s.layer = layer;
    const Index L = sim.values.rows();
    for (Index i = 0; i < L; ++i)
      for (Index j = i + 1; j < L; ++j) s.scores.push_back(sim.values(i, j));
    s.mean = mean(s.scores);
    s.stddev = stddev(s.scores);
    s.min = quantile(s.scores, 0.0);
    s.q25 = quantile(s.scores, 0.25);
    s.median = quantile(s.scores, 0.5);
    s.q75 = quantile(s.scores, 0.75);
    s.max = quantile(s.scores, 1.0);
    s.histogram = histogram(s.scores, 50, 0.0, 1.0);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Neighbor> nearest_neighbors(const SimilarityMatrix& sim, const std::string& language,
                                        Index k) {
  const auto it = std::find(sim.labels.begin(), sim.labels.end(), language);
  require(it != sim.labels.end(), errc::unknown_language,
          "language '" + language + "' not in similarity matrix");
  const auto L = static_cast<Index>(sim.labels.size());
  require(k >= 1, errc::invalid_argument, "k must be positive");
  require(k <= L - 1, errc::k_too_large, "k exceeds the number of other languages");

  const Index row = std::distance(sim.labels.begin(), it);
  std::vector<Neighbor> all;
  all.reserve(static_cast<std::size_t>(L - 1));
  for (Index j = 0; j < L; ++j)
    if (j != row) all.push_back({sim.labels[static_cast<std::size_t>(j)], sim.values(row, j)});
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.language < b.language;
  });
  all.resize(static_cast<std::size_t>(k));
  return all;
}

DriftReport finetune_drift(const ActivationSet& before, const ActivationSet& after,
                           const std::string& layer, double tau, double epsilon) {
  require(before.manifest.languages == after.manifest.languages, errc::mismatched_datasets,
          "before/after language lists differ");
  require(before.manifest.sentence_count == after.manifest.sentence_count,
          errc::mismatched_datasets, "before/after sentence counts differ");

  const auto& langs = before.manifest.languages;
  DriftReport report;
  report.labels = langs;
  report.layer = layer;
  report.drift_scores.resize(langs.size());

  std::vector<Matrixd> xa(langs.size()), xb(langs.size());
  for (std::size_t i = 0; i < langs.size(); ++i) {
    xa[i] = pooled_language_matrix(before, langs[i], layer);
    xb[i] = pooled_language_matrix(after, langs[i], layer);
  }
  parallel_for(langs.size(), [&](std::size_t i) {
    try {
      report.drift_scores[i] = svcca_score(xa[i], xb[i], tau, epsilon).mean_correlation;
    } catch (const Error& e) {
      fail(e.code(), "language '" + langs[i] + "': " + e.what());
    }
  });
  return report;
}

DriftReport correlate_with_metric(DriftReport report, const std::vector<double>& metric) {
  require(metric.size() == report.labels.size(), errc::invalid_argument,
          "metric length differs from language count");
  require(report.labels.size() >= 3, errc::degenerate_input,
          "metric correlation needs at least three languages");
  report.external_metric = metric;
  report.pearson = pearson(report.drift_scores, metric);
  report.spearman = spearman(report.drift_scores, metric);
  return report;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string to_csv(const SimilarityMatrix& sim) {
  std::ostringstream os;
  os << "language";
  for (const auto& l : sim.labels) os << ',' << l;
  os << '\n';
  for (Index i = 0; i < sim.values.rows(); ++i) {
    os << sim.labels[static_cast<std::size_t>(i)];
    for (Index j = 0; j < sim.values.cols(); ++j) os << ',' << format_double(sim.values(i, j));
    os << '\n';
  }
  return os.str();
}

std::string to_json_string(const SimilarityMatrix& sim) {
  nlohmann::ordered_json j;
  j["labels"] = sim.labels;
  j["layer"] = sim.layer;
  j["strategy"] = to_string(sim.strategy);
  j["tau"] = sim.tau;
  j["epsilon"] = sim.epsilon;
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(sim.values.rows()));
  for (Index i = 0; i < sim.values.rows(); ++i)
    for (Index c = 0; c < sim.values.cols(); ++c) rows[static_cast<std::size_t>(i)].push_back(sim.values(i, c));
  j["values"] = rows;
  return j.dump(2) + "\n";
}

SimilarityMatrix similarity_from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(errc::bad_manifest, std::string("similarity JSON: ") + e.what());
  }
  SimilarityMatrix sim;
  try {
    sim.labels = j.at("labels").get<std::vector<std::string>>();
    sim.layer = j.at("layer").get<std::string>();
    sim.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    sim.tau = j.at("tau").get<double>();
    sim.epsilon = j.at("epsilon").get<double>();
    const auto rows = j.at("values").get<std::vector<std::vector<double>>>();
    const auto L = static_cast<Index>(sim.labels.size());
    require(static_cast<Index>(rows.size()) == L, errc::shape_mismatch,
            "similarity JSON: values row count differs from labels");
    sim.values.resize(L, L);
    for (Index i = 0; i < L; ++i) {
      require(static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) == L,
              errc::shape_mismatch, "similarity JSON: values is not square");
      for (Index c = 0; c < L; ++c)
        sim.values(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    }
  } catch (const nlohmann::json::exception& e) {
    fail(errc::bad_manifest, std::string("similarity JSON: ") + e.what());
  }
  require(sim.values.allFinite(), errc::non_finite_data, "similarity JSON: non-finite entries");
  return sim;
}

SimilarityMatrix read_similarity_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(is.good(), errc::missing_file, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return similarity_from_json_string(buffer.str());
}

std::string to_csv(const DriftReport& report) {
  std::ostringstream os;
  os << "language,drift";
  if (report.external_metric) os << ",metric";
  os << '\n';
  for (std::size_t i = 0; i < report.labels.size(); ++i) {
    os << report.labels[i] << ',' << format_double(report.drift_scores[i]);
    if (report.external_metric) os << ',' << format_double((*report.external_metric)[i]);
    os << '\n';
  }
  return os.str();
}

std::string to_json_string(const DriftReport& report) {
  nlohmann::ordered_json j;
  j["labels"] = report.labels;
  j["layer"] = report.layer;
  j["drift_scores"] = report.drift_scores;
  if (report.external_metric) {
    j["external_metric"] = *report.external_metric;
    j["pearson"] = *report.pearson;
    j["spearman"] = *report.spearman;
  }
  return j.dump(2) + "\n";
}

std::string to_csv(const std::vector<LayerSummary>& summaries) {
  std::ostringstream os;
  os << "layer,mean,std,min,q25,median,q75,max\n";
  for (const auto& s : summaries) {
    os << s.layer << ',' << format_double(s.mean) << ',' << format_double(s.stddev) << ','
       << format_double(s.min) << ',' << format_double(s.q25) << ',' << format_double(s.median)
       << ',' << format_double(s.q75) << ',' << format_double(s.max) << '\n';
  }
  return os.str();
}

std::string to_json_string(const std::vector<LayerSummary>& summaries) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& s : summaries) {
    nlohmann::ordered_json j;
    j["layer"] = s.layer;
    j["mean"] = s.mean;
    j["std"] = s.stddev;
    j["min"] = s.min;
    j["q25"] = s.q25;
    j["median"] = s.median;
    j["q75"] = s.q75;
    j["max"] = s.max;
    j["histogram"] = s.histogram;
    j["scores"] = s.scores;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string to_csv(const std::vector<Neighbor>& neighbors) {
  std::ostringstream os;
  os << "rank,language,score\n";
  for (std::size_t i = 0; i < neighbors.size(); ++i)
    os << i + 1 << ',' << neighbors[i].language << ',' << format_double(neighbors[i].score)
       << '\n';
  return os.str();
}

}  // namespace repsim
