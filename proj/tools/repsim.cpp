#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "repsim/activation_io.hpp"
#include "repsim/pairwise.hpp"
#include "repsim/spectral.hpp"
#include "repsim/svcca.hpp"
#include "repsim/synth.hpp"

namespace fs = std::filesystem;
using namespace repsim;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fnv1a_hex(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), errc::missing_file, "cannot open " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  do {
    is.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  } while (is);
  char out[20];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

void write_text(const fs::path& path, const std::string& content) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.good(), errc::missing_file, "cannot create " + path.string());
  os << content;
  require(os.good(), errc::missing_file, "write failed for " + path.string());
}

// Every run leaves a "<out>.meta.json" recording the exact invocation and
// content digests, so any artifact can be reproduced byte for byte.
struct RunMeta {
  std::string subcommand;
  std::vector<std::string> argv;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
};

void add_input(RunMeta& m, const fs::path& p) { m.inputs[p.string()] = fnv1a_hex(p); }
void add_output(RunMeta& m, const fs::path& p) { m.outputs[p.string()] = fnv1a_hex(p); }

void add_dataset_inputs(RunMeta& m, const Dataset& ds, const fs::path& manifest_path) {
  add_input(m, manifest_path);
  const Manifest& man = ds.manifest();
  for (const auto& lang : man.languages) {
    if (man.granularity == Granularity::token) add_input(m, ds.token_count_path(lang));
    for (const auto& layer : man.layers) add_input(m, ds.data_path(lang, layer));
  }
}

void add_dataset_outputs(RunMeta& m, const Manifest& man, const fs::path& manifest_path) {
  add_output(m, manifest_path);
  const fs::path dir = manifest_path.parent_path();
  for (const auto& lang : man.languages) {
    if (man.granularity == Granularity::token) add_output(m, token_count_file_path(dir, lang));
    for (const auto& layer : man.layers) add_output(m, data_file_path(dir, lang, layer));
  }
}

void write_meta(const RunMeta& m, const fs::path& primary_out) {
  nlohmann::ordered_json j;
  j["tool"] = "repsim";
  j["version"] = kVersion;
  j["subcommand"] = m.subcommand;
  j["argv"] = m.argv;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  write_text(primary_out.string() + ".meta.json", j.dump(2) + "\n");
}

ActivationSet load_layers(const Dataset& ds, const std::vector<std::string>& layers) {
  const Manifest& man = ds.manifest();
  for (const auto& layer : layers)
    require(std::find(man.layers.begin(), man.layers.end(), layer) != man.layers.end(),
            errc::unknown_layer, "layer '" + layer + "' not in manifest");
  ActivationSet set;
  set.manifest = man;
  for (const auto& lang : man.languages)
    for (const auto& layer : layers) {
      if (man.granularity == Granularity::pooled)
        set.pooled.push_back(ds.load_matrix(lang, layer));
      else
        set.token.push_back(ds.load_tokens(lang, layer));
    }
  return set;
}

std::map<std::string, double> read_metric_csv(const fs::path& path) {
  std::ifstream is(path);
  require(is.good(), errc::missing_file, "cannot open " + path.string());
  auto strip_cr = [](std::string& s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
  };
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), errc::bad_manifest,
          path.string() + ": empty metric file");
  strip_cr(line);
  require(line == "language,value", errc::bad_manifest,
          path.string() + ": metric header must be 'language,value'");
  std::map<std::string, double> metric;
  while (std::getline(is, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    require(comma != std::string::npos && comma > 0, errc::bad_manifest,
            path.string() + ": malformed metric row '" + line + "'");
    const std::string lang = line.substr(0, comma);
    const std::string value = line.substr(comma + 1);
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    require(end && *end == '\0' && !value.empty(), errc::bad_manifest,
            path.string() + ": non-numeric metric value for '" + lang + "'");
    require(metric.emplace(lang, v).second, errc::bad_manifest,
            path.string() + ": duplicate metric row for '" + lang + "'");
  }
  return metric;
}

std::vector<std::pair<std::string, std::vector<std::string>>> parse_families(
    const std::string& text) {
  std::vector<std::pair<std::string, std::vector<std::string>>> families;
  std::istringstream groups(text);
  std::string group;
  while (std::getline(groups, group, ';')) {
    const auto eq = group.find('=');
    require(eq != std::string::npos && eq > 0 && eq + 1 < group.size(), errc::invalid_argument,
            "family group '" + group + "' must look like id=code,code");
    std::vector<std::string> members;
    std::istringstream codes(group.substr(eq + 1));
    std::string code;
    while (std::getline(codes, code, ',')) {
      require(!code.empty(), errc::invalid_argument, "empty language code in '" + group + "'");
      members.push_back(code);
    }
    families.emplace_back(group.substr(0, eq), std::move(members));
  }
  require(!families.empty(), errc::invalid_argument, "no families given");
  return families;
}

fs::path default_out(const std::string& given, const std::string& stem,
                     const std::string& format) {
  return given.empty() ? fs::path(stem + "." + format) : fs::path(given);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);

  CLI::App app{"representation similarity over activation dumps"};
  app.set_version_flag("--version", std::string("repsim ") + kVersion);
  app.require_subcommand(1);

  struct {
    std::string manifest;
    std::string out = "pooled/manifest.json";
  } pool_opts;
  auto* pool_cmd = app.add_subcommand("pool", "average token activations into sentence rows");
  pool_cmd->add_option("--manifest", pool_opts.manifest, "token-granularity dataset manifest")
      ->required();
  pool_cmd->add_option("--out", pool_opts.out, "output manifest path");
  pool_cmd->callback([&] {
    RunMeta meta{"pool", args, {}, {}};
    const Dataset ds = read_dataset(pool_opts.manifest);
    add_dataset_inputs(meta, ds, pool_opts.manifest);
    require(ds.manifest().granularity == Granularity::token, errc::invalid_argument,
            "pool needs a token-granularity dataset");
    const ActivationSet in = ds.load_all();
    ActivationSet out;
    out.manifest = in.manifest;
    out.manifest.granularity = Granularity::pooled;
    for (const auto& t : in.token) out.pooled.push_back(mean_pool(t));
    write_dataset(out, pool_opts.out);
    add_dataset_outputs(meta, out.manifest, pool_opts.out);
    write_meta(meta, pool_opts.out);
  });

  struct {
    std::string manifest, layer, lang_a, lang_b;
    std::string strategy = "mean_pool";
    double tau = kDefaultTau;
    double epsilon = kAutoEpsilon;
    std::string out = "score.json";
  } score_opts;
  auto* score_cmd = app.add_subcommand("score", "SVCCA score for one language pair");
  score_cmd->add_option("--manifest", score_opts.manifest, "dataset manifest")->required();
  score_cmd->add_option("--layer", score_opts.layer, "layer name")->required();
  score_cmd->add_option("--lang-a", score_opts.lang_a, "first language")->required();
  score_cmd->add_option("--lang-b", score_opts.lang_b, "second language")->required();
  score_cmd->add_option("--strategy", score_opts.strategy, "mean_pool or token")
      ->check(CLI::IsMember({"mean_pool", "token"}));
  score_cmd->add_option("--tau", score_opts.tau, "variance fraction kept by SVD truncation");
  score_cmd->add_option("--epsilon", score_opts.epsilon, "CCA regularization (-1 = auto)");
  score_cmd->add_option("--out", score_opts.out, "result JSON path");
  score_cmd->callback([&] {
    RunMeta meta{"score", args, {}, {}};
    const Dataset ds = read_dataset(score_opts.manifest);
    add_dataset_inputs(meta, ds, score_opts.manifest);
    const Strategy strategy = strategy_from_string(score_opts.strategy);
    const ActivationSet set = load_layers(ds, {score_opts.layer});
    Matrixd a = language_matrix(set, score_opts.lang_a, score_opts.layer, strategy);
    Matrixd b = language_matrix(set, score_opts.lang_b, score_opts.layer, strategy);
    if (strategy == Strategy::token) {
      const Index rows = std::min(a.rows(), b.rows());
      a.conservativeResize(rows, Eigen::NoChange);
      b.conservativeResize(rows, Eigen::NoChange);
    }
    const auto r = svcca_score(a, b, score_opts.tau, score_opts.epsilon);
    std::printf("mean_correlation %.9g\n", r.mean_correlation);

    nlohmann::ordered_json j;
    j["language_a"] = score_opts.lang_a;
    j["language_b"] = score_opts.lang_b;
    j["layer"] = score_opts.layer;
    j["strategy"] = score_opts.strategy;
    j["tau"] = score_opts.tau;
    j["epsilon"] = score_opts.epsilon;
    j["correlations"] = std::vector<double>(r.correlations.begin(), r.correlations.end());
    j["mean_correlation"] = r.mean_correlation;
    j["rank_warning"] = r.rank_warning;
    write_text(score_opts.out, j.dump(2) + "\n");
    add_output(meta, score_opts.out);
    write_meta(meta, score_opts.out);
  });

  struct {
    std::string manifest, layer;
    std::string strategy = "mean_pool";
    double tau = kDefaultTau;
    double epsilon = kAutoEpsilon;
    std::string format = "csv";
    std::string out;
  } pair_opts;
  auto* pair_cmd = app.add_subcommand("pairwise", "all-pairs similarity matrix at a layer");
  pair_cmd->add_option("--manifest", pair_opts.manifest, "dataset manifest")->required();
  pair_cmd->add_option("--layer", pair_opts.layer, "layer name")->required();
  pair_cmd->add_option("--strategy", pair_opts.strategy, "mean_pool or token")
      ->check(CLI::IsMember({"mean_pool", "token"}));
  pair_cmd->add_option("--tau", pair_opts.tau, "variance fraction kept by SVD truncation");
  pair_cmd->add_option("--epsilon", pair_opts.epsilon, "CCA regularization (-1 = auto)");
  pair_cmd->add_option("--format", pair_opts.format, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
  pair_cmd->add_option("--out", pair_opts.out, "output path (default similarity.<format>)");
  pair_cmd->callback([&] {
    RunMeta meta{"pairwise", args, {}, {}};
    const Dataset ds = read_dataset(pair_opts.manifest);
    add_dataset_inputs(meta, ds, pair_opts.manifest);
    const ActivationSet set = load_layers(ds, {pair_opts.layer});
    const SimilarityMatrix sim =
        pairwise_similarity(set, pair_opts.layer, strategy_from_string(pair_opts.strategy),
                            pair_opts.tau, pair_opts.epsilon);
    const fs::path out = default_out(pair_opts.out, "similarity", pair_opts.format);
    write_text(out, pair_opts.format == "csv" ? to_csv(sim) : to_json_string(sim));
    add_output(meta, out);
    write_meta(meta, out);
  });

  struct {
    std::string manifest;
    std::vector<std::string> layers;
    std::string strategy = "mean_pool";
    double tau = kDefaultTau;
    double epsilon = kAutoEpsilon;
    std::string format = "csv";
    std::string out;
  } dist_opts;
  auto* dist_cmd = app.add_subcommand("dist", "per-layer distribution of pairwise scores");
  dist_cmd->add_option("--manifest", dist_opts.manifest, "dataset manifest")->required();
  dist_cmd->add_option("--layers", dist_opts.layers, "layers (default: all)")->delimiter(',');
  dist_cmd->add_option("--strategy", dist_opts.strategy, "mean_pool or token")
      ->check(CLI::IsMember({"mean_pool", "token"}));
  dist_cmd->add_option("--tau", dist_opts.tau, "variance fraction kept by SVD truncation");
  dist_cmd->add_option("--epsilon", dist_opts.epsilon, "CCA regularization (-1 = auto)");
  dist_cmd->add_option("--format", dist_opts.format, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
  dist_cmd->add_option("--out", dist_opts.out, "output path (default dist.<format>)");
  dist_cmd->callback([&] {
    RunMeta meta{"dist", args, {}, {}};
    const Dataset ds = read_dataset(dist_opts.manifest);
    add_dataset_inputs(meta, ds, dist_opts.manifest);
    const std::vector<std::string> layers =
        dist_opts.layers.empty() ? ds.manifest().layers : dist_opts.layers;
    const ActivationSet set = load_layers(ds, layers);
    const auto summaries = layer_distribution(set, layers, strategy_from_string(dist_opts.strategy),
                                              dist_opts.tau, dist_opts.epsilon);
    const fs::path out = default_out(dist_opts.out, "dist", dist_opts.format);
    write_text(out, dist_opts.format == "csv" ? to_csv(summaries) : to_json_string(summaries));
    add_output(meta, out);
    write_meta(meta, out);
  });

  struct {
    std::string similarity, language;
    Index k = 0;  // 0 = all other languages
    std::string out = "neighbors.csv";
  } nb_opts;
  auto* nb_cmd = app.add_subcommand("neighbors", "languages ranked by similarity");
  nb_cmd->add_option("--similarity", nb_opts.similarity, "similarity JSON from 'pairwise'")
      ->required();
  nb_cmd->add_option("--language", nb_opts.language, "query language")->required();
  nb_cmd->add_option("--k", nb_opts.k, "neighbor count (default: all others)");
  nb_cmd->add_option("--out", nb_opts.out, "output CSV path");
  nb_cmd->callback([&] {
    RunMeta meta{"neighbors", args, {}, {}};
    add_input(meta, nb_opts.similarity);
    const SimilarityMatrix sim = read_similarity_json(nb_opts.similarity);
    const Index k =
        nb_opts.k == 0 ? static_cast<Index>(sim.labels.size()) - 1 : nb_opts.k;
    const auto neighbors = nearest_neighbors(sim, nb_opts.language, k);
    for (std::size_t i = 0; i < neighbors.size(); ++i)
      std::printf("%zu %s %.9g\n", i + 1, neighbors[i].language.c_str(), neighbors[i].score);
    write_text(nb_opts.out, to_csv(neighbors));
    add_output(meta, nb_opts.out);
    write_meta(meta, nb_opts.out);
  });

  struct {
    std::string similarity;
    Index dim = 2;
    Index knn = 0;  // 0 = dense affinity
    std::string format = "csv";
    std::string out;
  } embed_opts;
  auto* embed_cmd = app.add_subcommand("embed", "Laplacian-eigenmap coordinates");
  embed_cmd->add_option("--similarity", embed_opts.similarity, "similarity JSON from 'pairwise'")
      ->required();
  embed_cmd->add_option("--dim", embed_opts.dim, "embedding dimension");
  embed_cmd->add_option("--knn", embed_opts.knn, "keep only each row's knn strongest edges");
  embed_cmd->add_option("--format", embed_opts.format, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
  embed_cmd->add_option("--out", embed_opts.out, "output path (default embedding.<format>)");
  embed_cmd->callback([&] {
    RunMeta meta{"embed", args, {}, {}};
    add_input(meta, embed_opts.similarity);
    const SimilarityMatrix sim = read_similarity_json(embed_opts.similarity);
    const std::optional<Index> knn =
        embed_opts.knn == 0 ? std::nullopt : std::optional<Index>(embed_opts.knn);
    const EmbeddingCoordinates emb = laplacian_eigenmap(build_affinity(sim, knn), embed_opts.dim);
    const fs::path out = default_out(embed_opts.out, "embedding", embed_opts.format);
    write_text(out, embed_opts.format == "csv" ? to_csv(emb) : to_json_string(emb));
    add_output(meta, out);
    write_meta(meta, out);
  });

  struct {
    std::string before, after, layer, metric;
    double tau = kDefaultTau;
    double epsilon = kAutoEpsilon;
    std::string format = "csv";
    std::string out;
  } drift_opts;
  auto* drift_cmd = app.add_subcommand("drift", "per-language before/after similarity");
  drift_cmd->add_option("--before", drift_opts.before, "manifest of the earlier snapshot")
      ->required();
  drift_cmd->add_option("--after", drift_opts.after, "manifest of the later snapshot")->required();
  drift_cmd->add_option("--layer", drift_opts.layer, "layer name")->required();
  drift_cmd->add_option("--metric", drift_opts.metric,
                        "CSV 'language,value' to correlate with drift");
  drift_cmd->add_option("--tau", drift_opts.tau, "variance fraction kept by SVD truncation");
  drift_cmd->add_option("--epsilon", drift_opts.epsilon, "CCA regularization (-1 = auto)");
  drift_cmd->add_option("--format", drift_opts.format, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
  drift_cmd->add_option("--out", drift_opts.out, "output path (default drift.<format>)");
  drift_cmd->callback([&] {
    RunMeta meta{"drift", args, {}, {}};
    const Dataset before_ds = read_dataset(drift_opts.before);
    const Dataset after_ds = read_dataset(drift_opts.after);
    add_dataset_inputs(meta, before_ds, drift_opts.before);
    add_dataset_inputs(meta, after_ds, drift_opts.after);
    const ActivationSet before = load_layers(before_ds, {drift_opts.layer});
    const ActivationSet after = load_layers(after_ds, {drift_opts.layer});
    DriftReport report =
        finetune_drift(before, after, drift_opts.layer, drift_opts.tau, drift_opts.epsilon);
    if (!drift_opts.metric.empty()) {
      add_input(meta, drift_opts.metric);
      const auto by_language = read_metric_csv(drift_opts.metric);
      for (const auto& [lang, value] : by_language)
        require(std::find(report.labels.begin(), report.labels.end(), lang) !=
                    report.labels.end(),
                errc::mismatched_datasets, "metric lists unknown language '" + lang + "'");
      std::vector<double> metric;
      for (const auto& lang : report.labels) {
        const auto it = by_language.find(lang);
        require(it != by_language.end(), errc::mismatched_datasets,
                "metric missing language '" + lang + "'");
        metric.push_back(it->second);
      }
      report = correlate_with_metric(std::move(report), metric);
    }
    const fs::path out = default_out(drift_opts.out, "drift", drift_opts.format);
    write_text(out, drift_opts.format == "csv" ? to_csv(report) : to_json_string(report));
    add_output(meta, out);
    write_meta(meta, out);
  });

  struct {
    std::string families;
    std::vector<double> stack_fractions;
    std::vector<std::string> languages;
    Index n = 500, d = 32, d_latent = 8;
    double alpha = 1.0, beta = 0.2, sigma = 0.05;
    std::uint64_t seed = 0;
    std::string out = "synth/manifest.json";
  } synth_opts;
  auto* synth_cmd = app.add_subcommand("synth", "synthetic dataset with planted families");
  synth_cmd->add_option("--families", synth_opts.families,
                        "family groups, e.g. 'romance=fr,es,it;germanic=en,de'");
  synth_cmd->add_option("--stack-fractions", synth_opts.stack_fractions,
                        "per-layer shared-signal fractions (stack mode)")
      ->delimiter(',');
  synth_cmd->add_option("--languages", synth_opts.languages, "languages for stack mode")
      ->delimiter(',');
  synth_cmd->add_option("--n", synth_opts.n, "sentence count");
  synth_cmd->add_option("--d", synth_opts.d, "feature dimension");
  synth_cmd->add_option("--d-latent", synth_opts.d_latent, "latent dimension");
  synth_cmd->add_option("--alpha", synth_opts.alpha, "family weight");
  synth_cmd->add_option("--beta", synth_opts.beta, "language weight");
  synth_cmd->add_option("--sigma", synth_opts.sigma, "noise scale");
  synth_cmd->add_option("--seed", synth_opts.seed, "generator seed");
  synth_cmd->add_option("--out", synth_opts.out, "output manifest path");
  synth_cmd->callback([&] {
    RunMeta meta{"synth", args, {}, {}};
    const bool family_mode = !synth_opts.families.empty();
    const bool stack_mode = !synth_opts.stack_fractions.empty();
    require(family_mode != stack_mode, errc::invalid_argument,
            "give exactly one of --families or --stack-fractions");
    if (family_mode) {
      FamilySpec spec;
      spec.families = parse_families(synth_opts.families);
      spec.n = synth_opts.n;
      spec.d = synth_opts.d;
      spec.d_latent = synth_opts.d_latent;
      spec.family_weight = synth_opts.alpha;
      spec.language_weight = synth_opts.beta;
      spec.noise = synth_opts.sigma;
      spec.seed = synth_opts.seed;
      const SynthResult result = generate(spec);
      write_dataset(result.set, synth_opts.out);
      const fs::path truth_path = fs::path(synth_opts.out).parent_path() / "truth.json";
      write_text(truth_path, to_json_string(result.truth));
      add_dataset_outputs(meta, result.set.manifest, synth_opts.out);
      add_output(meta, truth_path);
    } else {
      StackSpec spec;
      spec.languages = synth_opts.languages;
      spec.shared_fractions = synth_opts.stack_fractions;
      spec.n = synth_opts.n;
      spec.d = synth_opts.d;
      spec.d_latent = synth_opts.d_latent;
      spec.noise = synth_opts.sigma;
      spec.seed = synth_opts.seed;
      const ActivationSet set = generate_stack(spec);
      write_dataset(set, synth_opts.out);
      add_dataset_outputs(meta, set.manifest, synth_opts.out);
    }
    write_meta(meta, synth_opts.out);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.code()) {
      case errc::numerical_failure:
        return 3;
      case errc::invalid_argument:
        return 1;
      default:
        return 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
