#include "repsim/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "repsim/rng.hpp"

namespace repsim {
namespace {

Manifest synth_manifest(const std::string& name, const std::vector<std::string>& languages,
                        const std::vector<std::string>& layers, Index n, Index d) {
  Manifest m;
  m.dataset_name = name;
  m.languages = languages;
  m.layers = layers;
  m.sentence_count = n;
  for (const auto& layer : layers) m.feature_dims[layer] = d;
  m.granularity = Granularity::pooled;
  return m;
}

}  // namespace

void validate(const FamilySpec& spec) {
  require(!spec.families.empty(), errc::invalid_spec, "spec lists no families");
  std::set<std::string> langs;
  std::set<std::string> ids;
  for (const auto& [id, members] : spec.families) {
    require(!id.empty(), errc::invalid_spec, "empty family id");
    require(ids.insert(id).second, errc::invalid_spec, "duplicate family id '" + id + "'");
    require(!members.empty(), errc::invalid_spec, "family '" + id + "' has no languages");
    for (const auto& l : members)
      require(!l.empty() && langs.insert(l).second, errc::invalid_spec,
              "language code '" + l + "' empty or repeated");
  }
  require(spec.n >= 2, errc::invalid_spec, "n must be at least 2");
  require(spec.d >= 1, errc::invalid_spec, "d must be positive");
  require(spec.d_latent >= 1 && spec.d_latent <= spec.d, errc::invalid_spec,
          "d_latent must be in [1, d]");
  require(spec.family_weight >= 0 && spec.language_weight >= 0 && spec.noise >= 0,
          errc::invalid_spec, "weights and noise must be non-negative");
}

SynthResult generate(const FamilySpec& spec) {
  validate(spec);

  const Matrixd shared = RandomStream(spec.seed, "Z").gaussian(spec.n, spec.d_latent) *
                         RandomStream(spec.seed, "G0").gaussian(spec.d_latent, spec.d);

  SynthResult out;
  std::vector<std::string> languages;
  for (const auto& [id, members] : spec.families)
    for (const auto& l : members) {
      languages.push_back(l);
      out.truth.family_of[l] = id;
    }
  out.set.manifest = synth_manifest("synthetic", languages, {kSynthLayer}, spec.n, spec.d);

  for (const auto& [id, members] : spec.families) {
    const Matrixd family = RandomStream(spec.seed, "F:" + id).gaussian(spec.n, spec.d_latent) *
                           RandomStream(spec.seed, "G:" + id).gaussian(spec.d_latent, spec.d);
    for (const auto& l : members) {
      Matrixd x = shared + spec.family_weight * family;
      x += spec.language_weight *
           (RandomStream(spec.seed, "W:" + l).gaussian(spec.n, spec.d_latent) *
            RandomStream(spec.seed, "H:" + l).gaussian(spec.d_latent, spec.d));
      if (spec.noise > 0)
        x += spec.noise * RandomStream(spec.seed, "E:" + l).gaussian(spec.n, spec.d);
      out.set.pooled.push_back({l, kSynthLayer, x.cast<float>()});
    }
  }
  return out;
}

ActivationSet perturb(const ActivationSet& dataset, const std::map<std::string, double>& levels,
                      std::uint64_t seed) {
  const auto& langs = dataset.manifest.languages;
  for (const auto& [l, sigma] : levels) {
    require(std::find(langs.begin(), langs.end(), l) != langs.end(), errc::unknown_language,
            "perturb: language '" + l + "' not in dataset");
    require(sigma >= 0, errc::invalid_spec, "perturb: negative noise for '" + l + "'");
  }
  require(dataset.manifest.granularity == Granularity::pooled, errc::invalid_argument,
          "perturb expects a pooled dataset");

  ActivationSet out = dataset;
  for (auto& m : out.pooled) {
    const auto it = levels.find(m.language);
    if (it == levels.end() || it->second == 0) continue;  // bit-exact copy
    const Matrixd noise =
        RandomStream(seed, "perturb:" + m.language + ":" + m.layer).gaussian(m.data.rows(),
                                                                             m.data.cols());
    m.data = (m.data.cast<double>() + it->second * noise).cast<float>();
  }
  return out;
}

void validate(const StackSpec& spec) {
  require(spec.languages.size() >= 2, errc::invalid_spec, "stack needs at least two languages");
  std::set<std::string> langs(spec.languages.begin(), spec.languages.end());
  require(langs.size() == spec.languages.size(), errc::invalid_spec, "duplicate language code");
  require(!spec.shared_fractions.empty(), errc::invalid_spec, "stack lists no layers");
  for (double f : spec.shared_fractions)
    require(f >= 0.0 && f <= 1.0, errc::invalid_spec, "shared fraction outside [0,1]");
  require(spec.n >= 2, errc::invalid_spec, "n must be at least 2");
  require(spec.d >= 1, errc::invalid_spec, "d must be positive");
  require(spec.d_latent >= 1 && spec.d_latent <= spec.d, errc::invalid_spec,
          "d_latent must be in [1, d]");
  require(spec.noise >= 0, errc::invalid_spec, "noise must be non-negative");
}

ActivationSet generate_stack(const StackSpec& spec) {
  validate(spec);

  std::vector<std::string> layers;
  for (std::size_t k = 0; k < spec.shared_fractions.size(); ++k)
    layers.push_back("layer" + std::to_string(k));

  ActivationSet out;
  out.manifest = synth_manifest("synthetic-stack", spec.languages, layers, spec.n, spec.d);

  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& layer = layers[k];
    const auto shared_dims =
        static_cast<Index>(std::lround(spec.shared_fractions[k] * static_cast<double>(spec.d_latent)));
    const Index private_dims = spec.d_latent - shared_dims;
    const Matrixd shared =
        RandomStream(spec.seed, "stack:Z:" + layer).gaussian(spec.n, shared_dims);
    for (const auto& l : spec.languages) {
      Matrixd latent(spec.n, spec.d_latent);
      latent.leftCols(shared_dims) = shared;
      latent.rightCols(private_dims) =
          RandomStream(spec.seed, "stack:P:" + layer + ":" + l).gaussian(spec.n, private_dims);
      Matrixd x = latent * RandomStream(spec.seed, "stack:M:" + layer + ":" + l)
                               .gaussian(spec.d_latent, spec.d);
      if (spec.noise > 0)
        x += spec.noise *
             RandomStream(spec.seed, "stack:E:" + layer + ":" + l).gaussian(spec.n, spec.d);
      out.pooled.push_back({l, layer, x.cast<float>()});
    }
  }
  return out;
}

std::string to_json_string(const GroundTruth& truth) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [lang, family] : truth.family_of) j[lang] = family;
  return j.dump(2) + "\n";
}

GroundTruth ground_truth_from_json_string(const std::string& text) {
  GroundTruth truth;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [lang, family] : j.items()) truth.family_of[lang] = family.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(errc::bad_manifest, std::string("ground-truth JSON: ") + e.what());
  }
  return truth;
}

GroundTruth read_ground_truth_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(is.good(), errc::missing_file, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return ground_truth_from_json_string(buffer.str());
}

}  // namespace repsim
