#pragma once

// Synthetic multi-way-parallel datasets with planted family structure, plus
// controlled perturbations. Every matrix is drawn from counter-based
// substreams keyed by (seed, role, name), so generation is order-independent
// and bit-reproducible.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "repsim/activation_io.hpp"

namespace repsim {

struct FamilySpec {
  std::vector<std::pair<std::string, std::vector<std::string>>> families;  // id -> members
  Index n = 0;
  Index d = 0;
  Index d_latent = 0;
  double family_weight = 1.0;    // alpha
  double language_weight = 0.2;  // beta
  double noise = 0.05;           // sigma
  std::uint64_t seed = 0;
};

struct GroundTruth {
  std::map<std::string, std::string> family_of;
};

struct SynthResult {
  ActivationSet set;
  GroundTruth truth;
};

inline constexpr const char* kSynthLayer = "enc";

void validate(const FamilySpec& spec);

// Language l in family f gets X_l = Z G0 + alpha F_f G_f + beta W_l H_l +
// sigma E_l: a shared semantic component plus family-level and
// language-level components living in their own latent subspaces. (Mixing a
// single latent Z through per-family matrices, as in Z (alpha G_f + beta
// H_l), puts every language in the same column space and erases the planted
// structure; separate latents keep family geometry recoverable.)
SynthResult generate(const FamilySpec& spec);

// Adds sigma_l-scaled Gaussian noise to each named language across all
// layers; sigma 0 and unnamed languages come back bit-identical.
ActivationSet perturb(const ActivationSet& dataset, const std::map<std::string, double>& levels,
                      std::uint64_t seed);

// Layer stack with a controlled shared-signal fraction per layer, for
// encoder-trend experiments: round(fraction * d_latent) latent dimensions
// are common to all languages, the rest are language-private.
struct StackSpec {
  std::vector<std::string> languages;
  std::vector<double> shared_fractions;  // one per layer, each in [0,1]
  Index n = 0;
  Index d = 0;
  Index d_latent = 0;
  double noise = 0.05;
  std::uint64_t seed = 0;
};

void validate(const StackSpec& spec);
ActivationSet generate_stack(const StackSpec& spec);

std::string to_json_string(const GroundTruth& truth);
GroundTruth ground_truth_from_json_string(const std::string& text);
GroundTruth read_ground_truth_json(const std::filesystem::path& path);

}  // namespace repsim
