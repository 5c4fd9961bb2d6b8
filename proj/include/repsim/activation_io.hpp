#pragma once

// Activation datasets on disk: a JSON manifest plus one RSAM binary file per
// (language, layer) slab. Token-granularity datasets carry an extra rank-1
// sidecar with per-sentence token counts.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "repsim/types.hpp"

namespace repsim {

enum class Granularity { pooled, token };

std::string to_string(Granularity g);
Granularity granularity_from_string(const std::string& s);

struct Manifest {
  std::string dataset_name;
  std::vector<std::string> languages;  // BCP-47 codes, order defines matrix order
  std::vector<std::string> layers;
  Index sentence_count = 0;
  std::map<std::string, Index> feature_dims;  // layer -> d
  Granularity granularity = Granularity::pooled;
  // dtype is fixed as float32 and only appears in the serialized form.
};

struct ActivationMatrix {
  std::string language;
  std::string layer;
  StorageMatrix data;  // n x d, row i = sentence i
};

struct TokenActivations {
  std::string language;
  std::string layer;
  std::vector<Index> token_counts;  // t_1..t_n, each >= 1
  StorageMatrix data;               // (sum t_i) x d, sentence rows contiguous
};

struct TokenKey {
  Index sentence = 0;
  Index position = 0;
};

struct FlattenedTokens {
  StorageMatrix data;
  std::vector<TokenKey> keys;
};

// Fully loaded dataset. Exactly one of `pooled` / `token` is populated,
// matching manifest.granularity.
struct ActivationSet {
  Manifest manifest;
  std::vector<ActivationMatrix> pooled;
  std::vector<TokenActivations> token;

  const ActivationMatrix& matrix(const std::string& language, const std::string& layer) const;
  const TokenActivations& tokens(const std::string& language, const std::string& layer) const;
};

void validate(const Manifest& m);
void validate(const ActivationMatrix& m, const Manifest& manifest);
void validate(const TokenActivations& t);

// --- RSAM container -------------------------------------------------------
// 4-byte magic "RSAM", u8 version=1, u8 dtype (0 = float32 LE), u32 rank,
// u64 dims[rank], then the row-major payload. All integers little-endian.

struct RsamHeader {
  std::uint8_t version = 1;
  std::uint8_t dtype = 0;
  std::vector<std::uint64_t> dims;
};

RsamHeader read_rsam_header(const std::filesystem::path& path);
StorageMatrix read_rsam_matrix(const std::filesystem::path& path);
std::vector<float> read_rsam_vector(const std::filesystem::path& path);
void write_rsam(const std::filesystem::path& path, const StorageMatrix& m);
void write_rsam(const std::filesystem::path& path, const std::vector<float>& v);

// --- Dataset access -------------------------------------------------------
// Data files live next to the manifest as "<language>__<layer>.rsam"; token
// datasets add one "<language>.tokens.rsam" per language (token counts are a
// property of the language's sentences, identical across layers).

std::filesystem::path data_file_path(const std::filesystem::path& dir, const std::string& language,
                                     const std::string& layer);
std::filesystem::path token_count_file_path(const std::filesystem::path& dir,
                                            const std::string& language);

class Dataset {
 public:
  const Manifest& manifest() const { return manifest_; }
  const std::filesystem::path& directory() const { return dir_; }

  std::filesystem::path data_path(const std::string& language, const std::string& layer) const;
  std::filesystem::path token_count_path(const std::string& language) const;

  ActivationMatrix load_matrix(const std::string& language, const std::string& layer) const;
  TokenActivations load_tokens(const std::string& language, const std::string& layer) const;
  ActivationSet load_all() const;

 private:
  friend Dataset read_dataset(const std::filesystem::path&);
  std::filesystem::path dir_;
  Manifest manifest_;
  std::map<std::string, std::vector<Index>> token_counts_;  // language -> t_i
};

// Parses and validates the manifest, then checks every referenced file's
// header (magic, version, dtype, shape) without reading payloads.
Dataset read_dataset(const std::filesystem::path& manifest_path);

// Writes manifest JSON plus all data files; read_dataset(write_dataset(x))
// round-trips bit-exactly.
void write_dataset(const ActivationSet& set, const std::filesystem::path& manifest_path);

// --- Pooling and flattening ----------------------------------------------

// Row i = arithmetic mean of sentence i's token rows; summation in token
// order with float64 accumulation, division last.
ActivationMatrix mean_pool(const TokenActivations& tokens);

// Sentence-major, token-order rows with (sentence, position) keys.
FlattenedTokens token_flatten(const TokenActivations& tokens);

}  // namespace repsim
