#include "repsim/activation_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

static_assert(std::endian::native == std::endian::little,
              "RSAM payloads are written by direct buffer copy and need a little-endian host");
static_assert(sizeof(float) == 4, "RSAM dtype 0 is 32-bit IEEE float");

namespace repsim {
namespace {

constexpr char kMagic[4] = {'R', 'S', 'A', 'M'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeFloat32 = 0;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 40;
constexpr double kMaxExactTokenCount = 16777216.0;  // 2^24, exact in float32

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), errc::missing_file, "cannot open " + path.string());
  return is;
}

RsamHeader read_header_stream(std::istream& is, const std::string& name) {
  char magic[4];
  is.read(magic, 4);
  require(is.good() && std::equal(magic, magic + 4, kMagic), errc::bad_magic,
          name + ": not an RSAM file");
  char vb, db;
  is.get(vb);
  is.get(db);
  RsamHeader h;
  h.version = static_cast<std::uint8_t>(vb);
  h.dtype = static_cast<std::uint8_t>(db);
  require(is.good() && h.version == kVersion, errc::bad_magic,
          name + ": unsupported RSAM version");
  require(h.dtype == kDtypeFloat32, errc::bad_magic, name + ": unsupported dtype code");
  const std::uint32_t rank = get_u32(is);
  require(is.good() && rank >= 1 && rank <= 8, errc::bad_magic, name + ": implausible rank");
  h.dims.resize(rank);
  for (auto& d : h.dims) d = get_u64(is);
  require(is.good(), errc::bad_magic, name + ": truncated header");
  std::uint64_t elems = 1;
  for (auto d : h.dims) {
    require(d > 0 && elems <= kMaxElements / std::max<std::uint64_t>(d, 1), errc::shape_mismatch,
            name + ": implausible dimensions");
    elems *= d;
  }
  return h;
}

std::uint64_t element_count(const RsamHeader& h) {
  return std::accumulate(h.dims.begin(), h.dims.end(), std::uint64_t{1},
                         std::multiplies<std::uint64_t>());
}

void check_payload_size(const std::filesystem::path& path, const RsamHeader& h) {
  const auto file_size = std::filesystem::file_size(path);
  const std::uint64_t header = 4 + 1 + 1 + 4 + 8 * h.dims.size();
  require(file_size == header + 4 * element_count(h), errc::shape_mismatch,
          path.string() + ": file size disagrees with header dimensions");
}

void write_header(std::ostream& os, const std::vector<std::uint64_t>& dims) {
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  os.put(static_cast<char>(kDtypeFloat32));
  put_u32(os, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put_u64(os, d);
}

template <typename T>
std::string quote(const T& s) {
  return "'" + std::string(s) + "'";
}

}  // namespace

std::string to_string(Granularity g) { return g == Granularity::pooled ? "pooled" : "token"; }

Granularity granularity_from_string(const std::string& s) {
  if (s == "pooled") return Granularity::pooled;
  if (s == "token") return Granularity::token;
  fail(errc::bad_manifest, "unknown granularity " + quote(s));
}

void validate(const Manifest& m) {
  require(!m.languages.empty(), errc::bad_manifest, "manifest lists no languages");
  require(!m.layers.empty(), errc::bad_manifest, "manifest lists no layers");
  require(m.sentence_count >= 2, errc::bad_manifest, "sentence_count must be at least 2");
  std::set<std::string> langs(m.languages.begin(), m.languages.end());
  require(langs.size() == m.languages.size(), errc::bad_manifest, "duplicate language code");
  std::set<std::string> layers(m.layers.begin(), m.layers.end());
  require(layers.size() == m.layers.size(), errc::bad_manifest, "duplicate layer name");
  for (const auto& layer : m.layers) {
    auto it = m.feature_dims.find(layer);
    require(it != m.feature_dims.end(), errc::bad_manifest,
            "layer " + quote(layer) + " has no feature dimension");
    require(it->second >= 1, errc::bad_manifest,
            "layer " + quote(layer) + " has non-positive feature dimension");
  }
}

void validate(const ActivationMatrix& m, const Manifest& manifest) {
  require(m.data.allFinite(), errc::non_finite_data,
          quote(m.language) + "/" + quote(m.layer) + " contains NaN or Inf");
  require(m.data.rows() == manifest.sentence_count, errc::shape_mismatch,
          quote(m.language) + "/" + quote(m.layer) + " row count disagrees with manifest");
  auto it = manifest.feature_dims.find(m.layer);
  require(it != manifest.feature_dims.end(), errc::unknown_layer,
          "layer " + quote(m.layer) + " not in manifest");
  require(m.data.cols() == it->second, errc::shape_mismatch,
          quote(m.language) + "/" + quote(m.layer) + " feature dim disagrees with manifest");
}

void validate(const TokenActivations& t) {
  require(!t.token_counts.empty(), errc::shape_mismatch,
          quote(t.language) + "/" + quote(t.layer) + " has no sentences");
  Index total = 0;
  for (Index c : t.token_counts) {
    require(c >= 1, errc::shape_mismatch,
            quote(t.language) + "/" + quote(t.layer) + " has a sentence with no tokens");
    total += c;
  }
  require(total == t.data.rows(), errc::shape_mismatch,
          quote(t.language) + "/" + quote(t.layer) + " token counts do not sum to row count");
  require(t.data.cols() >= 1, errc::shape_mismatch,
          quote(t.language) + "/" + quote(t.layer) + " has no feature columns");
  require(t.data.allFinite(), errc::non_finite_data,
          quote(t.language) + "/" + quote(t.layer) + " contains NaN or Inf");
}

const ActivationMatrix& ActivationSet::matrix(const std::string& language,
                                              const std::string& layer) const {
  require(std::find(manifest.languages.begin(), manifest.languages.end(), language) !=
              manifest.languages.end(),
          errc::unknown_language, "language " + quote(language) + " not in dataset");
  require(std::find(manifest.layers.begin(), manifest.layers.end(), layer) !=
              manifest.layers.end(),
          errc::unknown_layer, "layer " + quote(layer) + " not in dataset");
  for (const auto& m : pooled)
    if (m.language == language && m.layer == layer) return m;
  fail(errc::invalid_argument,
       "no pooled matrix for " + quote(language) + "/" + quote(layer) +
           " (token-granularity dataset?)");
}

const TokenActivations& ActivationSet::tokens(const std::string& language,
                                              const std::string& layer) const {
  require(std::find(manifest.languages.begin(), manifest.languages.end(), language) !=
              manifest.languages.end(),
          errc::unknown_language, "language " + quote(language) + " not in dataset");
  require(std::find(manifest.layers.begin(), manifest.layers.end(), layer) !=
              manifest.layers.end(),
          errc::unknown_layer, "layer " + quote(layer) + " not in dataset");
  for (const auto& t : token)
    if (t.language == language && t.layer == layer) return t;
  fail(errc::invalid_argument,
       "no token activations for " + quote(language) + "/" + quote(layer) +
           " (pooled dataset?)");
}

RsamHeader read_rsam_header(const std::filesystem::path& path) {
  auto is = open_input(path);
  return read_header_stream(is, path.string());
}

StorageMatrix read_rsam_matrix(const std::filesystem::path& path) {
  auto is = open_input(path);
  const RsamHeader h = read_header_stream(is, path.string());
  require(h.dims.size() == 2, errc::shape_mismatch, path.string() + ": expected a rank-2 tensor");
  const auto rows = static_cast<Index>(h.dims[0]);
  const auto cols = static_cast<Index>(h.dims[1]);
  StorageMatrix m(rows, cols);
  const auto bytes = static_cast<std::streamsize>(4 * element_count(h));
  is.read(reinterpret_cast<char*>(m.data()), bytes);
  require(is.gcount() == bytes, errc::shape_mismatch, path.string() + ": truncated payload");
  return m;
}

std::vector<float> read_rsam_vector(const std::filesystem::path& path) {
  auto is = open_input(path);
  const RsamHeader h = read_header_stream(is, path.string());
  require(h.dims.size() == 1, errc::shape_mismatch, path.string() + ": expected a rank-1 tensor");
  std::vector<float> v(h.dims[0]);
  const auto bytes = static_cast<std::streamsize>(4 * v.size());
  is.read(reinterpret_cast<char*>(v.data()), bytes);
  require(is.gcount() == bytes, errc::shape_mismatch, path.string() + ": truncated payload");
  return v;
}

void write_rsam(const std::filesystem::path& path, const StorageMatrix& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.good(), errc::missing_file, "cannot create " + path.string());
  write_header(os, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())});
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(4 * m.size()));
  require(os.good(), errc::missing_file, "write failed for " + path.string());
}

void write_rsam(const std::filesystem::path& path, const std::vector<float>& v) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.good(), errc::missing_file, "cannot create " + path.string());
  write_header(os, {static_cast<std::uint64_t>(v.size())});
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(4 * v.size()));
  require(os.good(), errc::missing_file, "write failed for " + path.string());
}

std::filesystem::path data_file_path(const std::filesystem::path& dir, const std::string& language,
                                     const std::string& layer) {
  return dir / (language + "__" + layer + ".rsam");
}

std::filesystem::path token_count_file_path(const std::filesystem::path& dir,
                                            const std::string& language) {
  return dir / (language + ".tokens.rsam");
}

std::filesystem::path Dataset::data_path(const std::string& language,
                                         const std::string& layer) const {
  return data_file_path(dir_, language, layer);
}

std::filesystem::path Dataset::token_count_path(const std::string& language) const {
  return token_count_file_path(dir_, language);
}

ActivationMatrix Dataset::load_matrix(const std::string& language,
                                      const std::string& layer) const {
  require(manifest_.granularity == Granularity::pooled, errc::invalid_argument,
          "load_matrix on a token-granularity dataset; pool it first");
  ActivationMatrix m{language, layer, read_rsam_matrix(data_path(language, layer))};
  validate(m, manifest_);
  return m;
}

TokenActivations Dataset::load_tokens(const std::string& language,
                                      const std::string& layer) const {
  require(manifest_.granularity == Granularity::token, errc::invalid_argument,
          "load_tokens on a pooled dataset");
  auto counts = token_counts_.find(language);
  require(counts != token_counts_.end(), errc::unknown_language,
          "language " + quote(language) + " not in dataset");
  TokenActivations t{language, layer, counts->second,
                     read_rsam_matrix(data_path(language, layer))};
  validate(t);
  return t;
}

ActivationSet Dataset::load_all() const {
  ActivationSet set;
  set.manifest = manifest_;
  for (const auto& language : manifest_.languages)
    for (const auto& layer : manifest_.layers) {
      if (manifest_.granularity == Granularity::pooled)
        set.pooled.push_back(load_matrix(language, layer));
      else
        set.token.push_back(load_tokens(language, layer));
    }
  return set;
}

namespace {

Manifest parse_manifest(const std::filesystem::path& path) {
  auto is = open_input(path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(errc::bad_manifest, path.string() + ": " + e.what());
  }
  Manifest m;
  try {
    m.dataset_name = j.at("dataset_name").get<std::string>();
    m.languages = j.at("languages").get<std::vector<std::string>>();
    m.layers = j.at("layers").get<std::vector<std::string>>();
    m.sentence_count = j.at("sentence_count").get<Index>();
    for (const auto& [layer, dim] : j.at("feature_dims").items())
      m.feature_dims[layer] = dim.get<Index>();
    m.granularity = granularity_from_string(j.at("granularity").get<std::string>());
    require(j.at("dtype").get<std::string>() == "float32", errc::bad_manifest,
            path.string() + ": dtype must be float32");
  } catch (const nlohmann::json::exception& e) {
    fail(errc::bad_manifest, path.string() + ": " + e.what());
  }
  validate(m);
  return m;
}

std::vector<Index> parse_token_counts(const std::filesystem::path& path, Index expected_n) {
  const std::vector<float> raw = read_rsam_vector(path);
  require(static_cast<Index>(raw.size()) == expected_n, errc::shape_mismatch,
          path.string() + ": token count length disagrees with sentence_count");
  std::vector<Index> counts(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double v = raw[i];
    require(v >= 1.0 && v <= kMaxExactTokenCount && v == std::floor(v), errc::shape_mismatch,
            path.string() + ": token counts must be positive integers");
    counts[i] = static_cast<Index>(v);
  }
  return counts;
}

}  // namespace

Dataset read_dataset(const std::filesystem::path& manifest_path) {
  require(std::filesystem::exists(manifest_path), errc::missing_file,
          "no manifest at " + manifest_path.string());
  Dataset ds;
  ds.dir_ = manifest_path.parent_path();
  ds.manifest_ = parse_manifest(manifest_path);
  const Manifest& m = ds.manifest_;

  if (m.granularity == Granularity::token)
    for (const auto& language : m.languages)
      ds.token_counts_[language] =
          parse_token_counts(ds.token_count_path(language), m.sentence_count);

  for (const auto& language : m.languages)
    for (const auto& layer : m.layers) {
      const auto path = ds.data_path(language, layer);
      require(std::filesystem::exists(path), errc::missing_file,
              "missing data file " + path.string());
      const RsamHeader h = read_rsam_header(path);
      require(h.dims.size() == 2, errc::shape_mismatch,
              path.string() + ": expected a rank-2 tensor");
      const std::uint64_t want_rows =
          m.granularity == Granularity::pooled
              ? static_cast<std::uint64_t>(m.sentence_count)
              : static_cast<std::uint64_t>(std::accumulate(
                    ds.token_counts_[language].begin(), ds.token_counts_[language].end(),
                    Index{0}));
      require(h.dims[0] == want_rows, errc::shape_mismatch,
              path.string() + ": row count disagrees with manifest");
      require(h.dims[1] == static_cast<std::uint64_t>(m.feature_dims.at(layer)),
              errc::shape_mismatch, path.string() + ": feature dim disagrees with manifest");
      check_payload_size(path, h);
    }
  return ds;
}

void write_dataset(const ActivationSet& set, const std::filesystem::path& manifest_path) {
  const Manifest& m = set.manifest;
  validate(m);

  const std::size_t expected = m.languages.size() * m.layers.size();
  std::map<std::string, const std::vector<Index>*> counts_per_language;
  if (m.granularity == Granularity::pooled) {
    require(set.pooled.size() == expected && set.token.empty(), errc::bad_manifest,
            "pooled dataset must hold exactly one matrix per (language, layer)");
    for (const auto& language : m.languages)
      for (const auto& layer : m.layers) validate(set.matrix(language, layer), m);
  } else {
    require(set.token.size() == expected && set.pooled.empty(), errc::bad_manifest,
            "token dataset must hold exactly one slab per (language, layer)");
    for (const auto& language : m.languages) {
      const std::vector<Index>* first = nullptr;
      for (const auto& layer : m.layers) {
        const TokenActivations& t = set.tokens(language, layer);
        validate(t);
        require(static_cast<Index>(t.token_counts.size()) == m.sentence_count,
                errc::shape_mismatch,
                quote(language) + "/" + quote(layer) +
                    " token count length disagrees with sentence_count");
        require(t.data.cols() == m.feature_dims.at(layer), errc::shape_mismatch,
                quote(language) + "/" + quote(layer) + " feature dim disagrees with manifest");
        if (!first)
          first = &t.token_counts;
        else
          require(t.token_counts == *first, errc::shape_mismatch,
                  quote(language) + ": token counts differ across layers");
      }
      counts_per_language[language] = first;
    }
  }

  const auto dir = manifest_path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);

  nlohmann::ordered_json j;
  j["dataset_name"] = m.dataset_name;
  j["languages"] = m.languages;
  j["layers"] = m.layers;
  j["sentence_count"] = m.sentence_count;
  nlohmann::ordered_json dims;
  for (const auto& layer : m.layers) dims[layer] = m.feature_dims.at(layer);
  j["feature_dims"] = dims;
  j["granularity"] = to_string(m.granularity);
  j["dtype"] = "float32";
  std::ofstream os(manifest_path, std::ios::trunc);
  require(os.good(), errc::missing_file, "cannot create " + manifest_path.string());
  os << j.dump(2) << '\n';
  require(os.good(), errc::missing_file, "write failed for " + manifest_path.string());

  for (const auto& language : m.languages) {
    if (m.granularity == Granularity::token) {
      const auto& counts = *counts_per_language.at(language);
      std::vector<float> as_float(counts.begin(), counts.end());
      write_rsam(token_count_file_path(dir, language), as_float);
    }
    for (const auto& layer : m.layers) {
      const StorageMatrix& data = m.granularity == Granularity::pooled
                                      ? set.matrix(language, layer).data
                                      : set.tokens(language, layer).data;
      write_rsam(data_file_path(dir, language, layer), data);
    }
  }
}

ActivationMatrix mean_pool(const TokenActivations& tokens) {
  validate(tokens);
  const Index n = static_cast<Index>(tokens.token_counts.size());
  const Index d = tokens.data.cols();
  StorageMatrix pooled(n, d);
  Vectord acc(d);
  Index row = 0;
  for (Index i = 0; i < n; ++i) {
    acc.setZero();
    const Index t = tokens.token_counts[static_cast<std::size_t>(i)];
    for (Index k = 0; k < t; ++k) acc += tokens.data.row(row + k).cast<double>();
    pooled.row(i) = (acc / static_cast<double>(t)).cast<float>();
    row += t;
  }
  return {tokens.language, tokens.layer, std::move(pooled)};
}

FlattenedTokens token_flatten(const TokenActivations& tokens) {
  validate(tokens);
  FlattenedTokens out;
  out.data = tokens.data;
  out.keys.reserve(static_cast<std::size_t>(tokens.data.rows()));
  for (Index i = 0; i < static_cast<Index>(tokens.token_counts.size()); ++i)
    for (Index k = 0; k < tokens.token_counts[static_cast<std::size_t>(i)]; ++k)
      out.keys.push_back({i, k});
  return out;
}

}  // namespace repsim
