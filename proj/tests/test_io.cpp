#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "oracles.hpp"
#include "repsim/activation_io.hpp"
#include "repsim/rng.hpp"
#include "support.hpp"

using namespace repsim;
using repsim::testing::error_code_of;
using repsim::testing::TempDir;
namespace fs = std::filesystem;

namespace {

bool bitwise_equal(const StorageMatrix& a, const StorageMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0;
}

StorageMatrix random_storage(Index rows, Index cols, std::uint64_t seed) {
  return RandomStream(seed, "storage").gaussian<float>(rows, cols);
}

ActivationSet small_pooled_set(std::uint64_t seed) {
  ActivationSet set;
  set.manifest.dataset_name = "unit";
  set.manifest.languages = {"en", "de"};
  set.manifest.layers = {"enc0", "enc1"};
  set.manifest.sentence_count = 6;
  set.manifest.feature_dims = {{"enc0", 3}, {"enc1", 4}};
  set.manifest.granularity = Granularity::pooled;
  std::uint64_t salt = seed;
  for (const auto& lang : set.manifest.languages)
    for (const auto& layer : set.manifest.layers)
      set.pooled.push_back(
          {lang, layer, random_storage(6, set.manifest.feature_dims.at(layer), ++salt)});
  return set;
}

ActivationSet small_token_set(std::uint64_t seed) {
  ActivationSet set;
  set.manifest.dataset_name = "unit-token";
  set.manifest.languages = {"fr", "es"};
  set.manifest.layers = {"enc0"};
  set.manifest.sentence_count = 4;
  set.manifest.feature_dims = {{"enc0", 3}};
  set.manifest.granularity = Granularity::token;
  const std::vector<std::vector<Index>> counts{{2, 1, 3, 1}, {1, 1, 2, 2}};
  for (std::size_t i = 0; i < set.manifest.languages.size(); ++i) {
    Index total = 0;
    for (Index c : counts[i]) total += c;
    set.token.push_back({set.manifest.languages[i], "enc0", counts[i],
                         random_storage(total, 3, seed + 100 + i)});
  }
  return set;
}

TokenActivations random_ragged(std::uint64_t seed, Index sentences, Index d) {
  const RandomStream rng(seed, "ragged");
  TokenActivations t;
  t.language = "xx";
  t.layer = "enc";
  Index total = 0;
  for (Index i = 0; i < sentences; ++i) {
    const auto c = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(i), 1, 7));
    t.token_counts.push_back(c);
    total += c;
  }
  t.data.resize(total, d);
  for (Index r = 0; r < total; ++r)
    for (Index c = 0; c < d; ++c)
      t.data(r, c) = static_cast<float>(
          2.0 * rng.uniform(static_cast<std::uint64_t>(1000 + r * d + c)) - 1.0);
  return t;
}

}  // namespace

TEST_CASE("rsam matrix and vector round-trip bit-exactly") {
  TempDir tmp("rsam");
  const StorageMatrix m = random_storage(7, 5, 1);
  write_rsam(tmp.path() / "m.rsam", m);
  CHECK(bitwise_equal(read_rsam_matrix(tmp.path() / "m.rsam"), m));

  const std::vector<float> v{1, 2, 3.5f, -0.25f};
  write_rsam(tmp.path() / "v.rsam", v);
  CHECK(read_rsam_vector(tmp.path() / "v.rsam") == v);

  const RsamHeader h = read_rsam_header(tmp.path() / "m.rsam");
  CHECK(h.version == 1);
  CHECK(h.dtype == 0);
  REQUIRE(h.dims.size() == 2);
  CHECK(h.dims[0] == 7);
  CHECK(h.dims[1] == 5);
}

TEST_CASE("pooled dataset round-trips through disk") {
  TempDir tmp("pooled");
  const ActivationSet original = small_pooled_set(5);
  write_dataset(original, tmp.path() / "manifest.json");

  const Dataset ds = read_dataset(tmp.path() / "manifest.json");
  CHECK(ds.manifest().dataset_name == "unit");
  CHECK(ds.manifest().languages == original.manifest.languages);
  CHECK(ds.manifest().layers == original.manifest.layers);
  CHECK(ds.manifest().sentence_count == 6);
  CHECK(ds.manifest().granularity == Granularity::pooled);

  const ActivationSet loaded = ds.load_all();
  for (const auto& m : original.pooled)
    CHECK(bitwise_equal(loaded.matrix(m.language, m.layer).data, m.data));
}

TEST_CASE("token dataset round-trips with per-language counts") {
  TempDir tmp("token");
  const ActivationSet original = small_token_set(9);
  write_dataset(original, tmp.path() / "manifest.json");

  const Dataset ds = read_dataset(tmp.path() / "manifest.json");
  const ActivationSet loaded = ds.load_all();
  for (const auto& t : original.token) {
    const TokenActivations& got = loaded.tokens(t.language, t.layer);
    CHECK(got.token_counts == t.token_counts);
    CHECK(bitwise_equal(got.data, t.data));
  }
}

TEST_CASE("wrong magic is rejected") {
  TempDir tmp("magic");
  write_rsam(tmp.path() / "x.rsam", random_storage(3, 3, 2));
  {
    std::fstream f(tmp.path() / "x.rsam", std::ios::in | std::ios::out | std::ios::binary);
    f.write("JUNK", 4);
  }
  CHECK(error_code_of([&] { read_rsam_matrix(tmp.path() / "x.rsam"); }) == errc::bad_magic);
}

TEST_CASE("wrong dtype byte is rejected") {
  TempDir tmp("dtype");
  write_rsam(tmp.path() / "x.rsam", random_storage(3, 3, 3));
  {
    std::fstream f(tmp.path() / "x.rsam", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(5);
    f.put(static_cast<char>(7));
  }
  CHECK(error_code_of([&] { read_rsam_matrix(tmp.path() / "x.rsam"); }) == errc::bad_magic);
}

TEST_CASE("truncated payload is rejected") {
  TempDir tmp("trunc");
  write_rsam(tmp.path() / "x.rsam", random_storage(4, 4, 4));
  fs::resize_file(tmp.path() / "x.rsam", fs::file_size(tmp.path() / "x.rsam") - 8);
  CHECK(error_code_of([&] { read_rsam_matrix(tmp.path() / "x.rsam"); }) == errc::shape_mismatch);
}

TEST_CASE("dataset validation catches broken files") {
  TempDir tmp("broken");
  const ActivationSet set = small_pooled_set(6);
  write_dataset(set, tmp.path() / "manifest.json");

  SUBCASE("missing data file") {
    fs::remove(tmp.path() / "de__enc1.rsam");
    CHECK(error_code_of([&] { read_dataset(tmp.path() / "manifest.json"); }) ==
          errc::missing_file);
  }
  SUBCASE("row count disagrees with manifest") {
    write_rsam(tmp.path() / "de__enc1.rsam", random_storage(5, 4, 7));  // expects 6 rows
    CHECK(error_code_of([&] { read_dataset(tmp.path() / "manifest.json"); }) ==
          errc::shape_mismatch);
  }
  SUBCASE("feature dim disagrees with manifest") {
    write_rsam(tmp.path() / "de__enc1.rsam", random_storage(6, 3, 7));  // expects d=4
    CHECK(error_code_of([&] { read_dataset(tmp.path() / "manifest.json"); }) ==
          errc::shape_mismatch);
  }
  SUBCASE("non-finite payload is caught at load") {
    StorageMatrix bad = random_storage(6, 4, 8);
    bad(2, 1) = std::numeric_limits<float>::quiet_NaN();
    write_rsam(tmp.path() / "de__enc1.rsam", bad);
    const Dataset ds = read_dataset(tmp.path() / "manifest.json");  // header still fine
    CHECK(error_code_of([&] { ds.load_matrix("de", "enc1"); }) == errc::non_finite_data);
  }
  SUBCASE("missing manifest") {
    CHECK(error_code_of([&] { read_dataset(tmp.path() / "nope.json"); }) == errc::missing_file);
  }
}

TEST_CASE("manifest validation") {
  TempDir tmp("manifest");
  auto write_manifest = [&](const std::string& body) {
    std::ofstream os(tmp.path() / "manifest.json");
    os << body;
  };
  SUBCASE("duplicate language") {
    write_manifest(R"({"dataset_name":"x","languages":["en","en"],"layers":["l"],
      "sentence_count":4,"feature_dims":{"l":2},"granularity":"pooled","dtype":"float32"})");
    CHECK(error_code_of([&] { read_dataset(tmp.path() / "manifest.json"); }) ==
          errc::bad_manifest);
  }
  SUBCASE("unknown granularity") {
    write_manifest(R"({"dataset_name":"x","languages":["en"],"layers":["l"],
      "sentence_count":4,"feature_dims":{"l":2},"granularity":"chunked","dtype":"float32"})");
    CHECK(error_code_of([&] { read_dataset(tmp.path() / "manifest.json"); }) ==
          errc::bad_manifest);
  }
  SUBCASE("wrong dtype") {
    write_manifest(R"({"dataset_name":"x","languages":["en"],"layers":["l"],
      "sentence_count":4,"feature_dims":{"l":2},"granularity":"pooled","dtype":"float64"})");
    CHECK(error_code_of([&] { read_dataset(tmp.path() / "manifest.json"); }) ==
          errc::bad_manifest);
  }
  SUBCASE("missing field") {
    write_manifest(R"({"dataset_name":"x","languages":["en"]})");
    CHECK(error_code_of([&] { read_dataset(tmp.path() / "manifest.json"); }) ==
          errc::bad_manifest);
  }
  SUBCASE("layer without feature dim") {
    write_manifest(R"({"dataset_name":"x","languages":["en"],"layers":["l","m"],
      "sentence_count":4,"feature_dims":{"l":2},"granularity":"pooled","dtype":"float32"})");
    CHECK(error_code_of([&] { read_dataset(tmp.path() / "manifest.json"); }) ==
          errc::bad_manifest);
  }
  SUBCASE("not json at all") {
    write_manifest("plainly not json");
    CHECK(error_code_of([&] { read_dataset(tmp.path() / "manifest.json"); }) ==
          errc::bad_manifest);
  }
}

TEST_CASE("token counts must be positive integers") {
  TempDir tmp("counts");
  const ActivationSet set = small_token_set(10);
  write_dataset(set, tmp.path() / "manifest.json");
  write_rsam(tmp.path() / "fr.tokens.rsam", std::vector<float>{2.0f, 1.5f, 3.0f, 1.0f});
  CHECK(error_code_of([&] { read_dataset(tmp.path() / "manifest.json"); }) ==
        errc::shape_mismatch);
  write_rsam(tmp.path() / "fr.tokens.rsam", std::vector<float>{2.0f, 0.0f, 3.0f, 1.0f});
  CHECK(error_code_of([&] { read_dataset(tmp.path() / "manifest.json"); }) ==
        errc::shape_mismatch);
}

TEST_CASE("mean_pool basics") {
  SUBCASE("single-token sentences pass through") {
    TokenActivations t{"xx", "enc", {1, 1, 1}, random_storage(3, 4, 11)};
    const ActivationMatrix pooled = mean_pool(t);
    CHECK(bitwise_equal(pooled.data, t.data));
  }
  SUBCASE("two-token mean by hand") {
    TokenActivations t;
    t.language = "xx";
    t.layer = "enc";
    t.token_counts = {2};
    t.data.resize(2, 2);
    t.data << 1, 3, 3, 5;
    const ActivationMatrix pooled = mean_pool(t);
    CHECK(pooled.data(0, 0) == 2.0f);
    CHECK(pooled.data(0, 1) == 4.0f);
  }
}

TEST_CASE("mean_pool matches a scalar-loop reference") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const TokenActivations t = random_ragged(seed, 20, 8);
    const ActivationMatrix pooled = mean_pool(t);
    const Matrixd want = oracle::mean_pool_reference(t);
    for (Index i = 0; i < want.rows(); ++i)
      for (Index c = 0; c < want.cols(); ++c)
        CHECK(std::abs(static_cast<double>(pooled.data(i, c)) - want(i, c)) <= 1e-7);
  }
}

TEST_CASE("mean_pool is permutation-equivariant over sentences") {
  const TokenActivations t = random_ragged(123, 6, 3);
  const ActivationMatrix pooled = mean_pool(t);

  // Reverse sentence order, moving each sentence's token block wholesale.
  TokenActivations reversed;
  reversed.language = t.language;
  reversed.layer = t.layer;
  std::vector<Index> starts;
  Index acc = 0;
  for (Index c : t.token_counts) {
    starts.push_back(acc);
    acc += c;
  }
  reversed.data.resize(t.data.rows(), t.data.cols());
  Index row = 0;
  for (Index i = static_cast<Index>(t.token_counts.size()) - 1; i >= 0; --i) {
    const Index c = t.token_counts[static_cast<std::size_t>(i)];
    reversed.token_counts.push_back(c);
    reversed.data.middleRows(row, c) = t.data.middleRows(starts[static_cast<std::size_t>(i)], c);
    row += c;
  }
  const ActivationMatrix pooled_rev = mean_pool(reversed);
  for (Index i = 0; i < pooled.data.rows(); ++i)
    CHECK((pooled_rev.data.row(pooled.data.rows() - 1 - i).array() ==
           pooled.data.row(i).array())
              .all());
}

TEST_CASE("token_flatten preserves order and keys") {
  TokenActivations t;
  t.language = "xx";
  t.layer = "enc";
  t.token_counts = {2, 1};
  t.data.resize(3, 1);
  t.data << 10, 20, 30;
  const FlattenedTokens flat = token_flatten(t);
  CHECK(bitwise_equal(flat.data, t.data));
  REQUIRE(flat.keys.size() == 3);
  CHECK(flat.keys[0].sentence == 0);
  CHECK(flat.keys[0].position == 0);
  CHECK(flat.keys[1].sentence == 0);
  CHECK(flat.keys[1].position == 1);
  CHECK(flat.keys[2].sentence == 1);
  CHECK(flat.keys[2].position == 0);

  // Degenerate ragged case: all-single-token flatten equals mean_pool.
  const TokenActivations ones{"xx", "enc", {1, 1}, random_storage(2, 3, 77)};
  CHECK(bitwise_equal(token_flatten(ones).data, mean_pool(ones).data));
}

TEST_CASE("token activations validation") {
  TokenActivations t{"xx", "enc", {2, 0}, random_storage(2, 2, 12)};
  CHECK(error_code_of([&] { validate(t); }) == errc::shape_mismatch);
  TokenActivations sum{"xx", "enc", {2, 2}, random_storage(3, 2, 13)};
  CHECK(error_code_of([&] { validate(sum); }) == errc::shape_mismatch);
}

TEST_CASE("activation set lookup errors") {
  const ActivationSet set = small_pooled_set(21);
  CHECK(error_code_of([&] { set.matrix("zz", "enc0"); }) == errc::unknown_language);
  CHECK(error_code_of([&] { set.matrix("en", "nope"); }) == errc::unknown_layer);
}

TEST_CASE("token dataset with inconsistent per-layer counts is rejected on write") {
  ActivationSet set = small_token_set(30);
  set.manifest.layers = {"enc0", "enc1"};
  set.manifest.feature_dims["enc1"] = 3;
  for (const auto& lang : set.manifest.languages) {
    TokenActivations extra = set.tokens(lang, "enc0");
    extra.layer = "enc1";
    set.token.push_back(extra);
  }
  // Make one language's counts disagree across layers while keeping totals.
  for (auto& t : set.token)
    if (t.language == "fr" && t.layer == "enc1") t.token_counts = {1, 2, 3, 1};
  TempDir tmp("inconsistent");
  CHECK(error_code_of([&] { write_dataset(set, tmp.path() / "manifest.json"); }) ==
        errc::shape_mismatch);
}
