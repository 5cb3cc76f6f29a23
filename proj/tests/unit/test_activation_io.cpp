#include <cmath>
#include <cstring>
#include <limits>
#include <thread>

#include "doctest.h"
#include "halodet/activation_io.hpp"
#include "halodet/synth.hpp"
#include "test_util.hpp"

using namespace halodet;
using testutil::error_code_of;
using testutil::TempDir;

namespace {

bool same_bits(float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }

bool records_bit_equal(const ActivationRecord& a, const ActivationRecord& b) {
  if (a.n_tokens() != b.n_tokens() || a.hidden_states.size() != b.hidden_states.size()) return false;
  for (const auto& [layer, h] : a.hidden_states) {
    const auto it = b.hidden_states.find(layer);
    if (it == b.hidden_states.end() || it->second.rows() != h.rows() || it->second.cols() != h.cols()) return false;
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      if (!same_bits(h.data()[i], it->second.data()[i])) return false;
    }
  }
  const auto ca = a.attention.context_values(), cb = b.attention.context_values();
  const auto ga = a.attention.generated_values(), gb = b.attention.generated_values();
  if (ca.size() != cb.size() || ga.size() != gb.size()) return false;
  for (std::size_t i = 0; i < ca.size(); ++i) {
    if (!same_bits(ca[i], cb[i]) || !same_bits(ga[i], gb[i])) return false;
  }
  return true;
}

std::string bytes_of(const std::filesystem::path& p) { return testutil::read_text(p); }

void patch(const std::filesystem::path& p, std::uint64_t offset, const void* data, std::size_t n) {
  auto bytes = bytes_of(p);
  std::memcpy(bytes.data() + offset, data, n);
  testutil::write_text(p, bytes);
}

struct ToyDump {
  ActivationManifest manifest;
  std::vector<ActivationRecord> records;
};

ToyDump toy_dump(const std::filesystem::path& dir, int count = 6, std::uint64_t seed = 7) {
  ToyDump d;
  d.manifest = testutil::small_manifest();
  d.records = testutil::fill_examples(d.manifest, count, seed);
  d.manifest = write_dump(d.manifest, d.records, dir);
  return d;
}

}  // namespace

TEST_CASE("write then read reproduces every field bit for bit") {
  TempDir tmp;
  const auto d = toy_dump(tmp.path(), 9);
  const auto m = read_manifest(tmp.path());
  CHECK(m.n_layers == 4);
  CHECK(m.n_heads == 3);
  CHECK(m.hidden_dim == 5);
  CHECK(m.hidden_layers_dumped == std::vector<int>{1, 2});
  REQUIRE(m.examples.size() == 9);
  DumpReader reader(tmp.path());
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    CHECK(m.examples[i].id == d.manifest.examples[i].id);
    CHECK(m.examples[i].label == d.manifest.examples[i].label);
    CHECK(m.examples[i].byte_offset == d.manifest.examples[i].byte_offset);
    const auto r = reader.read(m.examples[i].id);
    CHECK(r.n_tokens() == static_cast<int>(m.examples[i].n_gen_tokens));
    CHECK(records_bit_equal(r, d.records[i]));
  }
}

TEST_CASE("a one-token record has the size the layout forces") {
  TempDir tmp;
  auto m = testutil::small_manifest(1, 1, 2, {0});
  Rng rng(1);
  ExampleMeta e{"only", kLabelFaithful, 0, 1};
  m.examples.push_back(e);
  std::vector<ActivationRecord> records{testutil::random_record(m, 1, rng)};
  write_dump(m, records, tmp.path());
  // header 8 + T 4 + hidden 1*2*4 + attention 1*1*1*2*4
  CHECK(std::filesystem::file_size(tmp / kRecordsFile) == 8 + 4 + 8 + 8);
  CHECK(m.record_bytes(1) == 4 + 8 + 8);
}

TEST_CASE("byte offsets follow the packed layout") {
  TempDir tmp;
  const auto d = toy_dump(tmp.path(), 5);
  std::uint64_t expected = kRecordsHeaderBytes;
  for (const auto& e : d.manifest.examples) {
    CHECK(e.byte_offset == expected);
    expected += d.manifest.record_bytes(e.n_gen_tokens);
  }
  CHECK(std::filesystem::file_size(tmp / kRecordsFile) == expected);
}

TEST_CASE("writer rejects records whose shape disagrees with the manifest") {
  TempDir tmp;
  auto m = testutil::small_manifest(4, 3, 4, {1});
  auto wrong = testutil::small_manifest(4, 3, 3, {1});
  Rng rng(3);
  m.examples.push_back({"bad-one", kLabelFaithful, 0, 2});
  std::vector<ActivationRecord> records{testutil::random_record(wrong, 2, rng)};
  try {
    write_dump(m, records, tmp.path());
    FAIL("expected a dimension mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
    CHECK(std::string(e.what()).find("bad-one") != std::string::npos);
  }
}

TEST_CASE("manifest parse errors are distinct") {
  TempDir tmp;
  toy_dump(tmp.path(), 3);
  const auto text = bytes_of(tmp / kManifestFile);

  SUBCASE("truncated") {
    CHECK(error_code_of([&] { manifest_from_json(text.substr(0, text.size() / 2)); }) == ErrorCode::TruncatedManifest);
  }
  SUBCASE("duplicate id") {
    auto doc = nlohmann::json::parse(text);
    doc["examples"][1]["id"] = doc["examples"][0]["id"];
    CHECK(error_code_of([&] { manifest_from_json(doc.dump()); }) == ErrorCode::DuplicateId);
  }
  SUBCASE("unknown key") {
    auto doc = nlohmann::json::parse(text);
    doc["extra"] = 1;
    CHECK(error_code_of([&] { manifest_from_json(doc.dump()); }) == ErrorCode::MalformedManifest);
  }
  SUBCASE("missing key") {
    auto doc = nlohmann::json::parse(text);
    doc.erase("n_heads");
    CHECK(error_code_of([&] { manifest_from_json(doc.dump()); }) == ErrorCode::MalformedManifest);
  }
  SUBCASE("unsupported version") {
    auto doc = nlohmann::json::parse(text);
    doc["format_version"] = 2;
    CHECK(error_code_of([&] { manifest_from_json(doc.dump()); }) == ErrorCode::UnsupportedVersion);
  }
  SUBCASE("bad label") {
    auto doc = nlohmann::json::parse(text);
    doc["examples"][0]["label"] = 7;
    CHECK(error_code_of([&] { manifest_from_json(doc.dump()); }) == ErrorCode::InvariantViolation);
  }
  SUBCASE("zero tokens") {
    auto doc = nlohmann::json::parse(text);
    doc["examples"][0]["n_gen_tokens"] = 0;
    CHECK(error_code_of([&] { manifest_from_json(doc.dump()); }) == ErrorCode::InvariantViolation);
  }
  SUBCASE("hidden layers out of order") {
    auto doc = nlohmann::json::parse(text);
    doc["hidden_layers_dumped"] = {2, 1};
    CHECK(error_code_of([&] { manifest_from_json(doc.dump()); }) == ErrorCode::InvariantViolation);
  }
}

TEST_CASE("records header is checked") {
  TempDir tmp;
  toy_dump(tmp.path(), 2);
  SUBCASE("bad magic") {
    patch(tmp / kRecordsFile, 0, "HOLA", 4);
    CHECK(error_code_of([&] { read_manifest(tmp.path()); }) == ErrorCode::BadMagic);
  }
  SUBCASE("unsupported version") {
    const std::uint32_t v = 2;
    patch(tmp / kRecordsFile, 4, &v, 4);
    CHECK(error_code_of([&] { read_manifest(tmp.path()); }) == ErrorCode::UnsupportedVersion);
  }
}

TEST_CASE("record lookups") {
  TempDir tmp;
  const auto d = toy_dump(tmp.path(), 4);
  DumpReader reader(tmp.path());

  SUBCASE("present id has the manifest's token count") {
    const auto r = read_record(tmp.path(), "e2");
    CHECK(r.n_tokens() == static_cast<int>(d.manifest.examples[2].n_gen_tokens));
  }
  SUBCASE("unknown id") { CHECK(error_code_of([&] { reader.read("nope"); }) == ErrorCode::UnknownId); }
  SUBCASE("NaN payload is a corrupt record") {
    const auto& e = d.manifest.examples[1];
    const float nan = std::numeric_limits<float>::quiet_NaN();
    patch(tmp / kRecordsFile, e.byte_offset + 4 + 8, &nan, 4);
    DumpReader again(tmp.path());
    CHECK(error_code_of([&] { again.read("e1"); }) == ErrorCode::CorruptRecord);
    CHECK(error_code_of([&] { validate_dump(tmp.path()); }) == ErrorCode::CorruptRecord);
  }
  SUBCASE("token count disagreeing with the manifest") {
    const auto& e = d.manifest.examples[0];
    const std::uint32_t t = e.n_gen_tokens + 1;
    patch(tmp / kRecordsFile, e.byte_offset, &t, 4);
    DumpReader again(tmp.path());
    CHECK(error_code_of([&] { again.read("e0"); }) == ErrorCode::CorruptRecord);
  }
  SUBCASE("file cut short") {
    auto bytes = bytes_of(tmp / kRecordsFile);
    bytes.resize(bytes.size() - 3);
    testutil::write_text(tmp / kRecordsFile, bytes);
    DumpReader again(tmp.path());
    CHECK(error_code_of([&] { again.read("e3"); }) == ErrorCode::OffsetPastEnd);
  }
}

TEST_CASE("attention invariants name their coordinates") {
  auto m = testutil::small_manifest();
  Rng rng(11);
  m.examples.push_back({"x", kLabelFaithful, kRecordsHeaderBytes, 3});
  auto r = testutil::random_record(m, 3, rng);
  SUBCASE("negative mass") {
    r.attention.context_values()[r.attention.index(1, 2, 0)] = -0.1f;
    try {
      validate_record(m, m.examples[0], r);
      FAIL("expected an invariant violation");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvariantViolation);
      CHECK(std::string(e.what()).find("t=1") != std::string::npos);
    }
  }
  SUBCASE("zero total") {
    const auto i = r.attention.index(2, 0, 1);
    r.attention.context_values()[i] = 0.0f;
    r.attention.generated_values()[i] = 0.0f;
    CHECK(error_code_of([&] { validate_record(m, m.examples[0], r); }) == ErrorCode::InvariantViolation);
  }
  SUBCASE("infinite mass") {
    r.attention.generated_values()[0] = std::numeric_limits<float>::infinity();
    CHECK(error_code_of([&] { validate_record(m, m.examples[0], r); }) == ErrorCode::CorruptRecord);
  }
}

TEST_CASE("reading one example touches only that record") {
  TempDir tmp;
  const auto d = toy_dump(tmp.path(), 8);
  DumpReader reader(tmp.path());
  std::uint64_t expected = 0;
  for (std::size_t k : {5u, 0u, 7u, 3u}) {
    reader.read(k);
    expected += d.manifest.record_bytes(d.manifest.examples[k].n_gen_tokens);
    CHECK(reader.bytes_read() == expected);
  }
}

TEST_CASE("readers are shareable across threads") {
  TempDir tmp;
  const auto d = toy_dump(tmp.path(), 12);
  DumpReader reader(tmp.path());
  std::vector<int> ok(4, 1);
  {
    std::vector<std::jthread> threads;
    for (int w = 0; w < 4; ++w) {
      threads.emplace_back([&, w] {
        for (int rep = 0; rep < 20; ++rep) {
          for (std::size_t i = 0; i < d.records.size(); ++i) {
            if (!records_bit_equal(reader.read(i), d.records[i])) ok[static_cast<std::size_t>(w)] = 0;
          }
        }
      });
    }
  }
  CHECK(ok == std::vector<int>(4, 1));
}

TEST_CASE("mutating a structural byte is rejected or harmless") {
  // Float payloads carry no redundancy, so only the bytes that encode
  // structure (header and per-record token counts) can be fuzzed here.
  TempDir tmp;
  const auto d = toy_dump(tmp.path(), 5, 21);
  const auto original = bytes_of(tmp / kRecordsFile);
  std::vector<std::uint64_t> positions = {0, 1, 2, 3, 4, 5, 6, 7};
  for (const auto& e : d.manifest.examples) {
    for (std::uint64_t b = 0; b < 4; ++b) positions.push_back(e.byte_offset + b);
  }
  Rng rng(99);
  int rejected = 0;
  for (auto pos : positions) {
    for (int trial = 0; trial < 8; ++trial) {
      auto bytes = original;
      const auto before = static_cast<unsigned char>(bytes[pos]);
      unsigned char after = before;
      while (after == before) after = static_cast<unsigned char>(rng.below(256));
      bytes[pos] = static_cast<char>(after);
      testutil::write_text(tmp / kRecordsFile, bytes);
      bool threw = false;
      try {
        validate_dump(tmp.path());
        DumpReader reader(tmp.path());
        for (std::size_t i = 0; i < d.records.size(); ++i) CHECK(records_bit_equal(reader.read(i), d.records[i]));
      } catch (const Error&) {
        threw = true;
      }
      rejected += threw;
    }
  }
  CHECK(rejected == static_cast<int>(positions.size()) * 8);
  testutil::write_text(tmp / kRecordsFile, original);
}

TEST_CASE("every manifest truncation and offset edit is rejected") {
  TempDir tmp;
  toy_dump(tmp.path(), 4, 5);
  const auto text = bytes_of(tmp / kManifestFile);
  for (std::size_t len = 0; len < text.size(); len += 7) {
    testutil::write_text(tmp / kManifestFile, text.substr(0, len));
    CHECK_THROWS_AS(validate_dump(tmp.path()), Error);
  }
  auto doc = nlohmann::json::parse(text);
  for (std::size_t i = 0; i < doc["examples"].size(); ++i) {
    for (const char* key : {"byte_offset", "n_gen_tokens"}) {
      auto edited = doc;
      edited["examples"][i][key] = edited["examples"][i][key].get<std::uint64_t>() + 1;
      testutil::write_text(tmp / kManifestFile, edited.dump());
      CHECK_THROWS_AS(validate_dump(tmp.path()), Error);
    }
  }
  testutil::write_text(tmp / kManifestFile, text);
  CHECK(validate_dump(tmp.path()).n_examples == 4);
}

TEST_CASE("trailing bytes fail full validation") {
  TempDir tmp;
  toy_dump(tmp.path(), 2);
  auto bytes = bytes_of(tmp / kRecordsFile);
  bytes += "xx";
  testutil::write_text(tmp / kRecordsFile, bytes);
  CHECK(error_code_of([&] { validate_dump(tmp.path()); }) == ErrorCode::InvariantViolation);
}

TEST_CASE("synthetic dumps") {
  SyntheticSpec spec;
  spec.n_examples = 40;
  spec.attention_shift = 0.9;
  spec.hidden_shift = 2.0;

  SUBCASE("same spec and seed give identical files") {
    TempDir a, b;
    const auto x = synthesize_dump(spec, 5);
    const auto y = synthesize_dump(spec, 5);
    write_dump(x.manifest, x.records, a.path());
    write_dump(y.manifest, y.records, b.path());
    CHECK(bytes_of(a / kRecordsFile) == bytes_of(b / kRecordsFile));
    CHECK(bytes_of(a / kManifestFile) == bytes_of(b / kManifestFile));
  }
  SUBCASE("large shifts clamp without breaking invariants") {
    TempDir a;
    const auto x = synthesize_dump(spec, 2);
    write_dump(x.manifest, x.records, a.path());
    const auto summary = validate_dump(a.path());
    CHECK(summary.n_examples == 40);
    CHECK(summary.n_hallucinated == 20);
    CHECK(summary.n_faithful == 20);
    CHECK(x.signal_cells.size() == 10);
  }
  SUBCASE("spec JSON round-trips and rejects unknown keys") {
    const auto doc = synthetic_spec_to_json(spec);
    CHECK(synthetic_spec_to_json(synthetic_spec_from_json(doc)) == doc);
    auto bad = doc;
    bad["surprise"] = true;
    CHECK_THROWS_AS(synthetic_spec_from_json(bad), Error);
  }
  SUBCASE("impossible specs are refused") {
    auto bad = spec;
    bad.signal_cells = bad.n_layers * bad.n_heads + 1;
    CHECK_THROWS_AS(synthesize_dump(bad, 0), Error);
    bad = spec;
    bad.min_tokens = 0;
    CHECK_THROWS_AS(synthesize_dump(bad, 0), Error);
  }
}
