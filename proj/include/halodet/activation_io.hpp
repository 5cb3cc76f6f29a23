#pragma once

// On-disk activation dumps: a JSON manifest plus a little-endian binary
// record file, one record per answer.
//
//   manifest.json  format_version, dataset_name, extractor_model_id,
//                  n_layers, n_heads, hidden_dim, hidden_layers_dumped,
//                  examples[{id, label, byte_offset, n_gen_tokens}]
//   records.bin    "HALO" | u32 version | record | record | ...
//   record         u32 T
//                  for each dumped layer (manifest order): T*d f32, row-major
//                  T*L*H pairs of f32 (ctx_mean, new_mean), t-major, then
//                  layer, then head
//
// Records are packed back to back starting right after the 8-byte header, so
// every byte offset is determined by the token counts that precede it.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace halodet {

inline constexpr std::uint8_t kLabelFaithful = 0;
inline constexpr std::uint8_t kLabelHallucinated = 1;
inline constexpr std::uint8_t kLabelUnlabeled = 255;

inline constexpr int kFormatVersion = 1;
inline constexpr std::uint64_t kRecordsHeaderBytes = 8;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kRecordsFile = "records.bin";

struct ExampleMeta {
  std::string id;
  std::uint8_t label = kLabelUnlabeled;
  std::uint64_t byte_offset = 0;
  std::uint32_t n_gen_tokens = 0;
};

struct ActivationManifest {
  int format_version = kFormatVersion;
  std::string dataset_name;
  std::string extractor_model_id;
  int n_layers = 0;
  int n_heads = 0;
  int hidden_dim = 0;
  std::vector<int> hidden_layers_dumped;
  std::vector<ExampleMeta> examples;

  // Size in bytes of a record with the given number of answer tokens.
  std::uint64_t record_bytes(std::uint32_t n_tokens) const;

  bool dumps_layer(int layer) const;
};

// Row-major so a record's hidden block maps straight onto the file layout.
using HiddenMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per (token, layer, head) mean attention on prompt positions ("context") and
// on answer positions up to and including the token ("generated").
class AttentionMass {
 public:
  AttentionMass() = default;
  AttentionMass(int n_tokens, int n_layers, int n_heads);

  int n_tokens() const { return n_tokens_; }
  int n_layers() const { return n_layers_; }
  int n_heads() const { return n_heads_; }

  std::size_t index(int t, int layer, int head) const {
    return (static_cast<std::size_t>(t) * n_layers_ + layer) * n_heads_ + head;
  }

  float context(int t, int layer, int head) const { return context_[index(t, layer, head)]; }
  float generated(int t, int layer, int head) const { return generated_[index(t, layer, head)]; }
  void set(int t, int layer, int head, float context_mean, float generated_mean) {
    const auto i = index(t, layer, head);
    context_[i] = context_mean;
    generated_[i] = generated_mean;
  }

  std::span<float> context_values() { return context_; }
  std::span<float> generated_values() { return generated_; }
  std::span<const float> context_values() const { return context_; }
  std::span<const float> generated_values() const { return generated_; }

  friend bool operator==(const AttentionMass&, const AttentionMass&) = default;

 private:
  int n_tokens_ = 0;
  int n_layers_ = 0;
  int n_heads_ = 0;
  std::vector<float> context_;
  std::vector<float> generated_;
};

struct ActivationRecord {
  std::map<int, HiddenMatrix> hidden_states;  // layer -> T x d
  AttentionMass attention;

  int n_tokens() const { return attention.n_tokens(); }
};

// Checks every manifest invariant, including that byte offsets match the
// packed layout. Throws halodet::Error.
void validate_manifest(const ActivationManifest& manifest);

// Checks one record against its manifest entry: dimensions, finiteness and
// the attention-mass invariants. Throws halodet::Error naming the example.
void validate_record(const ActivationManifest& manifest, const ExampleMeta& meta,
                     const ActivationRecord& record);

// Writes manifest.json and records.bin into `dir` (created if missing).
// Byte offsets are assigned by the writer; the manifest actually written is
// returned.
ActivationManifest write_dump(ActivationManifest manifest, std::span<const ActivationRecord> records,
                              const std::filesystem::path& dir);

// Parses and validates manifest.json and checks the records.bin header.
ActivationManifest read_manifest(const std::filesystem::path& dir);

std::string manifest_to_json(const ActivationManifest& manifest);
ActivationManifest manifest_from_json(std::string_view text);

// Random-access record reader. Reads go through pread on a shared descriptor,
// so one reader may serve many threads.
class DumpReader {
 public:
  explicit DumpReader(const std::filesystem::path& dir);
  ~DumpReader();
  DumpReader(const DumpReader&) = delete;
  DumpReader& operator=(const DumpReader&) = delete;

  const ActivationManifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }

  std::size_t index_of(std::string_view example_id) const;
  ActivationRecord read(std::string_view example_id) const;
  ActivationRecord read(std::size_t index) const;

  std::uint64_t file_size() const { return file_size_; }
  // Total payload bytes fetched by read() so far.
  std::uint64_t bytes_read() const { return bytes_read_.load(); }

 private:
  std::filesystem::path dir_;
  ActivationManifest manifest_;
  std::unordered_map<std::string, std::size_t> index_;
  int fd_ = -1;
  std::uint64_t file_size_ = 0;
  mutable std::atomic<std::uint64_t> bytes_read_{0};
};

// Convenience wrapper around DumpReader for one-off lookups.
ActivationRecord read_record(const std::filesystem::path& dir, std::string_view example_id);

struct DumpSummary {
  std::size_t n_examples = 0;
  std::size_t n_faithful = 0;
  std::size_t n_hallucinated = 0;
  std::size_t n_unlabeled = 0;
  std::uint64_t records_bytes = 0;
};

// Full validation: manifest, every record, and no trailing bytes.
DumpSummary validate_dump(const std::filesystem::path& dir);

}  // namespace halodet
