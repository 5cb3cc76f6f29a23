#include "halodet/activation_io.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "halodet/error.hpp"
#include "json.hpp"

namespace halodet {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'H', 'A', 'L', 'O'};

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xffU) << 24) | ((v & 0xff00U) << 8) | ((v >> 8) & 0xff00U) | (v >> 24);
}

void put_u32(std::string& out, std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap32(v);
  char bytes[4];
  std::memcpy(bytes, &v, 4);
  out.append(bytes, 4);
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  std::memcpy(&v, p, 4);
  if constexpr (std::endian::native == std::endian::big) v = byteswap32(v);
  return v;
}

float get_f32(const char* p) { return std::bit_cast<float>(get_u32(p)); }

[[noreturn]] void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

std::string io_message(const std::string& what, const std::filesystem::path& path) {
  return what + " '" + path.string() + "': " + std::strerror(errno);
}

const std::set<std::string>& manifest_keys() {
  static const std::set<std::string> keys = {"format_version", "dataset_name", "extractor_model_id",
                                             "n_layers",       "n_heads",      "hidden_dim",
                                             "hidden_layers_dumped", "examples"};
  return keys;
}

const std::set<std::string>& example_keys() {
  static const std::set<std::string> keys = {"id", "label", "byte_offset", "n_gen_tokens"};
  return keys;
}

void require_exact_keys(const json& object, const std::set<std::string>& keys, const std::string& where) {
  if (!object.is_object()) fail(ErrorCode::MalformedManifest, where + " is not a JSON object");
  for (const auto& [key, value] : object.items()) {
    if (!keys.contains(key)) fail(ErrorCode::MalformedManifest, where + " has unknown key '" + key + "'");
  }
  for (const auto& key : keys) {
    if (!object.contains(key)) fail(ErrorCode::MalformedManifest, where + " is missing key '" + key + "'");
  }
}

std::int64_t get_int(const json& object, const char* key, const std::string& where) {
  const auto& v = object.at(key);
  if (!v.is_number_integer()) fail(ErrorCode::MalformedManifest, where + "." + key + " must be an integer");
  return v.get<std::int64_t>();
}

std::uint64_t get_uint(const json& object, const char* key, const std::string& where) {
  const auto& v = object.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    fail(ErrorCode::MalformedManifest, where + "." + key + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

std::string get_string(const json& object, const char* key, const std::string& where) {
  const auto& v = object.at(key);
  if (!v.is_string()) fail(ErrorCode::MalformedManifest, where + "." + key + " must be a string");
  return v.get<std::string>();
}

std::string coords(int t, int layer, int head) {
  return "(t=" + std::to_string(t) + ", layer=" + std::to_string(layer) + ", head=" + std::to_string(head) + ")";
}

class Fd {
 public:
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }
  int release() {
    const int fd = fd_;
    fd_ = -1;
    return fd;
  }

 private:
  int fd_;
};

void pread_exact(int fd, char* out, std::size_t size, std::uint64_t offset, const std::filesystem::path& path) {
  std::size_t done = 0;
  while (done < size) {
    const ssize_t n = ::pread(fd, out + done, size - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(ErrorCode::Io, io_message("read failed on", path));
    }
    if (n == 0) fail(ErrorCode::OffsetPastEnd, "unexpected end of file in '" + path.string() + "'");
    done += static_cast<std::size_t>(n);
  }
}

void check_records_header(const char* header, const std::filesystem::path& path) {
  if (std::memcmp(header, kMagic, 4) != 0) fail(ErrorCode::BadMagic, "bad magic in '" + path.string() + "'");
  const std::uint32_t version = get_u32(header + 4);
  if (version != static_cast<std::uint32_t>(kFormatVersion)) {
    fail(ErrorCode::UnsupportedVersion,
         "unsupported records version " + std::to_string(version) + " in '" + path.string() + "'");
  }
}

}  // namespace

AttentionMass::AttentionMass(int n_tokens, int n_layers, int n_heads)
    : n_tokens_(n_tokens),
      n_layers_(n_layers),
      n_heads_(n_heads),
      context_(static_cast<std::size_t>(n_tokens) * n_layers * n_heads, 0.0f),
      generated_(static_cast<std::size_t>(n_tokens) * n_layers * n_heads, 0.0f) {}

std::uint64_t ActivationManifest::record_bytes(std::uint32_t n_tokens) const {
  const std::uint64_t t = n_tokens;
  const std::uint64_t hidden = static_cast<std::uint64_t>(hidden_layers_dumped.size()) * t *
                               static_cast<std::uint64_t>(hidden_dim);
  const std::uint64_t attention = 2 * t * static_cast<std::uint64_t>(n_layers) * static_cast<std::uint64_t>(n_heads);
  return 4 + 4 * (hidden + attention);
}

bool ActivationManifest::dumps_layer(int layer) const {
  for (int l : hidden_layers_dumped) {
    if (l == layer) return true;
  }
  return false;
}

void validate_manifest(const ActivationManifest& m) {
  if (m.format_version != kFormatVersion) {
    fail(ErrorCode::UnsupportedVersion, "unsupported format_version " + std::to_string(m.format_version));
  }
  if (m.n_layers < 1) fail(ErrorCode::InvariantViolation, "n_layers must be >= 1");
  if (m.n_heads < 1) fail(ErrorCode::InvariantViolation, "n_heads must be >= 1");
  if (m.hidden_dim < 1) fail(ErrorCode::InvariantViolation, "hidden_dim must be >= 1");
  for (std::size_t i = 0; i < m.hidden_layers_dumped.size(); ++i) {
    const int layer = m.hidden_layers_dumped[i];
    if (layer < 0 || layer >= m.n_layers) {
      fail(ErrorCode::InvariantViolation, "hidden layer " + std::to_string(layer) + " outside [0, n_layers)");
    }
    if (i > 0 && layer <= m.hidden_layers_dumped[i - 1]) {
      fail(ErrorCode::InvariantViolation, "hidden_layers_dumped must be strictly increasing");
    }
  }
  std::set<std::string_view> seen;
  std::uint64_t expected_offset = kRecordsHeaderBytes;
  for (const auto& e : m.examples) {
    if (!seen.insert(e.id).second) fail(ErrorCode::DuplicateId, "duplicate id '" + e.id + "'");
    if (e.label != kLabelFaithful && e.label != kLabelHallucinated && e.label != kLabelUnlabeled) {
      fail(ErrorCode::InvariantViolation, "example '" + e.id + "' has label " + std::to_string(e.label));
    }
    if (e.n_gen_tokens < 1) fail(ErrorCode::InvariantViolation, "example '" + e.id + "' has n_gen_tokens = 0");
    if (e.byte_offset != expected_offset) {
      fail(ErrorCode::InvariantViolation, "example '" + e.id + "' byte_offset " + std::to_string(e.byte_offset) +
                                              " does not match packed layout (expected " +
                                              std::to_string(expected_offset) + ")");
    }
    expected_offset += m.record_bytes(e.n_gen_tokens);
  }
}

void validate_record(const ActivationManifest& m, const ExampleMeta& meta, const ActivationRecord& r) {
  const std::string who = "example '" + meta.id + "': ";
  const int t_count = static_cast<int>(meta.n_gen_tokens);
  const auto& att = r.attention;
  if (att.n_tokens() != t_count || att.n_layers() != m.n_layers || att.n_heads() != m.n_heads) {
    fail(ErrorCode::DimensionMismatch,
         who + "attention tensor is " + std::to_string(att.n_tokens()) + "x" + std::to_string(att.n_layers()) + "x" +
             std::to_string(att.n_heads()) + ", expected " + std::to_string(t_count) + "x" +
             std::to_string(m.n_layers) + "x" + std::to_string(m.n_heads));
  }
  if (r.hidden_states.size() != m.hidden_layers_dumped.size()) {
    fail(ErrorCode::DimensionMismatch, who + "hidden states present for " + std::to_string(r.hidden_states.size()) +
                                           " layers, manifest dumps " +
                                           std::to_string(m.hidden_layers_dumped.size()));
  }
  for (int layer : m.hidden_layers_dumped) {
    const auto it = r.hidden_states.find(layer);
    if (it == r.hidden_states.end()) {
      fail(ErrorCode::DimensionMismatch, who + "missing hidden states for layer " + std::to_string(layer));
    }
    const auto& h = it->second;
    if (h.rows() != t_count || h.cols() != m.hidden_dim) {
      fail(ErrorCode::DimensionMismatch, who + "layer " + std::to_string(layer) + " hidden states are " +
                                             std::to_string(h.rows()) + "x" + std::to_string(h.cols()) +
                                             ", expected " + std::to_string(t_count) + "x" +
                                             std::to_string(m.hidden_dim));
    }
    if (!h.allFinite()) fail(ErrorCode::CorruptRecord, who + "corrupt record: non-finite hidden state");
  }
  for (int t = 0; t < t_count; ++t) {
    for (int l = 0; l < m.n_layers; ++l) {
      for (int hd = 0; hd < m.n_heads; ++hd) {
        const float c = att.context(t, l, hd);
        const float g = att.generated(t, l, hd);
        if (!std::isfinite(c) || !std::isfinite(g)) {
          fail(ErrorCode::CorruptRecord, who + "corrupt record: non-finite attention mass at " + coords(t, l, hd));
        }
        if (c < 0.0f || g < 0.0f) {
          fail(ErrorCode::InvariantViolation, who + "negative attention mass at " + coords(t, l, hd));
        }
        if (!(c + g > 0.0f)) {
          fail(ErrorCode::InvariantViolation, who + "attention mass sums to zero at " + coords(t, l, hd));
        }
      }
    }
  }
}

std::string manifest_to_json(const ActivationManifest& m) {
  json examples = json::array();
  for (const auto& e : m.examples) {
    examples.push_back(
        {{"id", e.id}, {"label", e.label}, {"byte_offset", e.byte_offset}, {"n_gen_tokens", e.n_gen_tokens}});
  }
  const json doc = {{"format_version", m.format_version},
                    {"dataset_name", m.dataset_name},
                    {"extractor_model_id", m.extractor_model_id},
                    {"n_layers", m.n_layers},
                    {"n_heads", m.n_heads},
                    {"hidden_dim", m.hidden_dim},
                    {"hidden_layers_dumped", m.hidden_layers_dumped},
                    {"examples", examples}};
  return doc.dump(1) + "\n";
}

ActivationManifest manifest_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    // The parser reports the byte where it stopped; running off the end means
    // the document was cut short.
    if (e.byte >= text.size() || text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
      fail(ErrorCode::TruncatedManifest, std::string("truncated manifest: ") + e.what());
    }
    fail(ErrorCode::MalformedManifest, std::string("malformed manifest: ") + e.what());
  }
  require_exact_keys(doc, manifest_keys(), "manifest");
  ActivationManifest m;
  const std::string where = "manifest";
  const auto version = get_int(doc, "format_version", where);
  if (version != kFormatVersion) {
    fail(ErrorCode::UnsupportedVersion, "unsupported format_version " + std::to_string(version));
  }
  m.format_version = static_cast<int>(version);
  m.dataset_name = get_string(doc, "dataset_name", where);
  m.extractor_model_id = get_string(doc, "extractor_model_id", where);
  auto small_int = [&](const char* key) {
    const auto v = get_int(doc, key, where);
    if (v < INT32_MIN || v > INT32_MAX) fail(ErrorCode::InvariantViolation, where + "." + key + " out of range");
    return static_cast<int>(v);
  };
  m.n_layers = small_int("n_layers");
  m.n_heads = small_int("n_heads");
  m.hidden_dim = small_int("hidden_dim");
  const auto& layers = doc.at("hidden_layers_dumped");
  if (!layers.is_array()) fail(ErrorCode::MalformedManifest, "manifest.hidden_layers_dumped must be an array");
  for (const auto& l : layers) {
    if (!l.is_number_integer()) fail(ErrorCode::MalformedManifest, "hidden layer indices must be integers");
    const auto v = l.get<std::int64_t>();
    if (v < 0 || v > INT32_MAX) fail(ErrorCode::InvariantViolation, "hidden layer index out of range");
    m.hidden_layers_dumped.push_back(static_cast<int>(v));
  }
  const auto& examples = doc.at("examples");
  if (!examples.is_array()) fail(ErrorCode::MalformedManifest, "manifest.examples must be an array");
  m.examples.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const std::string ew = "manifest.examples[" + std::to_string(i) + "]";
    const auto& e = examples[i];
    require_exact_keys(e, example_keys(), ew);
    ExampleMeta meta;
    meta.id = get_string(e, "id", ew);
    const auto label = get_int(e, "label", ew);
    if (label != kLabelFaithful && label != kLabelHallucinated && label != kLabelUnlabeled) {
      fail(ErrorCode::InvariantViolation, ew + ".label must be 0, 1 or 255");
    }
    meta.label = static_cast<std::uint8_t>(label);
    meta.byte_offset = get_uint(e, "byte_offset", ew);
    const auto tokens = get_uint(e, "n_gen_tokens", ew);
    if (tokens > UINT32_MAX) fail(ErrorCode::InvariantViolation, ew + ".n_gen_tokens out of range");
    meta.n_gen_tokens = static_cast<std::uint32_t>(tokens);
    m.examples.push_back(std::move(meta));
  }
  validate_manifest(m);
  return m;
}

ActivationManifest write_dump(ActivationManifest manifest, std::span<const ActivationRecord> records,
                              const std::filesystem::path& dir) {
  if (records.size() != manifest.examples.size()) {
    fail(ErrorCode::DimensionMismatch, "manifest lists " + std::to_string(manifest.examples.size()) +
                                           " examples but " + std::to_string(records.size()) + " records given");
  }
  std::uint64_t offset = kRecordsHeaderBytes;
  for (auto& e : manifest.examples) {
    e.byte_offset = offset;
    offset += manifest.record_bytes(e.n_gen_tokens);
  }
  validate_manifest(manifest);
  for (std::size_t i = 0; i < records.size(); ++i) validate_record(manifest, manifest.examples[i], records[i]);

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create '" + dir.string() + "': " + ec.message());

  const auto records_path = dir / kRecordsFile;
  std::ofstream out(records_path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, io_message("cannot open for writing", records_path));
  std::string buffer;
  buffer.append(kMagic, 4);
  put_u32(buffer, static_cast<std::uint32_t>(kFormatVersion));
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto t_count = manifest.examples[i].n_gen_tokens;
    buffer.clear();
    buffer.reserve(manifest.record_bytes(t_count));
    put_u32(buffer, t_count);
    for (int layer : manifest.hidden_layers_dumped) {
      const auto& h = r.hidden_states.at(layer);
      for (Eigen::Index row = 0; row < h.rows(); ++row) {
        for (Eigen::Index col = 0; col < h.cols(); ++col) put_f32(buffer, h(row, col));
      }
    }
    const auto ctx = r.attention.context_values();
    const auto gen = r.attention.generated_values();
    for (std::size_t k = 0; k < ctx.size(); ++k) {
      put_f32(buffer, ctx[k]);
      put_f32(buffer, gen[k]);
    }
    out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  }
  out.close();
  if (!out) fail(ErrorCode::Io, io_message("write failed on", records_path));

  const auto manifest_path = dir / kManifestFile;
  std::ofstream mout(manifest_path, std::ios::trunc);
  if (!mout) fail(ErrorCode::Io, io_message("cannot open for writing", manifest_path));
  mout << manifest_to_json(manifest);
  mout.close();
  if (!mout) fail(ErrorCode::Io, io_message("write failed on", manifest_path));
  return manifest;
}

ActivationManifest read_manifest(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestFile;
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, io_message("cannot open", manifest_path));
  std::ostringstream text;
  text << in.rdbuf();
  auto manifest = manifest_from_json(text.str());

  const auto records_path = dir / kRecordsFile;
  std::ifstream rin(records_path, std::ios::binary);
  if (!rin) fail(ErrorCode::Io, io_message("cannot open", records_path));
  char header[kRecordsHeaderBytes];
  rin.read(header, kRecordsHeaderBytes);
  if (rin.gcount() != static_cast<std::streamsize>(kRecordsHeaderBytes)) {
    fail(ErrorCode::BadMagic, "records file '" + records_path.string() + "' too short for header");
  }
  check_records_header(header, records_path);
  return manifest;
}

DumpReader::DumpReader(const std::filesystem::path& dir) : dir_(dir), manifest_(read_manifest(dir)) {
  for (std::size_t i = 0; i < manifest_.examples.size(); ++i) index_.emplace(manifest_.examples[i].id, i);
  const auto records_path = dir_ / kRecordsFile;
  Fd fd(::open(records_path.c_str(), O_RDONLY | O_CLOEXEC));
  if (fd.get() < 0) fail(ErrorCode::Io, io_message("cannot open", records_path));
  struct stat st {};
  if (::fstat(fd.get(), &st) != 0) fail(ErrorCode::Io, io_message("cannot stat", records_path));
  file_size_ = static_cast<std::uint64_t>(st.st_size);
  fd_ = fd.release();
}

DumpReader::~DumpReader() {
  if (fd_ >= 0) ::close(fd_);
}

std::size_t DumpReader::index_of(std::string_view example_id) const {
  const auto it = index_.find(std::string(example_id));
  if (it == index_.end()) fail(ErrorCode::UnknownId, "unknown example id '" + std::string(example_id) + "'");
  return it->second;
}

ActivationRecord DumpReader::read(std::string_view example_id) const { return read(index_of(example_id)); }

ActivationRecord DumpReader::read(std::size_t index) const {
  const auto& m = manifest_;
  if (index >= m.examples.size()) fail(ErrorCode::UnknownId, "example index " + std::to_string(index) + " out of range");
  const auto& meta = m.examples[index];
  const std::uint64_t size = m.record_bytes(meta.n_gen_tokens);
  const auto records_path = dir_ / kRecordsFile;
  if (meta.byte_offset + size > file_size_) {
    fail(ErrorCode::OffsetPastEnd, "record '" + meta.id + "' at offset " + std::to_string(meta.byte_offset) +
                                       " (+" + std::to_string(size) + " bytes) extends past end of '" +
                                       records_path.string() + "' (" + std::to_string(file_size_) + " bytes)");
  }
  std::string bytes(size, '\0');
  pread_exact(fd_, bytes.data(), bytes.size(), meta.byte_offset, records_path);
  bytes_read_ += size;

  const char* p = bytes.data();
  const std::uint32_t t_count = get_u32(p);
  p += 4;
  if (t_count != meta.n_gen_tokens) {
    fail(ErrorCode::CorruptRecord, "corrupt record '" + meta.id + "': token count " + std::to_string(t_count) +
                                       " disagrees with manifest (" + std::to_string(meta.n_gen_tokens) + ")");
  }
  ActivationRecord r;
  const int t = static_cast<int>(t_count);
  for (int layer : m.hidden_layers_dumped) {
    HiddenMatrix h(t, m.hidden_dim);
    for (int row = 0; row < t; ++row) {
      for (int col = 0; col < m.hidden_dim; ++col) {
        h(row, col) = get_f32(p);
        p += 4;
      }
    }
    r.hidden_states.emplace(layer, std::move(h));
  }
  r.attention = AttentionMass(t, m.n_layers, m.n_heads);
  auto ctx = r.attention.context_values();
  auto gen = r.attention.generated_values();
  for (std::size_t k = 0; k < ctx.size(); ++k) {
    ctx[k] = get_f32(p);
    gen[k] = get_f32(p + 4);
    p += 8;
  }
  validate_record(m, meta, r);
  return r;
}

ActivationRecord read_record(const std::filesystem::path& dir, std::string_view example_id) {
  DumpReader reader(dir);
  return reader.read(example_id);
}

DumpSummary validate_dump(const std::filesystem::path& dir) {
  DumpReader reader(dir);
  DumpSummary summary;
  const auto& m = reader.manifest();
  summary.n_examples = m.examples.size();
  std::uint64_t end = kRecordsHeaderBytes;
  for (std::size_t i = 0; i < m.examples.size(); ++i) {
    reader.read(i);
    const auto& e = m.examples[i];
    end = e.byte_offset + m.record_bytes(e.n_gen_tokens);
    if (e.label == kLabelFaithful) ++summary.n_faithful;
    else if (e.label == kLabelHallucinated) ++summary.n_hallucinated;
    else ++summary.n_unlabeled;
  }
  if (reader.file_size() != end) {
    fail(ErrorCode::InvariantViolation, "records file has " + std::to_string(reader.file_size()) +
                                            " bytes, layout ends at " + std::to_string(end));
  }
  summary.records_bytes = reader.file_size();
  return summary;
}

}  // namespace halodet
