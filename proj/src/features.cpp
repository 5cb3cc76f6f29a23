#include "halodet/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>
#include <unordered_set>

#include "halodet/csv.hpp"
#include "halodet/error.hpp"

namespace halodet {

namespace {

[[noreturn]] void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct Preset {
  const char* model;
  LayerRange range;
};

// Qwen2.5-7B: 28 heads, Llama-3.1-8B: 32 heads, Gemma-2-9B: 16 heads.
constexpr Preset kPresets[] = {
    {"qwen2.5-7b-instruct", {5, 21}},     {"qwen2.5-7b", {5, 21}},
    {"llama-3.1-8b", {8, 22}},            {"llama-3.1-8b-instruct", {8, 22}},
    {"meta-llama-3.1-8b", {8, 22}},       {"meta-llama-3.1-8b-instruct", {8, 22}},
    {"gemma-2-9b-it", {5, 35}},           {"gemma-2-9b", {5, 35}},
};

void check_range(const LayerRange& r, int n_layers, int n_heads, int cap, bool enforce_cap) {
  if (r.lo < 0 || r.hi < r.lo || r.hi >= n_layers) {
    fail(ErrorCode::ConfigError, "layer range [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) +
                                     "] violates 0 <= lo <= hi < n_layers (" + std::to_string(n_layers) + ")");
  }
  const long features = static_cast<long>(r.count()) * n_heads;
  if (enforce_cap && features > cap) {
    fail(ErrorCode::FeatureCap, "layer range [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) + "] gives " +
                                    std::to_string(features) + " features, cap is " + std::to_string(cap));
  }
}

}  // namespace

double lookback_ratio(double context_mean, double generated_mean) {
  const double total = context_mean + generated_mean;
  if (!(total > 0.0)) {
    fail(ErrorCode::DegenerateAttention, "degenerate attention: context and generated mass are both zero");
  }
  return context_mean / total;
}

std::vector<double> mean_lookback_features(const ActivationRecord& record, const LookbackConfig& cfg) {
  const auto& att = record.attention;
  const auto& r = cfg.layers;
  if (r.lo < 0 || r.hi < r.lo || r.hi >= att.n_layers()) {
    fail(ErrorCode::ConfigError, "layer range [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) +
                                     "] outside record with " + std::to_string(att.n_layers()) + " layers");
  }
  const int heads = att.n_heads();
  const int t_count = att.n_tokens();
  if (t_count < 1) fail(ErrorCode::InvalidArgument, "record has no answer tokens");
  std::vector<double> sums(static_cast<std::size_t>(r.count()) * heads, 0.0);
  for (int t = 0; t < t_count; ++t) {
    std::size_t k = 0;
    for (int l = r.lo; l <= r.hi; ++l) {
      for (int h = 0; h < heads; ++h, ++k) {
        const double c = att.context(t, l, h);
        const double g = att.generated(t, l, h);
        if (!(c + g > 0.0)) {
          fail(ErrorCode::DegenerateAttention, "degenerate attention at (t=" + std::to_string(t) +
                                                   ", layer=" + std::to_string(l) + ", head=" + std::to_string(h) +
                                                   ")");
        }
        sums[k] += lookback_ratio(c, g);
      }
    }
  }
  for (auto& s : sums) s /= static_cast<double>(t_count);
  return sums;
}

std::string_view pool_component_name(PoolComponent c) {
  switch (c) {
    case PoolComponent::Mean: return "mean";
    case PoolComponent::Max: return "max";
    case PoolComponent::Last: return "last";
  }
  return "?";
}

PoolComponent pool_component_from_name(std::string_view name) {
  if (name == "mean") return PoolComponent::Mean;
  if (name == "max") return PoolComponent::Max;
  if (name == "last") return PoolComponent::Last;
  fail(ErrorCode::ConfigError, "unknown pooling component '" + std::string(name) + "'");
}

const Eigen::VectorXd& PooledHidden::part(PoolComponent c) const {
  switch (c) {
    case PoolComponent::Mean: return mean;
    case PoolComponent::Max: return max;
    case PoolComponent::Last: return last;
  }
  return mean;
}

PooledHidden pool_hidden(const ActivationRecord& record, const PoolingConfig& cfg) {
  const auto it = record.hidden_states.find(cfg.layer);
  if (it == record.hidden_states.end()) {
    fail(ErrorCode::ConfigError, "hidden layer " + std::to_string(cfg.layer) + " is not in the dump");
  }
  if (cfg.components.empty()) fail(ErrorCode::ConfigError, "pooling needs at least one component");
  const auto& h = it->second;
  const auto t_count = h.rows();
  const auto d = h.cols();
  if (t_count < 1) fail(ErrorCode::InvalidArgument, "record has no answer tokens");
  PooledHidden out;
  out.mean = Eigen::VectorXd::Zero(d);
  out.max.resize(d);
  out.last.resize(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    double sum = 0.0;
    double best = static_cast<double>(h(0, k));
    for (Eigen::Index t = 0; t < t_count; ++t) {
      const double v = h(t, k);
      sum += v;
      if (v > best) best = v;
    }
    out.mean[k] = sum / static_cast<double>(t_count);
    out.max[k] = best;
    out.last[k] = static_cast<double>(h(t_count - 1, k));
  }
  return out;
}

std::optional<LayerRange> preset_layer_range(std::string_view extractor_model_id) {
  const auto slash = extractor_model_id.rfind('/');
  const std::string name = lower(slash == std::string_view::npos ? extractor_model_id
                                                                  : extractor_model_id.substr(slash + 1));
  for (const auto& p : kPresets) {
    if (name == p.model) return p.range;
  }
  return std::nullopt;
}

LookbackConfig select_layer_range(int n_layers, int n_heads, int cap, std::optional<LayerRange> override_range) {
  if (n_layers < 1 || n_heads < 1) fail(ErrorCode::InvalidArgument, "n_layers and n_heads must be >= 1");
  if (cap < n_heads) {
    fail(ErrorCode::FeatureCap, "feature cap " + std::to_string(cap) + " is smaller than one layer of " +
                                    std::to_string(n_heads) + " heads");
  }
  LookbackConfig cfg;
  cfg.feature_cap = cap;
  if (override_range) {
    check_range(*override_range, n_layers, n_heads, cap, true);
    cfg.layers = *override_range;
    return cfg;
  }
  const int k = std::min(n_layers, cap / n_heads);
  int lo = n_layers / 2 - k / 2;
  lo = std::clamp(lo, 0, n_layers - k);
  cfg.layers = {lo, lo + k - 1};
  return cfg;
}

LookbackConfig lookback_config_for(const ActivationManifest& manifest, int cap,
                                   std::optional<LayerRange> override_range) {
  if (!override_range) {
    if (auto preset = preset_layer_range(manifest.extractor_model_id);
        preset && preset->hi < manifest.n_layers && preset->count() * manifest.n_heads <= cap) {
      override_range = preset;
    }
  }
  return select_layer_range(manifest.n_layers, manifest.n_heads, cap, override_range);
}

void validate_feature_matrix(const FeatureMatrix& m) {
  const auto n = static_cast<std::size_t>(m.values.rows());
  if (m.example_ids.size() != n || m.labels.size() != n) {
    fail(ErrorCode::Misaligned, "feature matrix has " + std::to_string(n) + " rows but " +
                                    std::to_string(m.example_ids.size()) + " ids and " +
                                    std::to_string(m.labels.size()) + " labels");
  }
  if (m.feature_names.size() != static_cast<std::size_t>(m.values.cols())) {
    fail(ErrorCode::Misaligned, "feature matrix has " + std::to_string(m.values.cols()) + " columns but " +
                                    std::to_string(m.feature_names.size()) + " names");
  }
  std::unordered_set<std::string_view> names;
  for (const auto& name : m.feature_names) {
    if (!names.insert(name).second) fail(ErrorCode::InvalidArgument, "duplicate feature name '" + name + "'");
  }
  if (!m.values.allFinite()) fail(ErrorCode::NonFinite, "feature matrix contains NaN or Inf");
}

FeatureMatrix select_rows(const FeatureMatrix& m, std::span<const std::size_t> rows) {
  FeatureMatrix out;
  out.feature_names = m.feature_names;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), m.values.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(i)) = m.values.row(static_cast<Eigen::Index>(rows[i]));
    out.example_ids.push_back(m.example_ids[rows[i]]);
    out.labels.push_back(m.labels[rows[i]]);
  }
  return out;
}

std::string_view feature_strategy_name(FeatureStrategy s) {
  return s == FeatureStrategy::Lookback ? "lookback" : "hidden_pooled";
}

FeatureStrategy feature_strategy_from_name(std::string_view name) {
  if (name == "lookback") return FeatureStrategy::Lookback;
  if (name == "hidden_pooled" || name == "hidden") return FeatureStrategy::HiddenPooled;
  fail(ErrorCode::ConfigError, "unknown feature strategy '" + std::string(name) + "'");
}

FeatureMatrix assemble_features(FeatureStrategy strategy, std::span<const FeatureMatrix> parts,
                                std::optional<int> cap_check) {
  if (parts.empty()) fail(ErrorCode::InvalidArgument, "no feature parts to assemble");
  const auto& first = parts.front();
  Eigen::Index total = 0;
  for (const auto& part : parts) {
    if (part.example_ids != first.example_ids) {
      fail(ErrorCode::Misaligned, std::string(feature_strategy_name(strategy)) +
                                      " feature parts do not share example ids in the same order");
    }
    total += part.values.cols();
  }
  if (cap_check && total > *cap_check) {
    fail(ErrorCode::FeatureCap, "assembled " + std::to_string(total) + " features, cap is " +
                                    std::to_string(*cap_check));
  }
  FeatureMatrix out;
  out.example_ids = first.example_ids;
  out.labels = first.labels;
  out.values.resize(first.values.rows(), total);
  Eigen::Index col = 0;
  for (const auto& part : parts) {
    out.values.middleCols(col, part.values.cols()) = part.values;
    col += part.values.cols();
    out.feature_names.insert(out.feature_names.end(), part.feature_names.begin(), part.feature_names.end());
  }
  validate_feature_matrix(out);
  return out;
}

std::string lookback_feature_name(int layer, int head) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "lb.l%02d.h%02d", layer, head);
  return buf;
}

std::string hidden_feature_name(PoolComponent c, int dim) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "hid.%s.dim%04d", std::string(pool_component_name(c)).c_str(), dim);
  return buf;
}

FeatureMatrix lookback_block(const DumpReader& reader, std::span<const std::size_t> indices,
                             const LookbackConfig& cfg) {
  const auto& m = reader.manifest();
  check_range(cfg.layers, m.n_layers, m.n_heads, cfg.feature_cap, cfg.enforce_cap);
  FeatureMatrix out;
  const Eigen::Index p = static_cast<Eigen::Index>(cfg.layers.count()) * m.n_heads;
  out.values.resize(static_cast<Eigen::Index>(indices.size()), p);
  for (int l = cfg.layers.lo; l <= cfg.layers.hi; ++l) {
    for (int h = 0; h < m.n_heads; ++h) out.feature_names.push_back(lookback_feature_name(l, h));
  }
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto record = reader.read(indices[i]);
    const auto row = mean_lookback_features(record, cfg);
    for (Eigen::Index k = 0; k < p; ++k) out.values(static_cast<Eigen::Index>(i), k) = row[static_cast<std::size_t>(k)];
    out.example_ids.push_back(m.examples[indices[i]].id);
    out.labels.push_back(m.examples[indices[i]].label);
  }
  return out;
}

std::vector<FeatureMatrix> pooled_hidden_blocks(const DumpReader& reader, std::span<const std::size_t> indices,
                                                const PoolingConfig& cfg) {
  const auto& m = reader.manifest();
  if (!m.dumps_layer(cfg.layer)) {
    fail(ErrorCode::ConfigError, "hidden layer " + std::to_string(cfg.layer) + " is not in the dump");
  }
  if (cfg.components.empty()) fail(ErrorCode::ConfigError, "pooling needs at least one component");
  const auto d = static_cast<Eigen::Index>(m.hidden_dim);
  std::vector<FeatureMatrix> parts(cfg.components.size());
  for (std::size_t c = 0; c < cfg.components.size(); ++c) {
    parts[c].values.resize(static_cast<Eigen::Index>(indices.size()), d);
    for (int k = 0; k < m.hidden_dim; ++k) parts[c].feature_names.push_back(hidden_feature_name(cfg.components[c], k));
  }
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto pooled = pool_hidden(reader.read(indices[i]), cfg);
    for (std::size_t c = 0; c < cfg.components.size(); ++c) {
      parts[c].values.row(static_cast<Eigen::Index>(i)) = pooled.part(cfg.components[c]).transpose();
      parts[c].example_ids.push_back(m.examples[indices[i]].id);
      parts[c].labels.push_back(m.examples[indices[i]].label);
    }
  }
  return parts;
}

void write_feature_csv(const FeatureMatrix& m, std::ostream& out) {
  validate_feature_matrix(m);
  std::vector<std::string> header = {"example_id", "label"};
  header.insert(header.end(), m.feature_names.begin(), m.feature_names.end());
  out << csv::join_row(header) << '\n';
  for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
    std::string line = csv::quote(m.example_ids[static_cast<std::size_t>(i)]);
    line += ',';
    line += std::to_string(m.labels[static_cast<std::size_t>(i)]);
    for (Eigen::Index k = 0; k < m.values.cols(); ++k) {
      line += ',';
      line += csv::format_number(m.values(i, k));
    }
    out << line << '\n';
  }
}

FeatureMatrix read_feature_csv(std::string_view text) {
  const auto rows = csv::parse(text);
  if (rows.empty()) fail(ErrorCode::InvalidArgument, "feature csv is empty");
  const auto& header = rows.front();
  if (header.size() < 2 || header[0] != "example_id" || header[1] != "label") {
    fail(ErrorCode::InvalidArgument, "feature csv header must start with example_id,label");
  }
  FeatureMatrix m;
  m.feature_names.assign(header.begin() + 2, header.end());
  const auto n = static_cast<Eigen::Index>(rows.size() - 1);
  const auto p = static_cast<Eigen::Index>(m.feature_names.size());
  m.values.resize(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i) + 1];
    if (static_cast<Eigen::Index>(row.size()) != p + 2) {
      fail(ErrorCode::InvalidArgument, "feature csv row " + std::to_string(i + 1) + " has " +
                                           std::to_string(row.size()) + " fields, expected " +
                                           std::to_string(p + 2));
    }
    m.example_ids.push_back(row[0]);
    const double label = csv::parse_number(row[1]);
    if (label != 0.0 && label != 1.0 && label != 255.0) {
      fail(ErrorCode::InvalidArgument, "feature csv row " + std::to_string(i + 1) + " has label " + row[1]);
    }
    m.labels.push_back(static_cast<std::uint8_t>(label));
    for (Eigen::Index k = 0; k < p; ++k) m.values(i, k) = csv::parse_number(row[static_cast<std::size_t>(k) + 2]);
  }
  validate_feature_matrix(m);
  return m;
}

}  // namespace halodet
