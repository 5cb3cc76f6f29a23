#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "halodet/activation_io.hpp"

namespace halodet {

inline constexpr int kDefaultFeatureCap = 500;

// Fraction of attention mass on the prompt: ctx / (ctx + gen).
// Throws Error(DegenerateAttention) when both masses are zero.
double lookback_ratio(double context_mean, double generated_mean);

struct LayerRange {
  int lo = 0;
  int hi = 0;  // inclusive
  int count() const { return hi - lo + 1; }
  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

struct LookbackConfig {
  LayerRange layers;
  int feature_cap = kDefaultFeatureCap;
  bool enforce_cap = true;
};

// One value per (layer, head) in the range, layer-major: the mean over answer
// tokens of the per-token lookback ratio. Tokens are accumulated in ascending
// order in double precision, so results are reproducible bit-for-bit.
std::vector<double> mean_lookback_features(const ActivationRecord& record, const LookbackConfig& cfg);

enum class PoolComponent { Mean, Max, Last };

std::string_view pool_component_name(PoolComponent c);
PoolComponent pool_component_from_name(std::string_view name);

struct PoolingConfig {
  int layer = 0;
  std::vector<PoolComponent> components = {PoolComponent::Mean, PoolComponent::Max, PoolComponent::Last};
};

struct PooledHidden {
  Eigen::VectorXd mean;
  Eigen::VectorXd max;
  Eigen::VectorXd last;

  const Eigen::VectorXd& part(PoolComponent c) const;
};

// Per-dimension mean and max over the answer tokens of one layer, plus the
// final token's vector. Throws Error(ConfigError) if the layer is not dumped.
PooledHidden pool_hidden(const ActivationRecord& record, const PoolingConfig& cfg);

// Hand-picked ranges for known extractor models; matched on the model name
// after any "org/" prefix, case-insensitively.
std::optional<LayerRange> preset_layer_range(std::string_view extractor_model_id);

// Explicit override (checked against bounds and cap), or a window of
// min(L, cap / H) layers centred on floor(L / 2).
LookbackConfig select_layer_range(int n_layers, int n_heads, int cap, std::optional<LayerRange> override_range);

// Override if given, else the model preset if one matches and fits, else
// the centred window.
LookbackConfig lookback_config_for(const ActivationManifest& manifest, int cap,
                                   std::optional<LayerRange> override_range);

inline int default_pooling_layer(int n_layers) { return n_layers / 2; }

struct FeatureMatrix {
  Eigen::MatrixXd values;  // n x p
  std::vector<std::string> feature_names;
  std::vector<std::string> example_ids;
  std::vector<std::uint8_t> labels;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

// Checks shapes, name uniqueness and finiteness.
void validate_feature_matrix(const FeatureMatrix& m);

FeatureMatrix select_rows(const FeatureMatrix& m, std::span<const std::size_t> rows);

enum class FeatureStrategy { Lookback, HiddenPooled };

std::string_view feature_strategy_name(FeatureStrategy s);
FeatureStrategy feature_strategy_from_name(std::string_view name);

// Column-wise concatenation of parts that share example ids in the same
// order. Throws Error(Misaligned) on row mismatch and Error(FeatureCap) when
// a cap is given and exceeded.
FeatureMatrix assemble_features(FeatureStrategy strategy, std::span<const FeatureMatrix> parts,
                                std::optional<int> cap_check = std::nullopt);

std::string lookback_feature_name(int layer, int head);
std::string hidden_feature_name(PoolComponent c, int dim);

// Raw feature blocks over the given manifest indices.
FeatureMatrix lookback_block(const DumpReader& reader, std::span<const std::size_t> indices,
                             const LookbackConfig& cfg);
std::vector<FeatureMatrix> pooled_hidden_blocks(const DumpReader& reader, std::span<const std::size_t> indices,
                                                const PoolingConfig& cfg);

// CSV: example_id,label,<feature names...>; 9 significant digits.
void write_feature_csv(const FeatureMatrix& m, std::ostream& out);
FeatureMatrix read_feature_csv(std::string_view text);

}  // namespace halodet
