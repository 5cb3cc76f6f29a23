#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "halodet/adapter.hpp"
#include "halodet/classifier.hpp"
#include "halodet/features.hpp"

namespace halodet {

inline const std::vector<int> kDefaultTrainSizes = {50, 100, 250, 500, 750, 1000};
inline const std::vector<std::uint64_t> kDefaultSeeds = {0, 1, 2};
inline constexpr double kDefaultValFraction = 0.2;

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// Stratified draw of `size` examples from a labeled pool (labels 0/1),
// split into train and val with |val| = round(size * val_fraction).
// Class counts follow the pool proportions, adjusted so that both splits
// hold both classes whenever the pool and size allow it. Indices refer to
// positions in `labels` and come back sorted. Deterministic in `seed`.
SplitIndices subsample_split(std::span<const int> labels, std::size_t size, std::uint64_t seed,
                             double val_fraction = kDefaultValFraction);

struct HoldoutIndices {
  std::vector<std::size_t> pool;
  std::vector<std::size_t> test;
};

// Stratified test draw of `test_size` examples; the remainder is the pool.
HoldoutIndices holdout_split(std::span<const int> labels, std::size_t test_size, std::uint64_t seed);

enum class SweepInput { Lookback, HiddenPooled, Tokens };
enum class ReducerChoice { None, Pca, External };

std::string_view sweep_input_name(SweepInput s);
SweepInput sweep_input_from_name(std::string_view name);
std::string_view reducer_choice_name(ReducerChoice r);
ReducerChoice reducer_choice_from_name(std::string_view name);

struct DatasetSpec {
  std::string name;        // defaults to the manifest's dataset_name
  std::string extractor;   // defaults to the manifest's extractor_model_id
  std::filesystem::path dump;
  std::optional<std::filesystem::path> test_dump;
  std::size_t test_size = 0;  // used when test_dump is absent
  std::uint64_t split_seed = 12345;
};

struct DetectorConfig {
  std::string id;
  SweepInput input = SweepInput::Lookback;
  ReducerChoice reducer = ReducerChoice::Pca;
  ClassifierKind classifier = ClassifierKind::LogReg;
  std::optional<LayerRange> layer_range;  // lookback; preset or centred window otherwise
  int feature_cap = kDefaultFeatureCap;
  std::optional<int> pooling_layer;       // hidden/tokens; floor(L / 2) otherwise
  std::vector<PoolComponent> components = {PoolComponent::Mean, PoolComponent::Max, PoolComponent::Last};
  int n_components = 30;
  bool standardize = true;
  ClassifierSettings settings;
};

struct ExperimentPlan {
  std::vector<DatasetSpec> datasets;
  std::vector<DetectorConfig> configs;
  std::vector<int> train_sizes = kDefaultTrainSizes;
  std::vector<std::uint64_t> seeds = kDefaultSeeds;
  double val_fraction = kDefaultValFraction;
  int parallel = 1;
  bool record_timing = false;  // wall_ms is 0 unless enabled, keeping outputs reproducible
};

// Throws Error(ConfigError) on an invalid plan.
void validate_plan(const ExperimentPlan& plan);

struct RunResult {
  std::string config_id;
  std::string strategy;
  std::string reducer;
  std::string classifier;
  std::string extractor;
  std::string dataset;
  int train_size = 0;
  std::uint64_t seed = 0;
  std::optional<double> roc_auc;
  std::optional<int> k_eff;
  double wall_ms = 0.0;
  std::string status = "ok";  // "ok" or "skipped:<reason>"
  std::string diagnostics;

  bool ok() const { return status == "ok"; }
};

// What a run handed to its fitting code, by example id.
struct RunAudit {
  std::string config_id;
  std::string dataset;
  int train_size = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
  std::vector<std::string> fit_ids;  // every row passed to reducer or classifier fitting
};

using SweepObserver = std::function<void(const RunAudit&)>;

// Runs every (dataset, config, train size, seed) combination. Results come
// back in that nesting order regardless of `plan.parallel`. Runs whose fit or
// metric is undefined are returned with a skipped status, never dropped.
// The observer, if given, is called once per run (serialized).
std::vector<RunResult> run_sweep(const ExperimentPlan& plan, const SweepObserver& observer = nullptr);

inline constexpr const char* kResultsHeader =
    "config_id,strategy,reducer,classifier,extractor,dataset,train_size,seed,roc_auc,k_eff,wall_ms,status";

void write_results_csv(std::span<const RunResult> results, std::ostream& out);
std::vector<RunResult> read_results_csv(std::string_view text);

}  // namespace halodet
