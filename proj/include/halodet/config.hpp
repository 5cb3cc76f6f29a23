#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "halodet/adapter.hpp"
#include "halodet/sweep.hpp"
#include "json.hpp"

namespace halodet {

// A sweep experiment file. Relative paths resolve against the directory
// holding the file. The schema is published in docs/config.schema.json.
struct RunConfig {
  ExperimentPlan plan;
  std::optional<std::filesystem::path> output_dir;
  std::optional<AdapterHandle> adapter;
};

// Parses and validates a run config. Unknown keys anywhere are rejected with
// Error(ConfigError). `default_adapter` (typically from HALODET_ADAPTER) is
// used when the file has no "adapter" block.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir,
                           const std::optional<std::string>& default_adapter = std::nullopt);

RunConfig load_run_config(const std::filesystem::path& file,
                          const std::optional<std::string>& default_adapter = std::nullopt);

// Classifier hyperparameter blocks shared with the fit command.
LogRegParams logreg_params_from_json(const nlohmann::json& doc);
GbdtParams gbdt_params_from_json(const nlohmann::json& doc);
ProbeParams probe_params_from_json(const nlohmann::json& doc);

}  // namespace halodet
