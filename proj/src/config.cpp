#include "halodet/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include "halodet/error.hpp"

namespace halodet {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& message) { throw Error(ErrorCode::ConfigError, message); }

void require_object(const json& doc, const std::string& where) {
  if (!doc.is_object()) fail(where + " must be an object");
}

void check_keys(const json& doc, std::initializer_list<const char*> allowed, const std::string& where) {
  require_object(doc, where);
  for (const auto& [key, value] : doc.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) fail("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get(const json& doc, const char* key, const std::string& where) {
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    fail("'" + std::string(key) + "' in " + where + " is missing or has the wrong type");
  }
}

template <typename T>
void maybe(const json& doc, const char* key, const std::string& where, T& target) {
  if (doc.contains(key)) target = get<T>(doc, key, where);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

AdapterHandle adapter_from_json(const json& doc) {
  check_keys(doc, {"command", "timeout_seconds"}, "adapter");
  AdapterHandle h;
  const auto& cmd = doc.contains("command") ? doc.at("command") : json();
  if (cmd.is_string()) h.command = split_command_line(cmd.get<std::string>());
  else if (cmd.is_array()) h.command = get<std::vector<std::string>>(doc, "command", "adapter");
  else fail("adapter.command must be a string or an array of strings");
  if (h.command.empty()) fail("adapter.command is empty");
  maybe(doc, "timeout_seconds", "adapter", h.timeout_seconds);
  if (!(h.timeout_seconds > 0.0)) fail("adapter.timeout_seconds must be positive");
  return h;
}

DatasetSpec dataset_from_json(const json& doc, const std::filesystem::path& base, std::size_t i) {
  const std::string where = "datasets[" + std::to_string(i) + "]";
  check_keys(doc, {"name", "extractor", "dump", "test_dump", "test_size", "split_seed"}, where);
  DatasetSpec d;
  maybe(doc, "name", where, d.name);
  maybe(doc, "extractor", where, d.extractor);
  d.dump = resolve(base, get<std::string>(doc, "dump", where));
  if (doc.contains("test_dump")) d.test_dump = resolve(base, get<std::string>(doc, "test_dump", where));
  maybe(doc, "test_size", where, d.test_size);
  maybe(doc, "split_seed", where, d.split_seed);
  if (!d.test_dump && d.test_size == 0) fail(where + " needs either test_dump or test_size");
  if (d.test_dump && d.test_size != 0) fail(where + " sets both test_dump and test_size");
  return d;
}

DetectorConfig detector_from_json(const json& doc, std::size_t i) {
  const std::string where = "configs[" + std::to_string(i) + "]";
  check_keys(doc,
             {"id", "strategy", "reducer", "classifier", "layer_range", "feature_cap", "pooling_layer", "components",
              "n_components", "standardize", "logreg", "lambda_grid", "gbdt", "probe"},
             where);
  DetectorConfig c;
  c.id = get<std::string>(doc, "id", where);
  c.input = sweep_input_from_name(get<std::string>(doc, "strategy", where));
  c.classifier = classifier_from_name(get<std::string>(doc, "classifier", where));
  c.reducer = c.input == SweepInput::Tokens ? ReducerChoice::None : ReducerChoice::Pca;
  if (doc.contains("reducer")) c.reducer = reducer_choice_from_name(get<std::string>(doc, "reducer", where));
  if (doc.contains("layer_range")) {
    const auto r = get<std::vector<int>>(doc, "layer_range", where);
    if (r.size() != 2) fail(where + ".layer_range must be [lo, hi]");
    c.layer_range = LayerRange{r[0], r[1]};
  }
  maybe(doc, "feature_cap", where, c.feature_cap);
  if (doc.contains("pooling_layer")) c.pooling_layer = get<int>(doc, "pooling_layer", where);
  if (doc.contains("components")) {
    c.components.clear();
    for (const auto& name : get<std::vector<std::string>>(doc, "components", where)) {
      try {
        c.components.push_back(pool_component_from_name(name));
      } catch (const Error&) {
        fail(where + ": unknown pooling component '" + name + "'");
      }
    }
  }
  maybe(doc, "n_components", where, c.n_components);
  maybe(doc, "standardize", where, c.standardize);
  if (doc.contains("logreg")) c.settings.logreg = logreg_params_from_json(doc.at("logreg"));
  maybe(doc, "lambda_grid", where, c.settings.lambda_grid);
  if (doc.contains("gbdt")) c.settings.gbdt = gbdt_params_from_json(doc.at("gbdt"));
  if (doc.contains("probe")) c.settings.probe = probe_params_from_json(doc.at("probe"));
  return c;
}

}  // namespace

LogRegParams logreg_params_from_json(const json& doc) {
  check_keys(doc, {"l2_lambda", "max_iter", "tol"}, "logreg");
  LogRegParams p;
  maybe(doc, "l2_lambda", "logreg", p.l2_lambda);
  maybe(doc, "max_iter", "logreg", p.max_iter);
  maybe(doc, "tol", "logreg", p.tol);
  if (!(p.l2_lambda >= 0.0) || p.max_iter < 1 || !(p.tol > 0.0)) fail("logreg parameters out of range");
  return p;
}

GbdtParams gbdt_params_from_json(const json& doc) {
  check_keys(doc, {"n_rounds", "max_depth", "learning_rate", "min_samples_leaf", "subsample", "early_stopping_patience"},
             "gbdt");
  GbdtParams p;
  maybe(doc, "n_rounds", "gbdt", p.n_rounds);
  maybe(doc, "max_depth", "gbdt", p.max_depth);
  maybe(doc, "learning_rate", "gbdt", p.learning_rate);
  maybe(doc, "min_samples_leaf", "gbdt", p.min_samples_leaf);
  maybe(doc, "subsample", "gbdt", p.subsample);
  maybe(doc, "early_stopping_patience", "gbdt", p.early_stopping_patience);
  if (p.n_rounds < 0 || p.max_depth < 1 || !(p.learning_rate > 0.0) || p.min_samples_leaf < 1 ||
      !(p.subsample > 0.0 && p.subsample <= 1.0) || p.early_stopping_patience < 1) {
    fail("gbdt parameters out of range");
  }
  return p;
}

ProbeParams probe_params_from_json(const json& doc) {
  check_keys(doc, {"epochs", "step", "l2", "freeze_query", "patience"}, "probe");
  ProbeParams p;
  maybe(doc, "epochs", "probe", p.epochs);
  maybe(doc, "step", "probe", p.step);
  maybe(doc, "l2", "probe", p.l2);
  maybe(doc, "freeze_query", "probe", p.freeze_query);
  maybe(doc, "patience", "probe", p.patience);
  if (p.epochs < 0 || !(p.step > 0.0) || !(p.l2 >= 0.0) || p.patience < 1) fail("probe parameters out of range");
  return p;
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir,
                           const std::optional<std::string>& default_adapter) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(doc,
             {"datasets", "configs", "train_sizes", "seeds", "val_fraction", "parallel", "record_timing", "adapter",
              "output_dir"},
             "config");

  RunConfig rc;
  auto& plan = rc.plan;
  if (!doc.contains("datasets") || !doc.at("datasets").is_array()) fail("config.datasets must be an array");
  if (!doc.contains("configs") || !doc.at("configs").is_array()) fail("config.configs must be an array");
  for (std::size_t i = 0; i < doc.at("datasets").size(); ++i) {
    plan.datasets.push_back(dataset_from_json(doc.at("datasets")[i], base_dir, i));
  }
  for (std::size_t i = 0; i < doc.at("configs").size(); ++i) {
    plan.configs.push_back(detector_from_json(doc.at("configs")[i], i));
  }
  maybe(doc, "train_sizes", "config", plan.train_sizes);
  maybe(doc, "seeds", "config", plan.seeds);
  maybe(doc, "val_fraction", "config", plan.val_fraction);
  maybe(doc, "parallel", "config", plan.parallel);
  maybe(doc, "record_timing", "config", plan.record_timing);
  if (doc.contains("output_dir")) rc.output_dir = resolve(base_dir, get<std::string>(doc, "output_dir", "config"));

  if (doc.contains("adapter")) rc.adapter = adapter_from_json(doc.at("adapter"));
  else if (default_adapter && !default_adapter->empty()) rc.adapter = adapter_from_command_line(*default_adapter);
  if (rc.adapter) {
    for (auto& c : plan.configs) c.settings.adapter = rc.adapter;
  }
  validate_plan(plan);
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& file, const std::optional<std::string>& default_adapter) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "cannot read config " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), file.parent_path(), default_adapter);
}

}  // namespace halodet
