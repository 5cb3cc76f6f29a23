#include "halodet/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "halodet/activation_io.hpp"
#include "halodet/classifier.hpp"
#include "halodet/config.hpp"
#include "halodet/csv.hpp"
#include "halodet/error.hpp"
#include "halodet/features.hpp"
#include "halodet/metrics.hpp"
#include "halodet/reduce.hpp"
#include "halodet/report.hpp"
#include "halodet/sweep.hpp"
#include "halodet/synth.hpp"
#include "json.hpp"

namespace halodet {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kModelFormat = "halodet-model";
constexpr int kModelVersion = 1;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + " is not valid JSON: " + e.what());
  }
}

void require_absent(const fs::path& path, bool force) {
  if (!force && fs::exists(path)) {
    throw Error(ErrorCode::InvalidArgument, path.string() + " already exists (pass --force to overwrite)");
  }
}

void write_file(const fs::path& path, const std::string& contents, bool force) {
  require_absent(path, force);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << contents;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::optional<std::string> env_adapter() {
  const char* v = std::getenv(kAdapterEnvVar);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

std::optional<LayerRange> parse_layer_range(const std::string& text) {
  if (text.empty()) return std::nullopt;
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    LayerRange r;
    r.lo = std::stoi(text.substr(0, colon), &used);
    r.hi = std::stoi(text.substr(colon + 1), &used);
    return r;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "layer range must look like LO:HI, got '" + text + "'");
  }
}

std::vector<PoolComponent> parse_components(const std::string& text) {
  std::vector<PoolComponent> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(pool_component_from_name(item));
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "at least one pooling component is required");
  return out;
}

// How feature rows are derived from a dump. Stored inside model files so
// scoring rebuilds exactly the columns the model was trained on.
struct FeatureSpec {
  SweepInput input = SweepInput::Lookback;
  std::optional<LayerRange> layers;
  int feature_cap = kDefaultFeatureCap;
  std::optional<int> pooling_layer;
  std::vector<PoolComponent> components = {PoolComponent::Mean, PoolComponent::Max, PoolComponent::Last};
};

// Fills in defaults that depend on the dump so the spec is self-contained.
void resolve_spec(FeatureSpec& spec, const ActivationManifest& m) {
  if (spec.input == SweepInput::Lookback) {
    spec.layers = lookback_config_for(m, spec.feature_cap, spec.layers).layers;
  } else if (!spec.pooling_layer) {
    spec.pooling_layer = default_pooling_layer(m.n_layers);
  }
}

FeatureMatrix dump_features(const DumpReader& reader, const FeatureSpec& spec, std::span<const std::size_t> idx) {
  if (spec.input == SweepInput::Lookback) {
    LookbackConfig cfg;
    cfg.layers = *spec.layers;
    cfg.feature_cap = spec.feature_cap;
    auto block = lookback_block(reader, idx, cfg);
    return block;
  }
  if (spec.input != SweepInput::HiddenPooled) {
    throw Error(ErrorCode::ConfigError, "token states are not a tabular feature strategy");
  }
  PoolingConfig pc{*spec.pooling_layer, spec.components};
  const auto parts = pooled_hidden_blocks(reader, idx, pc);
  return assemble_features(FeatureStrategy::HiddenPooled, parts);
}

std::vector<std::size_t> all_indices(const ActivationManifest& m, bool labeled_only) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.examples.size(); ++i) {
    if (!labeled_only || m.examples[i].label != kLabelUnlabeled) out.push_back(i);
  }
  return out;
}

json spec_to_json(const FeatureSpec& spec) {
  json doc = {{"strategy", sweep_input_name(spec.input)}, {"feature_cap", spec.feature_cap}};
  if (spec.layers) doc["layer_range"] = {spec.layers->lo, spec.layers->hi};
  if (spec.pooling_layer) doc["pooling_layer"] = *spec.pooling_layer;
  std::vector<std::string> comps;
  for (auto c : spec.components) comps.emplace_back(pool_component_name(c));
  doc["components"] = comps;
  return doc;
}

FeatureSpec spec_from_json(const json& doc) {
  FeatureSpec spec;
  spec.input = sweep_input_from_name(doc.at("strategy").get<std::string>());
  spec.feature_cap = doc.at("feature_cap").get<int>();
  if (doc.contains("layer_range")) {
    const auto r = doc.at("layer_range").get<std::vector<int>>();
    if (r.size() != 2) throw Error(ErrorCode::InvalidArgument, "model layer_range must have two entries");
    spec.layers = LayerRange{r[0], r[1]};
  }
  if (doc.contains("pooling_layer")) spec.pooling_layer = doc.at("pooling_layer").get<int>();
  spec.components.clear();
  for (const auto& name : doc.at("components").get<std::vector<std::string>>()) {
    spec.components.push_back(pool_component_from_name(name));
  }
  return spec;
}

// Column groups that are reduced independently: the lookback block, and
// one block per pooled hidden component.
std::string part_of(const std::string& feature_name) {
  const auto first = feature_name.find('.');
  if (first == std::string::npos) return feature_name;
  if (feature_name.compare(0, first, "hid") == 0) {
    const auto second = feature_name.find('.', first + 1);
    return feature_name.substr(0, second);
  }
  return feature_name.substr(0, first);
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> column_parts(const std::vector<std::string>& names) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> parts;
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (j == 0 || part_of(names[j]) != part_of(names[j - 1])) parts.push_back({static_cast<Eigen::Index>(j), 0});
    ++parts.back().second;
  }
  return parts;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

struct FittedReducer {
  Eigen::Index start = 0;
  Eigen::Index count = 0;
  std::optional<ReducerModel> pca;
};

Eigen::MatrixXd apply_reducers(const std::vector<FittedReducer>& reducers, const Eigen::MatrixXd& x) {
  std::vector<Eigen::MatrixXd> blocks;
  Eigen::Index cols = 0;
  for (const auto& r : reducers) {
    Eigen::MatrixXd block = x.middleCols(r.start, r.count);
    if (r.pca) block = pca_transform(*r.pca, block);
    cols += block.cols();
    blocks.push_back(std::move(block));
  }
  Eigen::MatrixXd out(x.rows(), cols);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  return out;
}

Eigen::VectorXd labels_at(std::span<const std::uint8_t> labels, std::span<const std::size_t> rows) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) y[static_cast<Eigen::Index>(i)] = labels[rows[i]];
  return y;
}

std::optional<double> auc_if_defined(const Eigen::VectorXd& scores, const Eigen::VectorXd& y) {
  std::vector<int> labels(y.data(), y.data() + y.size());
  try {
    return roc_auc(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), labels);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::UndefinedMetric) return std::nullopt;
    throw;
  }
}

struct Globals {
  std::string errors = "text";
  bool force = false;
};

// ---- validate -------------------------------------------------------------

int cmd_validate(const std::string& dump, std::ostream& out) {
  const auto s = validate_dump(dump);
  out << json{{"ok", true},
              {"examples", s.n_examples},
              {"faithful", s.n_faithful},
              {"hallucinated", s.n_hallucinated},
              {"unlabeled", s.n_unlabeled},
              {"records_bytes", s.records_bytes}}
             .dump()
      << '\n';
  return 0;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string spec_file;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::optional<int> n_examples;
  std::optional<double> attention_shift;
  std::optional<double> hidden_shift;
};

int cmd_synth(const SynthArgs& a, const Globals& g, std::ostream& out) {
  SyntheticSpec spec;
  if (!a.spec_file.empty()) spec = synthetic_spec_from_json(read_json_file(a.spec_file));
  if (a.n_examples) spec.n_examples = *a.n_examples;
  if (a.attention_shift) spec.attention_shift = *a.attention_shift;
  if (a.hidden_shift) spec.hidden_shift = *a.hidden_shift;
  const fs::path dir(a.out_dir);
  require_absent(dir / kManifestFile, g.force);
  require_absent(dir / kRecordsFile, g.force);
  const auto dump = synthesize_dump(spec, a.seed);
  const auto manifest = write_dump(dump.manifest, dump.records, dir);
  json cells = json::array();
  for (const auto& [l, h] : dump.signal_cells) cells.push_back({l, h});
  out << json{{"examples", manifest.examples.size()}, {"dir", dir.string()}, {"signal_cells", cells}}.dump() << '\n';
  return 0;
}

// ---- features -------------------------------------------------------------

struct FeatureArgs {
  std::string dump;
  std::string strategy = "lookback";
  std::string layers;
  int feature_cap = kDefaultFeatureCap;
  std::optional<int> pooling_layer;
  std::string components = "mean,max,last";
};

FeatureSpec feature_spec_from_args(const FeatureArgs& a) {
  FeatureSpec spec;
  spec.input = sweep_input_from_name(a.strategy);
  spec.layers = parse_layer_range(a.layers);
  spec.feature_cap = a.feature_cap;
  spec.pooling_layer = a.pooling_layer;
  spec.components = parse_components(a.components);
  return spec;
}

int cmd_features(const FeatureArgs& a, const std::string& out_file, const Globals& g, std::ostream& out) {
  auto spec = feature_spec_from_args(a);
  if (spec.input == SweepInput::Tokens) {
    throw Error(ErrorCode::InvalidArgument, "features: strategy must be lookback or hidden_pooled");
  }
  require_absent(out_file, g.force);
  DumpReader reader(a.dump);
  resolve_spec(spec, reader.manifest());
  const auto idx = all_indices(reader.manifest(), false);
  const auto fm = dump_features(reader, spec, idx);
  std::ostringstream ss;
  write_feature_csv(fm, ss);
  write_file(out_file, ss.str(), g.force);
  out << json{{"rows", fm.rows()}, {"columns", fm.cols()}, {"out", out_file}}.dump() << '\n';
  return 0;
}

// ---- fit / score ------------------------------------------------------------

struct FitArgs {
  FeatureArgs features;
  std::string features_csv;
  std::string classifier = "logreg";
  std::string reducer = "pca";
  int n_components = 30;
  bool no_standardize = false;
  double val_fraction = kDefaultValFraction;
  std::uint64_t seed = 0;
  std::optional<double> lambda;
  std::string params_file;
  std::string adapter;
  double adapter_timeout = kDefaultAdapterTimeoutSeconds;
  std::string model_out;
};

ClassifierSettings settings_from_args(const FitArgs& a) {
  ClassifierSettings s;
  if (!a.params_file.empty()) {
    const auto doc = read_json_file(a.params_file);
    if (!doc.is_object()) throw Error(ErrorCode::ConfigError, "params file must hold an object");
    for (const auto& [key, value] : doc.items()) {
      if (key == "logreg") s.logreg = logreg_params_from_json(value);
      else if (key == "gbdt") s.gbdt = gbdt_params_from_json(value);
      else if (key == "probe") s.probe = probe_params_from_json(value);
      else if (key == "lambda_grid") s.lambda_grid = value.get<std::vector<double>>();
      else throw Error(ErrorCode::ConfigError, "unknown key '" + key + "' in params file");
    }
  }
  if (a.lambda) {
    s.logreg.l2_lambda = *a.lambda;
    s.lambda_grid = {*a.lambda};
  }
  s.gbdt.seed = a.seed;
  s.probe.seed = a.seed;
  std::optional<std::string> command = a.adapter.empty() ? env_adapter() : std::optional<std::string>(a.adapter);
  if (command) s.adapter = adapter_from_command_line(*command, a.adapter_timeout, a.seed);
  return s;
}

SplitIndices fit_split(std::span<const std::uint8_t> labels, std::span<const std::size_t> labeled, double vf,
                       std::uint64_t seed) {
  if (vf == 0.0) {
    SplitIndices s;
    s.train.assign(labeled.begin(), labeled.end());
    return s;
  }
  std::vector<int> y;
  for (auto i : labeled) y.push_back(labels[i]);
  auto split = subsample_split(y, y.size(), seed, vf);
  for (auto& i : split.train) i = labeled[i];
  for (auto& i : split.val) i = labeled[i];
  return split;
}

int fit_probe_model(const FitArgs& a, const ClassifierSettings& settings, const Globals& g, std::ostream& out) {
  if (a.features.dump.empty()) throw Error(ErrorCode::InvalidArgument, "the probe needs --dump (token states)");
  DumpReader reader(a.features.dump);
  const auto& m = reader.manifest();
  FeatureSpec spec;
  spec.input = SweepInput::Tokens;
  spec.pooling_layer = a.features.pooling_layer;
  resolve_spec(spec, m);
  if (!m.dumps_layer(*spec.pooling_layer)) {
    throw Error(ErrorCode::ConfigError, "hidden layer " + std::to_string(*spec.pooling_layer) + " is not in the dump");
  }
  std::vector<std::uint8_t> labels;
  for (const auto& e : m.examples) labels.push_back(e.label);
  const auto labeled = all_indices(m, true);
  const auto split = fit_split(labels, labeled, a.val_fraction, a.seed);
  auto load = [&](std::span<const std::size_t> idx) {
    std::vector<TokenStates> t;
    for (auto i : idx) t.push_back(reader.read(i).hidden_states.at(*spec.pooling_layer).cast<double>());
    return t;
  };
  const auto xtr = load(split.train);
  const auto xva = load(split.val);
  const auto ytr = labels_at(labels, split.train);
  const auto yva = labels_at(labels, split.val);
  const auto fit = fit_probe(settings, xtr, ytr, xva, yva);

  json summary = {{"n_train", split.train.size()}, {"n_val", split.val.size()}, {"diagnostics", fit.diagnostics}};
  if (!split.val.empty()) {
    const auto auc = auc_if_defined(probe_predict(fit.model, xva), yva);
    summary["val_roc_auc"] = auc ? json(*auc) : json(nullptr);
  }
  json model = {{"format", kModelFormat},
                {"version", kModelVersion},
                {"features", spec_to_json(spec)},
                {"classifier", probe_to_json(fit.model)},
                {"validation", summary}};
  model["classifier"]["kind"] = "probe";
  write_file(a.model_out, model.dump(2) + "\n", g.force);
  out << summary.dump() << '\n';
  return 0;
}

int cmd_fit(const FitArgs& a, const Globals& g, std::ostream& out) {
  if (a.features.dump.empty() == a.features_csv.empty()) {
    throw Error(ErrorCode::InvalidArgument, "fit: give exactly one of --features or --dump");
  }
  if (!(a.val_fraction >= 0.0 && a.val_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "--val-fraction must be in [0, 1)");
  }
  require_absent(a.model_out, g.force);
  const auto kind = classifier_from_name(a.classifier);
  const auto settings = settings_from_args(a);
  if (kind == ClassifierKind::Probe) return fit_probe_model(a, settings, g, out);

  const auto reducer = reducer_choice_from_name(a.reducer);
  if (reducer == ReducerChoice::External) {
    throw Error(ErrorCode::ConfigError, "the external reducer has no reusable transform; use it through sweep");
  }

  FeatureMatrix fm;
  std::optional<FeatureSpec> spec;
  if (!a.features_csv.empty()) {
    fm = read_feature_csv(read_file(a.features_csv));
  } else {
    spec = feature_spec_from_args(a.features);
    if (spec->input == SweepInput::Tokens) {
      throw Error(ErrorCode::InvalidArgument, "the tokens strategy is only for the probe classifier");
    }
    DumpReader reader(a.features.dump);
    resolve_spec(*spec, reader.manifest());
    fm = dump_features(reader, *spec, all_indices(reader.manifest(), true));
  }
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < fm.labels.size(); ++i) {
    if (fm.labels[i] != kLabelUnlabeled) labeled.push_back(i);
  }
  const auto split = fit_split(fm.labels, labeled, a.val_fraction, a.seed);
  const Eigen::MatrixXd xtr_raw = rows_of(fm.values, split.train);
  const Eigen::MatrixXd xva_raw = rows_of(fm.values, split.val);

  std::vector<FittedReducer> reducers;
  for (const auto& [start, count] : column_parts(fm.feature_names)) {
    FittedReducer r{start, count, std::nullopt};
    if (reducer == ReducerChoice::Pca) {
      r.pca = pca_fit(xtr_raw.middleCols(start, count), a.n_components, !a.no_standardize);
    }
    reducers.push_back(std::move(r));
  }
  const auto xtr = apply_reducers(reducers, xtr_raw);
  const auto xva = apply_reducers(reducers, xva_raw);
  const auto ytr = labels_at(fm.labels, split.train);
  const auto yva = labels_at(fm.labels, split.val);
  const auto fit = fit_tabular(kind, settings, xtr, ytr, xva, yva);

  json summary = {{"n_train", split.train.size()},
                  {"n_val", split.val.size()},
                  {"n_features", fm.cols()},
                  {"n_model_inputs", xtr.cols()},
                  {"diagnostics", fit.diagnostics}};
  if (!split.val.empty()) {
    const auto auc = auc_if_defined(score_tabular(fit.model, xva), yva);
    summary["val_roc_auc"] = auc ? json(*auc) : json(nullptr);
  }

  json parts = json::array();
  for (const auto& r : reducers) {
    parts.push_back({{"start", r.start}, {"count", r.count}, {"reducer", r.pca ? reducer_to_json(*r.pca) : json(nullptr)}});
  }
  json features = spec ? spec_to_json(*spec) : json{{"strategy", "csv"}};
  features["feature_names"] = fm.feature_names;
  json model = {{"format", kModelFormat},
                {"version", kModelVersion},
                {"features", features},
                {"parts", parts},
                {"classifier", tabular_to_json(fit.model)},
                {"validation", summary}};
  write_file(a.model_out, model.dump(2) + "\n", g.force);
  out << summary.dump() << '\n';
  return 0;
}

struct ScoreArgs {
  std::string model;
  std::string features_csv;
  std::string dump;
  std::string out_file;
  std::string adapter;
};

std::string label_field(std::uint8_t label) {
  return label == kLabelUnlabeled ? std::string() : std::to_string(label);
}

int cmd_score(const ScoreArgs& a, const Globals& g, std::ostream& out) {
  if (a.dump.empty() == a.features_csv.empty()) {
    throw Error(ErrorCode::InvalidArgument, "score: give exactly one of --features or --dump");
  }
  require_absent(a.out_file, g.force);
  const auto doc = read_json_file(a.model);
  std::vector<std::string> ids;
  std::vector<std::uint8_t> labels;
  Eigen::VectorXd probs;
  try {
    if (doc.at("format") != kModelFormat || doc.at("version") != kModelVersion) {
      throw Error(ErrorCode::InvalidArgument, a.model + " is not a halodet model file");
    }
    const auto& features = doc.at("features");
    const auto strategy = features.at("strategy").get<std::string>();

    if (strategy == "tokens") {
      if (a.dump.empty()) throw Error(ErrorCode::InvalidArgument, "probe models score from --dump");
      const auto spec = spec_from_json(features);
      const auto model = probe_from_json(doc.at("classifier"));
      DumpReader reader(a.dump);
      std::vector<TokenStates> tokens;
      for (std::size_t i = 0; i < reader.manifest().examples.size(); ++i) {
        const auto& e = reader.manifest().examples[i];
        const auto record = reader.read(i);
        const auto it = record.hidden_states.find(*spec.pooling_layer);
        if (it == record.hidden_states.end()) {
          throw Error(ErrorCode::ConfigError, "hidden layer " + std::to_string(*spec.pooling_layer) + " is not in the dump");
        }
        tokens.push_back(it->second.cast<double>());
        ids.push_back(e.id);
        labels.push_back(e.label);
      }
      probs = probe_predict(model, tokens);
    } else {
      FeatureMatrix fm;
      if (!a.features_csv.empty()) {
        fm = read_feature_csv(read_file(a.features_csv));
      } else {
        if (strategy == "csv") throw Error(ErrorCode::InvalidArgument, "this model was trained on a feature CSV; score with --features");
        const auto spec = spec_from_json(features);
        DumpReader reader(a.dump);
        fm = dump_features(reader, spec, all_indices(reader.manifest(), false));
      }
      const auto names = features.at("feature_names").get<std::vector<std::string>>();
      std::map<std::string, Eigen::Index> column;
      for (std::size_t j = 0; j < fm.feature_names.size(); ++j) column[fm.feature_names[j]] = static_cast<Eigen::Index>(j);
      Eigen::MatrixXd x(fm.rows(), static_cast<Eigen::Index>(names.size()));
      for (std::size_t j = 0; j < names.size(); ++j) {
        const auto it = column.find(names[j]);
        if (it == column.end()) throw Error(ErrorCode::DimensionMismatch, "input lacks feature column '" + names[j] + "'");
        x.col(static_cast<Eigen::Index>(j)) = fm.values.col(it->second);
      }
      std::vector<FittedReducer> reducers;
      for (const auto& p : doc.at("parts")) {
        FittedReducer r{p.at("start").get<Eigen::Index>(), p.at("count").get<Eigen::Index>(), std::nullopt};
        if (r.start < 0 || r.count < 1 || r.start + r.count > x.cols()) {
          throw Error(ErrorCode::InvalidArgument, "model part exceeds its feature columns");
        }
        if (!p.at("reducer").is_null()) r.pca = reducer_from_json(p.at("reducer"));
        reducers.push_back(std::move(r));
      }
      auto model = tabular_from_json(doc.at("classifier"));
      if (auto* ext = std::get_if<ExternalFit>(&model)) {
        if (!a.adapter.empty()) ext->handle.command = split_command_line(a.adapter);
        else if (auto cmd = env_adapter()) ext->handle.command = split_command_line(*cmd);
      }
      probs = score_tabular(model, apply_reducers(reducers, x));
      ids = fm.example_ids;
      labels = fm.labels;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed model file: ") + e.what());
  }

  std::ostringstream ss;
  ss << "example_id,label,probability\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ss << csv::join_row({ids[i], label_field(labels[i]), csv::format_number(probs[static_cast<Eigen::Index>(i)], 17)})
       << '\n';
  }
  write_file(a.out_file, ss.str(), g.force);
  out << json{{"rows", ids.size()}, {"out", a.out_file}}.dump() << '\n';
  return 0;
}

// ---- sweep / report -----------------------------------------------------------

struct SweepArgs {
  std::string config;
  std::string out_dir;
  std::optional<int> parallel;
  bool timing = false;
};

void require_report_absent(const fs::path& dir, bool force) {
  for (const auto& name : report_file_names()) require_absent(dir / name, force);
}

void print_ranking(const AggregateReport& report, std::ostream& out) {
  std::ostringstream ss;
  write_table_csv(report.classifier_by_dataset, ss);
  out << ss.str();
}

int cmd_sweep(const SweepArgs& a, const Globals& g, std::ostream& out) {
  auto rc = load_run_config(a.config, env_adapter());
  if (a.parallel) rc.plan.parallel = *a.parallel;
  if (a.timing) rc.plan.record_timing = true;
  validate_plan(rc.plan);
  fs::path dir;
  if (!a.out_dir.empty()) dir = a.out_dir;
  else if (rc.output_dir) dir = *rc.output_dir;
  else throw Error(ErrorCode::ConfigError, "sweep: no output directory (use --out or output_dir)");
  require_absent(dir / "results.csv", g.force);
  require_report_absent(dir, g.force);

  const auto results = run_sweep(rc.plan);
  std::ostringstream ss;
  write_results_csv(results, ss);
  write_file(dir / "results.csv", ss.str(), true);
  const auto report = aggregate(results);
  write_report(report, dir);
  print_ranking(report, out);
  return 0;
}

int cmd_report(const std::string& results_file, const std::string& out_dir, const Globals& g, std::ostream& out) {
  const auto results = read_results_csv(read_file(results_file));
  require_report_absent(out_dir, g.force);
  const auto report = aggregate(results);
  write_report(report, out_dir);
  print_ranking(report, out);
  return 0;
}

void report_error(const Globals& g, std::ostream& err, const std::string& code, const std::string& message,
                  int status) {
  if (g.errors == "json") {
    err << json{{"error", {{"code", code}, {"message", message}, {"exit_status", status}}}}.dump() << '\n';
  } else {
    err << "halodet: " << message << '\n';
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"halodet: hallucination detection from LLM activation dumps"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--errors", g.errors, "Error output format")->check(CLI::IsMember({"text", "json"}));
  app.add_flag("--force", g.force, "Overwrite existing outputs");

  std::string dump_path;
  auto* validate = app.add_subcommand("validate", "Check a dump against every format invariant");
  validate->add_option("dump", dump_path, "Dump directory")->required();

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dump with planted signal");
  synth->add_option("--spec", synth_args.spec_file, "Synthetic spec JSON");
  synth->add_option("--seed", synth_args.seed, "Random seed");
  synth->add_option("--out", synth_args.out_dir, "Output dump directory")->required();
  synth->add_option("--n-examples", synth_args.n_examples, "Number of examples");
  synth->add_option("--attention-shift", synth_args.attention_shift, "Lookback shift in signal cells");
  synth->add_option("--hidden-shift", synth_args.hidden_shift, "Hidden-state class separation");

  auto add_feature_flags = [](CLI::App* cmd, FeatureArgs& f) {
    cmd->add_option("--strategy", f.strategy, "lookback | hidden_pooled");
    cmd->add_option("--layers", f.layers, "Lookback layer range LO:HI");
    cmd->add_option("--feature-cap", f.feature_cap, "Lookback feature cap");
    cmd->add_option("--pooling-layer", f.pooling_layer, "Hidden layer to pool");
    cmd->add_option("--components", f.components, "Pooling components, comma separated");
  };

  FeatureArgs feature_args;
  std::string features_out;
  auto* features = app.add_subcommand("features", "Build a feature CSV from a dump");
  features->add_option("--dump", feature_args.dump, "Dump directory")->required();
  features->add_option("--out", features_out, "Output CSV")->required();
  add_feature_flags(features, feature_args);

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "Fit a detector and save it as a model file");
  fit->add_option("--features", fit_args.features_csv, "Feature CSV");
  fit->add_option("--dump", fit_args.features.dump, "Dump directory");
  add_feature_flags(fit, fit_args.features);
  fit->add_option("--classifier", fit_args.classifier, "logreg | gbdt | probe | external");
  fit->add_option("--reducer", fit_args.reducer, "none | pca");
  fit->add_option("--n-components", fit_args.n_components, "PCA components per feature part");
  fit->add_flag("--no-standardize", fit_args.no_standardize, "Skip scaling before PCA");
  fit->add_option("--val-fraction", fit_args.val_fraction, "Held-out share for model selection");
  fit->add_option("--seed", fit_args.seed, "Random seed");
  fit->add_option("--lambda", fit_args.lambda, "Fixed logreg L2 strength");
  fit->add_option("--params", fit_args.params_file, "Classifier parameter JSON");
  fit->add_option("--adapter", fit_args.adapter, "Adapter command line");
  fit->add_option("--adapter-timeout", fit_args.adapter_timeout, "Adapter timeout in seconds");
  fit->add_option("--model", fit_args.model_out, "Output model file")->required();

  ScoreArgs score_args;
  auto* score = app.add_subcommand("score", "Score examples with a saved model");
  score->add_option("--model", score_args.model, "Model file")->required();
  score->add_option("--features", score_args.features_csv, "Feature CSV");
  score->add_option("--dump", score_args.dump, "Dump directory");
  score->add_option("--out", score_args.out_file, "Output CSV")->required();
  score->add_option("--adapter", score_args.adapter, "Adapter command line");

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "Run a train-size sweep from a config file");
  sweep->add_option("--config", sweep_args.config, "Run config JSON")->required();
  sweep->add_option("--out", sweep_args.out_dir, "Output directory");
  sweep->add_option("--parallel", sweep_args.parallel, "Concurrent runs")->check(CLI::PositiveNumber);
  sweep->add_flag("--timing", sweep_args.timing, "Record wall time per run");

  std::string results_file, report_out;
  auto* report = app.add_subcommand("report", "Aggregate a results CSV into tables");
  report->add_option("--results", results_file, "Results CSV")->required();
  report->add_option("--out", report_out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    report_error(g, err, "usage", e.what(), 2);
    return 2;
  }

  try {
    if (*validate) return cmd_validate(dump_path, out);
    if (*synth) return cmd_synth(synth_args, g, out);
    if (*features) return cmd_features(feature_args, features_out, g, out);
    if (*fit) return cmd_fit(fit_args, g, out);
    if (*score) return cmd_score(score_args, g, out);
    if (*sweep) return cmd_sweep(sweep_args, g, out);
    if (*report) return cmd_report(results_file, report_out, g, out);
  } catch (const Error& e) {
    const int status = is_validation_error(e.code()) ? 2 : 1;
    report_error(g, err, std::string(error_code_name(e.code())), e.what(), status);
    return status;
  } catch (const fs::filesystem_error& e) {
    report_error(g, err, "io", e.what(), 1);
    return 1;
  } catch (const std::exception& e) {
    report_error(g, err, "internal", e.what(), 1);
    return 1;
  }
  return 0;
}

}  // namespace halodet
