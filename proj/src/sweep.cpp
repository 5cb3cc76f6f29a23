#include "halodet/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>
#include <unordered_set>

#include "halodet/csv.hpp"
#include "halodet/error.hpp"
#include "halodet/metrics.hpp"
#include "halodet/reduce.hpp"
#include "halodet/rng.hpp"

namespace halodet {

namespace {

using Count = long long;

[[noreturn]] void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

Count clamp_with_fallback(Count value, Count hard_lo, Count hard_hi, Count soft_lo, Count soft_hi) {
  if (soft_lo <= soft_hi) return std::clamp(value, soft_lo, soft_hi);
  return std::clamp(value, hard_lo, std::max(hard_lo, hard_hi));
}

// Number of positives in a stratified draw of n from (pos, neg), keeping at
// least two of each class when the counts allow it.
Count positives_in_draw(Count n, Count pos, Count neg) {
  const Count target = std::llround(static_cast<double>(n) * static_cast<double>(pos) / static_cast<double>(pos + neg));
  const Count hard_lo = std::max<Count>(0, n - neg);
  const Count hard_hi = std::min(pos, n);
  const Count soft_lo = std::max(hard_lo, std::min<Count>(2, pos));
  const Count soft_hi = std::min(hard_hi, n - std::min<Count>(2, neg));
  return clamp_with_fallback(target, hard_lo, hard_hi, soft_lo, soft_hi);
}

void partition_classes(std::span<const int> labels, std::vector<std::size_t>& pos, std::vector<std::size_t>& neg) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) pos.push_back(i);
    else if (labels[i] == 0) neg.push_back(i);
    else fail(ErrorCode::InvalidArgument, "split: labels must be 0 or 1");
  }
  if (pos.empty() || neg.empty()) fail(ErrorCode::DegenerateLabels, "split: the labeled pool holds a single class");
}

// Per-dataset state shared by every run: the readers plus a row universe of
// pool examples followed by test examples.
struct PreparedDataset {
  std::string name;
  std::string extractor;
  std::unique_ptr<DumpReader> main;
  std::unique_ptr<DumpReader> test;
  std::vector<std::size_t> pool_index;  // into main
  std::vector<std::size_t> test_index;  // into test, or main when test is null
  std::vector<int> labels;              // pool rows, then test rows
  std::vector<std::string> ids;

  std::size_t n_pool() const { return pool_index.size(); }
  std::size_t n_test() const { return test_index.size(); }
  const DumpReader& test_reader() const { return test ? *test : *main; }
};

struct ConfigInputs {
  std::vector<Eigen::MatrixXd> parts;  // tabular inputs, one reducer fit per part
  std::vector<TokenStates> tokens;     // probe inputs
};

std::vector<std::size_t> labeled_indices(const ActivationManifest& m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.examples.size(); ++i) {
    if (m.examples[i].label != kLabelUnlabeled) out.push_back(i);
  }
  return out;
}

std::vector<int> labels_at(const ActivationManifest& m, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(m.examples[i].label);
  return out;
}

void check_compatible(const ActivationManifest& a, const ActivationManifest& b) {
  if (a.n_layers != b.n_layers || a.n_heads != b.n_heads || a.hidden_dim != b.hidden_dim ||
      a.hidden_layers_dumped != b.hidden_layers_dumped) {
    fail(ErrorCode::DimensionMismatch, "test dump '" + b.dataset_name + "' does not match the training dump's shape");
  }
}

PreparedDataset prepare_dataset(const DatasetSpec& spec) {
  PreparedDataset ds;
  ds.main = std::make_unique<DumpReader>(spec.dump);
  const auto& m = ds.main->manifest();
  ds.name = spec.name.empty() ? m.dataset_name : spec.name;
  ds.extractor = spec.extractor.empty() ? m.extractor_model_id : spec.extractor;
  const auto labeled = labeled_indices(m);

  if (spec.test_dump) {
    ds.test = std::make_unique<DumpReader>(*spec.test_dump);
    check_compatible(m, ds.test->manifest());
    ds.pool_index = labeled;
    ds.test_index = labeled_indices(ds.test->manifest());
  } else {
    if (spec.test_size == 0 || spec.test_size >= labeled.size()) {
      fail(ErrorCode::ConfigError, "dataset '" + ds.name + "': test_size must be in [1, " +
                                       std::to_string(labeled.size()) + ") without a test dump");
    }
    const auto labels = labels_at(m, labeled);
    const auto holdout = holdout_split(labels, spec.test_size, spec.split_seed);
    for (auto i : holdout.pool) ds.pool_index.push_back(labeled[i]);
    for (auto i : holdout.test) ds.test_index.push_back(labeled[i]);
  }
  if (ds.test_index.empty()) fail(ErrorCode::ConfigError, "dataset '" + ds.name + "' has no labeled test examples");

  ds.labels = labels_at(m, ds.pool_index);
  const auto test_labels = labels_at(ds.test_reader().manifest(), ds.test_index);
  ds.labels.insert(ds.labels.end(), test_labels.begin(), test_labels.end());
  for (auto i : ds.pool_index) ds.ids.push_back(m.examples[i].id);
  std::unordered_set<std::string> seen(ds.ids.begin(), ds.ids.end());
  for (auto i : ds.test_index) {
    const auto& id = ds.test_reader().manifest().examples[i].id;
    if (seen.count(id)) fail(ErrorCode::ConfigError, "dataset '" + ds.name + "': example '" + id + "' is in both pool and test");
    ds.ids.push_back(id);
  }
  return ds;
}

Eigen::MatrixXd stack_rows(const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom) {
  Eigen::MatrixXd out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

Eigen::MatrixXd hconcat(const std::vector<Eigen::MatrixXd>& blocks, Eigen::Index rows) {
  Eigen::Index cols = 0;
  for (const auto& b : blocks) cols += b.cols();
  Eigen::MatrixXd out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  return out;
}

int pooling_layer_for(const DetectorConfig& cfg, const ActivationManifest& m) {
  return cfg.pooling_layer.value_or(default_pooling_layer(m.n_layers));
}

std::string inputs_key(const DetectorConfig& cfg, const ActivationManifest& m) {
  switch (cfg.input) {
    case SweepInput::Lookback: {
      const auto lb = lookback_config_for(m, cfg.feature_cap, cfg.layer_range);
      return "lookback:" + std::to_string(lb.layers.lo) + "-" + std::to_string(lb.layers.hi);
    }
    case SweepInput::HiddenPooled: {
      std::string key = "hidden:" + std::to_string(pooling_layer_for(cfg, m));
      for (auto c : cfg.components) key += ":" + std::string(pool_component_name(c));
      return key;
    }
    case SweepInput::Tokens:
      return "tokens:" + std::to_string(pooling_layer_for(cfg, m));
  }
  return {};
}

ConfigInputs build_inputs(const PreparedDataset& ds, const DetectorConfig& cfg) {
  const auto& m = ds.main->manifest();
  ConfigInputs in;
  switch (cfg.input) {
    case SweepInput::Lookback: {
      const auto lb = lookback_config_for(m, cfg.feature_cap, cfg.layer_range);
      const auto pool = lookback_block(*ds.main, ds.pool_index, lb);
      const auto test = lookback_block(ds.test_reader(), ds.test_index, lb);
      in.parts.push_back(stack_rows(pool.values, test.values));
      break;
    }
    case SweepInput::HiddenPooled: {
      PoolingConfig pc{pooling_layer_for(cfg, m), cfg.components};
      const auto pool = pooled_hidden_blocks(*ds.main, ds.pool_index, pc);
      const auto test = pooled_hidden_blocks(ds.test_reader(), ds.test_index, pc);
      for (std::size_t c = 0; c < pool.size(); ++c) in.parts.push_back(stack_rows(pool[c].values, test[c].values));
      break;
    }
    case SweepInput::Tokens: {
      const int layer = pooling_layer_for(cfg, m);
      if (!m.dumps_layer(layer)) fail(ErrorCode::ConfigError, "hidden layer " + std::to_string(layer) + " is not in the dump");
      auto load = [&](const DumpReader& reader, std::span<const std::size_t> idx) {
        for (auto i : idx) in.tokens.push_back(reader.read(i).hidden_states.at(layer).cast<double>());
      };
      load(*ds.main, ds.pool_index);
      load(ds.test_reader(), ds.test_index);
      break;
    }
  }
  return in;
}

Eigen::VectorXd label_vector(const std::vector<int>& labels, std::span<const Eigen::Index> rows) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) y[static_cast<Eigen::Index>(i)] = labels[static_cast<std::size_t>(rows[i])];
  return y;
}

struct Job {
  std::size_t dataset;
  std::size_t config;
  int train_size;
  std::uint64_t seed;
};

struct RunContext {
  const PreparedDataset& ds;
  const DetectorConfig& cfg;
  const ConfigInputs& in;
  double val_fraction;
};

ClassifierSettings seeded_settings(const DetectorConfig& cfg, std::uint64_t seed) {
  auto s = cfg.settings;
  s.gbdt.seed = seed;
  s.probe.seed = seed;
  if (s.adapter) s.adapter->seed = seed;
  return s;
}

void run_tabular(const RunContext& ctx, std::uint64_t seed, std::span<const Eigen::Index> tr,
                 std::span<const Eigen::Index> va, std::span<const Eigen::Index> te, RunResult& result) {
  std::vector<Eigen::MatrixXd> train_blocks, val_blocks, test_blocks;
  std::optional<int> k_eff;
  const std::vector<Eigen::Index> tr_rows(tr.begin(), tr.end()), va_rows(va.begin(), va.end()),
      te_rows(te.begin(), te.end());
  for (const auto& part : ctx.in.parts) {
    Eigen::MatrixXd xtr = part(tr_rows, Eigen::all);
    Eigen::MatrixXd xva = part(va_rows, Eigen::all);
    Eigen::MatrixXd xte = part(te_rows, Eigen::all);
    switch (ctx.cfg.reducer) {
      case ReducerChoice::None:
        break;
      case ReducerChoice::Pca: {
        const auto model = pca_fit(xtr, ctx.cfg.n_components, ctx.cfg.standardize);
        xtr = pca_transform(model, xtr);
        xva = pca_transform(model, xva);
        xte = pca_transform(model, xte);
        k_eff = std::min(k_eff.value_or(model.n_components_effective), model.n_components_effective);
        break;
      }
      case ReducerChoice::External: {
        const auto reduced =
            external_reduce(*ctx.cfg.settings.adapter, xtr, stack_rows(xva, xte), ctx.cfg.n_components, seed);
        xtr = reduced.train;
        xva = reduced.apply.topRows(xva.rows());
        xte = reduced.apply.bottomRows(xte.rows());
        const int width = static_cast<int>(reduced.train.cols());
        k_eff = std::min(k_eff.value_or(width), width);
        break;
      }
    }
    train_blocks.push_back(std::move(xtr));
    val_blocks.push_back(std::move(xva));
    test_blocks.push_back(std::move(xte));
  }
  result.k_eff = k_eff;

  const auto settings = seeded_settings(ctx.cfg, seed);
  const auto fit = fit_tabular(ctx.cfg.classifier, settings, hconcat(train_blocks, static_cast<Eigen::Index>(tr.size())),
                               label_vector(ctx.ds.labels, tr), hconcat(val_blocks, static_cast<Eigen::Index>(va.size())),
                               label_vector(ctx.ds.labels, va));
  result.diagnostics = fit.diagnostics;
  const Eigen::VectorXd scores = score_tabular(fit.model, hconcat(test_blocks, static_cast<Eigen::Index>(te.size())));
  const auto y_test = label_vector(ctx.ds.labels, te);
  std::vector<int> yt(y_test.data(), y_test.data() + y_test.size());
  result.roc_auc = roc_auc(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), yt);
}

void run_probe(const RunContext& ctx, std::uint64_t seed, std::span<const Eigen::Index> tr,
               std::span<const Eigen::Index> va, std::span<const Eigen::Index> te, RunResult& result) {
  auto gather = [&](std::span<const Eigen::Index> rows) {
    std::vector<TokenStates> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(ctx.in.tokens[static_cast<std::size_t>(r)]);
    return out;
  };
  const auto settings = seeded_settings(ctx.cfg, seed);
  const auto fit = fit_probe(settings, gather(tr), label_vector(ctx.ds.labels, tr), gather(va),
                             label_vector(ctx.ds.labels, va));
  result.diagnostics = fit.diagnostics;
  const Eigen::VectorXd scores = probe_predict(fit.model, gather(te));
  const auto y_test = label_vector(ctx.ds.labels, te);
  std::vector<int> yt(y_test.data(), y_test.data() + y_test.size());
  result.roc_auc = roc_auc(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), yt);
}

RunResult run_one(const RunContext& ctx, int train_size, std::uint64_t seed, bool timing, RunAudit& audit) {
  const auto start = std::chrono::steady_clock::now();
  RunResult result;
  result.config_id = ctx.cfg.id;
  result.strategy = std::string(sweep_input_name(ctx.cfg.input));
  result.reducer = std::string(reducer_choice_name(ctx.cfg.reducer));
  result.classifier = std::string(classifier_name(ctx.cfg.classifier));
  result.extractor = ctx.ds.extractor;
  result.dataset = ctx.ds.name;
  result.train_size = train_size;
  result.seed = seed;

  audit.config_id = ctx.cfg.id;
  audit.dataset = ctx.ds.name;
  audit.train_size = train_size;
  audit.seed = seed;

  try {
    const std::span<const int> pool_labels(ctx.ds.labels.data(), ctx.ds.n_pool());
    const auto split = subsample_split(pool_labels, static_cast<std::size_t>(train_size), mix_seed(seed, static_cast<std::uint64_t>(train_size)),
                                       ctx.val_fraction);
    std::vector<Eigen::Index> tr(split.train.begin(), split.train.end());
    std::vector<Eigen::Index> va(split.val.begin(), split.val.end());
    std::vector<Eigen::Index> te;
    for (std::size_t j = 0; j < ctx.ds.n_test(); ++j) te.push_back(static_cast<Eigen::Index>(ctx.ds.n_pool() + j));

    auto ids_of = [&](const std::vector<Eigen::Index>& rows) {
      std::vector<std::string> out;
      for (auto r : rows) out.push_back(ctx.ds.ids[static_cast<std::size_t>(r)]);
      return out;
    };
    audit.train_ids = ids_of(tr);
    audit.val_ids = ids_of(va);
    audit.test_ids = ids_of(te);
    audit.fit_ids = audit.train_ids;
    audit.fit_ids.insert(audit.fit_ids.end(), audit.val_ids.begin(), audit.val_ids.end());

    if (ctx.cfg.input == SweepInput::Tokens) run_probe(ctx, seed, tr, va, te, result);
    else run_tabular(ctx, seed, tr, va, te, result);
  } catch (const Error& e) {
    result.roc_auc.reset();
    result.status = "skipped:" + std::string(error_code_name(e.code()));
    result.diagnostics = e.what();
  }
  if (timing) {
    result.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  }
  return result;
}

}  // namespace

SplitIndices subsample_split(std::span<const int> labels, std::size_t size, std::uint64_t seed, double val_fraction) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) fail(ErrorCode::InvalidArgument, "val_fraction must be in (0, 1)");
  if (size == 0) fail(ErrorCode::InvalidArgument, "subsample size must be positive");
  if (size > labels.size()) {
    fail(ErrorCode::InvalidArgument, "subsample size " + std::to_string(size) + " exceeds the pool of " +
                                         std::to_string(labels.size()));
  }
  std::vector<std::size_t> pos, neg;
  partition_classes(labels, pos, neg);

  const auto n = static_cast<Count>(size);
  const Count n_val = std::llround(static_cast<double>(n) * val_fraction);
  const Count n_pos = positives_in_draw(n, static_cast<Count>(pos.size()), static_cast<Count>(neg.size()));
  const Count n_neg = n - n_pos;

  const Count hard_lo = std::max<Count>(0, n_val - n_neg);
  const Count hard_hi = std::min(n_val, n_pos);
  Count soft_lo = hard_lo, soft_hi = hard_hi;
  if (n_pos >= 2) {
    soft_lo = std::max<Count>(soft_lo, 1);
    soft_hi = std::min(soft_hi, n_pos - 1);
  }
  if (n_neg >= 2) {
    soft_hi = std::min(soft_hi, n_val - 1);
    soft_lo = std::max(soft_lo, n_val - n_neg + 1);
  }
  const Count target = std::llround(static_cast<double>(n_val) * static_cast<double>(n_pos) / static_cast<double>(n));
  const Count val_pos = clamp_with_fallback(target, hard_lo, hard_hi, soft_lo, soft_hi);
  const Count val_neg = n_val - val_pos;

  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  SplitIndices out;
  for (Count i = 0; i < n_pos; ++i) (i < val_pos ? out.val : out.train).push_back(pos[static_cast<std::size_t>(i)]);
  for (Count i = 0; i < n_neg; ++i) (i < val_neg ? out.val : out.train).push_back(neg[static_cast<std::size_t>(i)]);
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

HoldoutIndices holdout_split(std::span<const int> labels, std::size_t test_size, std::uint64_t seed) {
  if (test_size == 0 || test_size >= labels.size()) {
    fail(ErrorCode::InvalidArgument, "test size must leave a non-empty pool");
  }
  std::vector<std::size_t> pos, neg;
  partition_classes(labels, pos, neg);
  const auto n = static_cast<Count>(test_size);
  const Count n_pos = positives_in_draw(n, static_cast<Count>(pos.size()), static_cast<Count>(neg.size()));

  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  HoldoutIndices out;
  for (std::size_t i = 0; i < pos.size(); ++i) (static_cast<Count>(i) < n_pos ? out.test : out.pool).push_back(pos[i]);
  for (std::size_t i = 0; i < neg.size(); ++i) (static_cast<Count>(i) < n - n_pos ? out.test : out.pool).push_back(neg[i]);
  std::sort(out.pool.begin(), out.pool.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::string_view sweep_input_name(SweepInput s) {
  switch (s) {
    case SweepInput::Lookback: return "lookback";
    case SweepInput::HiddenPooled: return "hidden_pooled";
    case SweepInput::Tokens: return "tokens";
  }
  return "?";
}

SweepInput sweep_input_from_name(std::string_view name) {
  if (name == "lookback") return SweepInput::Lookback;
  if (name == "hidden_pooled") return SweepInput::HiddenPooled;
  if (name == "tokens") return SweepInput::Tokens;
  fail(ErrorCode::ConfigError, "unknown strategy '" + std::string(name) + "'");
}

std::string_view reducer_choice_name(ReducerChoice r) {
  switch (r) {
    case ReducerChoice::None: return "none";
    case ReducerChoice::Pca: return "pca";
    case ReducerChoice::External: return "external";
  }
  return "?";
}

ReducerChoice reducer_choice_from_name(std::string_view name) {
  if (name == "none") return ReducerChoice::None;
  if (name == "pca") return ReducerChoice::Pca;
  if (name == "external") return ReducerChoice::External;
  fail(ErrorCode::ConfigError, "unknown reducer '" + std::string(name) + "'");
}

void validate_plan(const ExperimentPlan& plan) {
  if (plan.datasets.empty()) fail(ErrorCode::ConfigError, "plan lists no datasets");
  if (plan.configs.empty()) fail(ErrorCode::ConfigError, "plan lists no detector configs");
  if (plan.train_sizes.empty()) fail(ErrorCode::ConfigError, "plan lists no train sizes");
  if (plan.seeds.empty()) fail(ErrorCode::ConfigError, "plan lists no seeds");
  if (!(plan.val_fraction > 0.0 && plan.val_fraction < 1.0)) fail(ErrorCode::ConfigError, "val_fraction must be in (0, 1)");
  if (plan.parallel < 1) fail(ErrorCode::ConfigError, "parallel must be at least 1");
  for (int s : plan.train_sizes) {
    if (s <= 0) fail(ErrorCode::ConfigError, "train sizes must be positive");
  }
  if (std::set<std::uint64_t>(plan.seeds.begin(), plan.seeds.end()).size() != plan.seeds.size()) {
    fail(ErrorCode::ConfigError, "seeds must be distinct");
  }
  std::set<std::string> names;
  for (const auto& d : plan.datasets) {
    if (d.dump.empty()) fail(ErrorCode::ConfigError, "dataset without a dump path");
  }
  for (const auto& c : plan.configs) {
    if (c.id.empty()) fail(ErrorCode::ConfigError, "detector config without an id");
    if (!names.insert(c.id).second) fail(ErrorCode::ConfigError, "duplicate config id '" + c.id + "'");
    const bool probe = c.classifier == ClassifierKind::Probe;
    if (probe != (c.input == SweepInput::Tokens)) {
      fail(ErrorCode::ConfigError, "config '" + c.id + "': the probe classifier and the tokens strategy go together");
    }
    if (probe && c.reducer != ReducerChoice::None) {
      fail(ErrorCode::ConfigError, "config '" + c.id + "': the probe takes raw token states (reducer none)");
    }
    if (c.n_components < 1) fail(ErrorCode::ConfigError, "config '" + c.id + "': n_components must be positive");
    const bool needs_adapter = c.reducer == ReducerChoice::External || c.classifier == ClassifierKind::External;
    if (needs_adapter && (!c.settings.adapter || c.settings.adapter->command.empty())) {
      fail(ErrorCode::ConfigError, "config '" + c.id + "' uses the adapter but no adapter command is set");
    }
    if (c.input == SweepInput::HiddenPooled && c.components.empty()) {
      fail(ErrorCode::ConfigError, "config '" + c.id + "': pooling needs at least one component");
    }
  }
}

std::vector<RunResult> run_sweep(const ExperimentPlan& plan, const SweepObserver& observer) {
  validate_plan(plan);

  std::vector<PreparedDataset> datasets;
  for (const auto& spec : plan.datasets) datasets.push_back(prepare_dataset(spec));
  for (const auto& ds : datasets) {
    for (int s : plan.train_sizes) {
      if (static_cast<std::size_t>(s) > ds.n_pool()) {
        fail(ErrorCode::ConfigError, "train size " + std::to_string(s) + " exceeds the labeled pool of dataset '" +
                                         ds.name + "' (" + std::to_string(ds.n_pool()) + ")");
      }
    }
  }

  // inputs[d][c] points into a per-dataset cache so configs sharing a
  // feature layout read the dump once.
  std::vector<std::map<std::string, ConfigInputs>> caches(datasets.size());
  std::vector<std::vector<const ConfigInputs*>> inputs(datasets.size());
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    for (const auto& cfg : plan.configs) {
      const auto key = inputs_key(cfg, datasets[d].main->manifest());
      auto it = caches[d].find(key);
      if (it == caches[d].end()) it = caches[d].emplace(key, build_inputs(datasets[d], cfg)).first;
      inputs[d].push_back(&it->second);
    }
  }

  std::vector<Job> jobs;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    for (std::size_t c = 0; c < plan.configs.size(); ++c) {
      for (int size : plan.train_sizes) {
        for (auto seed : plan.seeds) jobs.push_back({d, c, size, seed});
      }
    }
  }

  std::vector<RunResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex mutex;
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const auto& job = jobs[i];
      try {
        RunContext ctx{datasets[job.dataset], plan.configs[job.config], *inputs[job.dataset][job.config],
                       plan.val_fraction};
        RunAudit audit;
        results[i] = run_one(ctx, job.train_size, job.seed, plan.record_timing, audit);
        if (observer) {
          std::lock_guard lock(mutex);
          observer(audit);
        }
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
        next.store(jobs.size());
        return;
      }
    }
  };

  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(plan.parallel), jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

void write_results_csv(std::span<const RunResult> results, std::ostream& out) {
  out << kResultsHeader << '\n';
  for (const auto& r : results) {
    char wall[64];
    std::snprintf(wall, sizeof wall, "%.3f", r.wall_ms);
    out << csv::join_row({r.config_id, r.strategy, r.reducer, r.classifier, r.extractor, r.dataset,
                          std::to_string(r.train_size), std::to_string(r.seed),
                          r.roc_auc ? csv::format_number(*r.roc_auc, 17) : std::string(),
                          r.k_eff ? std::to_string(*r.k_eff) : std::string(), wall, r.status})
        << '\n';
  }
}

std::vector<RunResult> read_results_csv(std::string_view text) {
  const auto rows = csv::parse(text);
  if (rows.empty() || csv::join_row(rows.front()) != kResultsHeader) {
    fail(ErrorCode::InvalidArgument, std::string("results CSV must start with the header ") + kResultsHeader);
  }
  std::vector<RunResult> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() != 12) fail(ErrorCode::InvalidArgument, "results CSV row " + std::to_string(i + 1) + " has " +
                                                            std::to_string(f.size()) + " fields, expected 12");
    RunResult r;
    r.config_id = f[0];
    r.strategy = f[1];
    r.reducer = f[2];
    r.classifier = f[3];
    r.extractor = f[4];
    r.dataset = f[5];
    try {
      r.train_size = std::stoi(f[6]);
      r.seed = std::stoull(f[7]);
      if (!f[9].empty()) r.k_eff = std::stoi(f[9]);
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "results CSV row " + std::to_string(i + 1) + " has a malformed integer field");
    }
    if (!f[8].empty()) {
      const double auc = csv::parse_number(f[8]);
      if (!(auc >= 0.0 && auc <= 1.0)) {
        fail(ErrorCode::InvalidArgument, "results CSV row " + std::to_string(i + 1) + ": roc_auc outside [0, 1]");
      }
      r.roc_auc = auc;
    }
    r.wall_ms = f[10].empty() ? 0.0 : csv::parse_number(f[10]);
    r.status = f[11];
    if (r.status == "ok" && !r.roc_auc) {
      fail(ErrorCode::InvalidArgument, "results CSV row " + std::to_string(i + 1) + " is ok but has no roc_auc");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace halodet
