#include "halodet/synth.hpp"

#include <algorithm>
#include <cmath>

#include "halodet/error.hpp"
#include "halodet/rng.hpp"

namespace halodet {

namespace {

[[noreturn]] void invalid(const std::string& message) {
  throw Error(ErrorCode::InvalidArgument, "synthetic spec: " + message);
}

void check_spec(const SyntheticSpec& s, const std::vector<int>& hidden_layers) {
  if (s.n_examples < 2) invalid("n_examples must be >= 2");
  if (!(s.positive_fraction > 0.0 && s.positive_fraction < 1.0)) invalid("positive_fraction must be in (0, 1)");
  if (s.min_tokens < 1 || s.max_tokens < s.min_tokens) invalid("need 1 <= min_tokens <= max_tokens");
  if (s.n_layers < 1 || s.n_heads < 1 || s.hidden_dim < 1) invalid("n_layers, n_heads, hidden_dim must be >= 1");
  if (s.signal_cells < 0 || s.signal_cells > s.n_layers * s.n_heads) {
    invalid("signal_cells must be in [0, n_layers * n_heads]");
  }
  for (double v : {s.attention_shift, s.hidden_shift, s.example_noise, s.token_noise, s.hidden_example_noise}) {
    if (!std::isfinite(v)) invalid("shifts and noise levels must be finite");
  }
  if (s.example_noise < 0 || s.token_noise < 0 || s.hidden_example_noise < 0) invalid("noise levels must be >= 0");
  for (std::size_t i = 0; i < hidden_layers.size(); ++i) {
    if (hidden_layers[i] < 0 || hidden_layers[i] >= s.n_layers) invalid("hidden layer outside [0, n_layers)");
    if (i > 0 && hidden_layers[i] <= hidden_layers[i - 1]) invalid("hidden_layers must be strictly increasing");
  }
  const auto positives = static_cast<long>(std::lround(s.n_examples * s.positive_fraction));
  if (positives < 1 || positives >= s.n_examples) invalid("class balance leaves one class empty");
}

}  // namespace

SyntheticDump synthesize_dump(const SyntheticSpec& spec, std::uint64_t seed) {
  std::vector<int> hidden_layers = spec.hidden_layers;
  if (hidden_layers.empty()) hidden_layers.push_back(spec.n_layers / 2);
  check_spec(spec, hidden_layers);

  Rng rng(seed);
  const int n = spec.n_examples;
  const int n_cells = spec.n_layers * spec.n_heads;

  std::vector<std::uint8_t> labels(static_cast<std::size_t>(n), kLabelFaithful);
  const auto positives = static_cast<int>(std::lround(n * spec.positive_fraction));
  std::fill(labels.begin(), labels.begin() + positives, kLabelHallucinated);
  rng.shuffle(labels);

  std::vector<int> cells(static_cast<std::size_t>(n_cells));
  for (int c = 0; c < n_cells; ++c) cells[static_cast<std::size_t>(c)] = c;
  rng.shuffle(cells);
  std::vector<bool> is_signal(static_cast<std::size_t>(n_cells), false);
  SyntheticDump out;
  for (int i = 0; i < spec.signal_cells; ++i) is_signal[static_cast<std::size_t>(cells[static_cast<std::size_t>(i)])] = true;
  for (int c = 0; c < n_cells; ++c) {
    if (is_signal[static_cast<std::size_t>(c)]) out.signal_cells.emplace_back(c / spec.n_heads, c % spec.n_heads);
  }

  std::vector<double> base_context(static_cast<std::size_t>(n_cells));
  std::vector<double> base_generated(static_cast<std::size_t>(n_cells));
  for (int c = 0; c < n_cells; ++c) {
    base_context[static_cast<std::size_t>(c)] = rng.uniform(0.3, 0.7);
    base_generated[static_cast<std::size_t>(c)] = rng.uniform(0.3, 0.7);
  }

  std::vector<double> direction(static_cast<std::size_t>(spec.hidden_dim));
  double norm = 0.0;
  for (auto& v : direction) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : direction) v = norm > 0 ? v / norm : 1.0;

  auto& m = out.manifest;
  m.dataset_name = spec.dataset_name;
  m.extractor_model_id = spec.extractor_model_id;
  m.n_layers = spec.n_layers;
  m.n_heads = spec.n_heads;
  m.hidden_dim = spec.hidden_dim;
  m.hidden_layers_dumped = hidden_layers;
  out.records.reserve(static_cast<std::size_t>(n));

  std::uint64_t offset = kRecordsHeaderBytes;
  std::vector<double> jitter(static_cast<std::size_t>(n_cells));
  std::vector<double> example_mean(static_cast<std::size_t>(spec.hidden_dim));
  const int width = std::max(6, static_cast<int>(std::to_string(n - 1).size()));
  for (int i = 0; i < n; ++i) {
    const bool hallucinated = labels[static_cast<std::size_t>(i)] == kLabelHallucinated;
    const int t_count = spec.min_tokens + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_tokens - spec.min_tokens + 1)));

    const auto digits = std::to_string(i);
    ExampleMeta meta;
    meta.id = "ex" + std::string(static_cast<std::size_t>(width) - digits.size(), '0') + digits;
    meta.label = labels[static_cast<std::size_t>(i)];
    meta.n_gen_tokens = static_cast<std::uint32_t>(t_count);
    meta.byte_offset = offset;
    offset += m.record_bytes(meta.n_gen_tokens);
    m.examples.push_back(meta);

    ActivationRecord r;
    r.attention = AttentionMass(t_count, spec.n_layers, spec.n_heads);
    for (auto& j : jitter) j = rng.normal(0.0, spec.example_noise);
    for (int t = 0; t < t_count; ++t) {
      for (int c = 0; c < n_cells; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        double ctx = base_context[cu] + jitter[cu] + rng.normal(0.0, spec.token_noise);
        if (hallucinated && is_signal[cu]) ctx -= spec.attention_shift;
        double gen = base_generated[cu] + rng.normal(0.0, spec.token_noise);
        ctx = std::max(ctx, 0.0);
        gen = std::max(gen, 1e-3);
        r.attention.set(t, c / spec.n_heads, c % spec.n_heads, static_cast<float>(ctx), static_cast<float>(gen));
      }
    }

    for (std::size_t k = 0; k < example_mean.size(); ++k) {
      example_mean[k] = rng.normal(0.0, spec.hidden_example_noise) + (hallucinated ? spec.hidden_shift * direction[k] : 0.0);
    }
    for (int layer : hidden_layers) {
      HiddenMatrix h(t_count, spec.hidden_dim);
      for (int t = 0; t < t_count; ++t) {
        for (int k = 0; k < spec.hidden_dim; ++k) {
          h(t, k) = static_cast<float>(example_mean[static_cast<std::size_t>(k)] + rng.normal());
        }
      }
      r.hidden_states.emplace(layer, std::move(h));
    }
    out.records.push_back(std::move(r));
  }
  return out;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) invalid("expected a JSON object");
  SyntheticSpec s;
  for (const auto& [key, value] : doc.items()) {
    try {
      if (key == "dataset_name") s.dataset_name = value.get<std::string>();
      else if (key == "extractor_model_id") s.extractor_model_id = value.get<std::string>();
      else if (key == "n_examples") s.n_examples = value.get<int>();
      else if (key == "positive_fraction") s.positive_fraction = value.get<double>();
      else if (key == "min_tokens") s.min_tokens = value.get<int>();
      else if (key == "max_tokens") s.max_tokens = value.get<int>();
      else if (key == "n_layers") s.n_layers = value.get<int>();
      else if (key == "n_heads") s.n_heads = value.get<int>();
      else if (key == "hidden_dim") s.hidden_dim = value.get<int>();
      else if (key == "hidden_layers") s.hidden_layers = value.get<std::vector<int>>();
      else if (key == "signal_cells") s.signal_cells = value.get<int>();
      else if (key == "attention_shift") s.attention_shift = value.get<double>();
      else if (key == "hidden_shift") s.hidden_shift = value.get<double>();
      else if (key == "example_noise") s.example_noise = value.get<double>();
      else if (key == "token_noise") s.token_noise = value.get<double>();
      else if (key == "hidden_example_noise") s.hidden_example_noise = value.get<double>();
      else invalid("unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      invalid("bad value for '" + key + "': " + e.what());
    }
  }
  return s;
}

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s) {
  return {{"dataset_name", s.dataset_name},
          {"extractor_model_id", s.extractor_model_id},
          {"n_examples", s.n_examples},
          {"positive_fraction", s.positive_fraction},
          {"min_tokens", s.min_tokens},
          {"max_tokens", s.max_tokens},
          {"n_layers", s.n_layers},
          {"n_heads", s.n_heads},
          {"hidden_dim", s.hidden_dim},
          {"hidden_layers", s.hidden_layers},
          {"signal_cells", s.signal_cells},
          {"attention_shift", s.attention_shift},
          {"hidden_shift", s.hidden_shift},
          {"example_noise", s.example_noise},
          {"token_noise", s.token_noise},
          {"hidden_example_noise", s.hidden_example_noise}};
}

}  // namespace halodet
