#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "halodet/activation_io.hpp"
#include "json.hpp"

namespace halodet {

// Controls for synthetic dumps with a known class signal.
//
// Attention: every (layer, head) cell gets a baseline context mass; examples
// add a per-cell jitter and tokens add noise. In `signal_cells` randomly
// chosen cells, hallucinated examples have the context mass shifted down by
// `attention_shift`. Generated-span mass is drawn independently of the label
// and floored at 1e-3, so context + generated > 0 always holds.
//
// Hidden states: token vectors are N(example_mean, I), with example_mean
// drawn around 0 for faithful answers and around hidden_shift * u for
// hallucinated ones (u a fixed random unit vector).
struct SyntheticSpec {
  std::string dataset_name = "synthetic";
  std::string extractor_model_id = "synthetic-extractor";
  int n_examples = 200;
  double positive_fraction = 0.5;
  int min_tokens = 4;
  int max_tokens = 12;
  int n_layers = 8;
  int n_heads = 8;
  int hidden_dim = 16;
  std::vector<int> hidden_layers;  // empty: floor(n_layers / 2)
  int signal_cells = 10;
  double attention_shift = 0.3;
  double hidden_shift = 0.0;
  double example_noise = 0.1;
  double token_noise = 0.1;
  double hidden_example_noise = 0.5;
};

struct SyntheticDump {
  ActivationManifest manifest;  // byte offsets filled in
  std::vector<ActivationRecord> records;
  std::vector<std::pair<int, int>> signal_cells;  // (layer, head), sorted
};

// Deterministic for a fixed (spec, seed). Throws Error(InvalidArgument) for
// specs that cannot be realized.
SyntheticDump synthesize_dump(const SyntheticSpec& spec, std::uint64_t seed);

// Unknown keys are rejected; absent keys keep their defaults.
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc);
nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);

}  // namespace halodet
