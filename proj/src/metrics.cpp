#include "halodet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "halodet/error.hpp"

namespace halodet {

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // positions i..j-1 hold ranks i+1..j
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::Misaligned, "roc_auc: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw Error(ErrorCode::NonFinite, "roc_auc: NaN score");
    if (labels[i] == 1) ++n_pos;
    else if (labels[i] != 0) throw Error(ErrorCode::InvalidArgument, "roc_auc: labels must be 0 or 1");
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorCode::UndefinedMetric, "roc_auc undefined: only one class present");
  const auto ranks = average_ranks(scores);
  // Twice the rank sum is an integer, so the U statistic is exact.
  double twice_rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (labels[i] == 1) twice_rank_sum += 2.0 * ranks[i];
  }
  const double pos = static_cast<double>(n_pos);
  const double twice_u = twice_rank_sum - pos * (pos + 1.0);
  return twice_u / (2.0 * pos * static_cast<double>(n_neg));
}

std::map<std::string, double> rank_detectors(const std::map<std::string, double>& scores) {
  std::vector<double> negated;
  for (const auto& [name, score] : scores) {
    if (std::isnan(score)) throw Error(ErrorCode::NonFinite, "rank_detectors: NaN score for '" + name + "'");
    negated.push_back(-score);
  }
  const auto ranks = average_ranks(negated);
  std::map<std::string, double> out;
  std::size_t i = 0;
  for (const auto& [name, score] : scores) out[name] = ranks[i++];
  return out;
}

std::map<std::string, double> mrr_of_detectors(const std::vector<std::map<std::string, double>>& cell_ranks) {
  if (cell_ranks.empty()) throw Error(ErrorCode::InvalidArgument, "mrr: no cells");
  std::set<std::string> detectors;
  for (const auto& [name, rank] : cell_ranks.front()) detectors.insert(name);
  std::map<std::string, double> sums;
  for (const auto& cell : cell_ranks) {
    std::set<std::string> here;
    for (const auto& [name, rank] : cell) here.insert(name);
    if (here != detectors) throw Error(ErrorCode::InconsistentDetectors, "mrr: cells rank different detector sets");
    for (const auto& [name, rank] : cell) {
      if (!(rank >= 1.0)) throw Error(ErrorCode::InvalidArgument, "mrr: ranks must be >= 1");
      sums[name] += 1.0 / rank;
    }
  }
  for (auto& [name, sum] : sums) sum /= static_cast<double>(cell_ranks.size());
  return sums;
}

SeedSummary summarize(std::span<const double> values) {
  SeedSummary s;
  s.n = values.size();
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stdev = std::sqrt(ss / static_cast<double>(s.n - 1));
    s.ci95_half_width = 1.96 * s.stdev / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

}  // namespace halodet
