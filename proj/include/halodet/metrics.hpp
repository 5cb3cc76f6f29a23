#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

namespace halodet {

// Mann-Whitney estimate of P(s+ > s-) + P(s+ = s-) / 2 over all
// positive/negative pairs, via average ranks in O(n log n). Labels are 0/1;
// 1 is the positive (hallucinated) class. Throws Error(UndefinedMetric) when
// either class is missing and Error(NonFinite) on NaN scores.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Average (1-based) ranks of values in ascending order; ties share the mean
// of the ranks they occupy.
std::vector<double> average_ranks(std::span<const double> values);

// Rank 1 is the highest score; ties get the average of the occupied ranks.
std::map<std::string, double> rank_detectors(const std::map<std::string, double>& scores);

// MRR(d) = mean over cells of 1 / rank_d(cell). Every cell must rank the
// same detector set (Error(InconsistentDetectors) otherwise).
std::map<std::string, double> mrr_of_detectors(const std::vector<std::map<std::string, double>>& cell_ranks);

struct SeedSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double stdev = 0.0;  // sample standard deviation; 0 when n < 2
  double ci95_half_width = 0.0;  // 1.96 * stdev / sqrt(n)
};

SeedSummary summarize(std::span<const double> values);

}  // namespace halodet
