#include <cmath>

#include "doctest.h"
#include "halodet/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace halodet;
using testutil::error_code_of;

TEST_CASE("ROC-AUC equals the pairwise count with ties") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(120));
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    const auto levels = 1 + rng.below(8);
    for (int i = 0; i < n; ++i) {
      scores[static_cast<std::size_t>(i)] = trial % 3 == 0 ? rng.normal() : static_cast<double>(rng.below(levels));
      labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(2));
    }
    labels[0] = 0;
    labels[1] = 1;
    CHECK(std::abs(roc_auc(scores, labels) - oracle::pairwise_auc(scores, labels)) < 1e-12);
  }
}

TEST_CASE("small AUC cases") {
  const std::vector<int> labels = {0, 0, 1, 1};
  CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, labels) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, labels) == 0.0);
  CHECK(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, labels) == 0.5);
  CHECK(roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, labels) == 0.75);
}

TEST_CASE("AUC ignores strictly increasing transforms and complements under negation") {
  Rng rng(2);
  std::vector<double> s(80);
  std::vector<int> l(80);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = std::round(rng.normal() * 3.0) / 3.0;
    l[i] = static_cast<int>(i % 3 == 0);
  }
  const double base = roc_auc(s, l);
  std::vector<double> t(s.size()), neg(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    t[i] = std::exp(2.0 * s[i]) + 5.0;
    neg[i] = -s[i];
  }
  CHECK(roc_auc(t, l) == base);
  CHECK(std::abs(roc_auc(neg, l) + base - 1.0) < 1e-12);

  std::vector<int> flipped(l.size());
  for (std::size_t i = 0; i < l.size(); ++i) flipped[i] = 1 - l[i];
  CHECK(std::abs(roc_auc(s, flipped) + base - 1.0) < 1e-12);
}

TEST_CASE("AUC guards") {
  CHECK(error_code_of([] { roc_auc(std::vector<double>{1, 2}, std::vector<int>{1, 1}); }) ==
        ErrorCode::UndefinedMetric);
  CHECK(error_code_of([] { roc_auc(std::vector<double>{1, std::nan("")}, std::vector<int>{0, 1}); }) ==
        ErrorCode::NonFinite);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{1, 2, 3}, std::vector<int>{0, 1}), Error);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{1, 2}, std::vector<int>{0, 2}), Error);
}

TEST_CASE("average ranks") {
  CHECK(average_ranks(std::vector<double>{3.0, 1.0, 2.0}) == std::vector<double>{3.0, 1.0, 2.0});
  CHECK(average_ranks(std::vector<double>{5.0, 5.0, 1.0, 5.0}) == std::vector<double>{3.0, 3.0, 1.0, 3.0});
}

TEST_CASE("detector ranks agree with a sort-free oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::map<std::string, double> scores;
    std::vector<double> values;
    const auto m = 1 + rng.below(7);
    for (std::uint64_t i = 0; i < m; ++i) {
      const double v = static_cast<double>(rng.below(4)) / 4.0;
      scores["d" + std::to_string(i)] = v;
      values.push_back(v);
    }
    const auto ranks = rank_detectors(scores);
    const auto ref = oracle::descending_ranks(values);
    std::size_t i = 0;
    for (const auto& [name, r] : ranks) {
      CHECK(name == "d" + std::to_string(i));
      CHECK(r == ref[i]);
      ++i;
    }
  }
}

TEST_CASE("mean reciprocal rank") {
  const std::vector<std::map<std::string, double>> cells = {
      {{"a", 4.0}, {"b", 1.0}, {"c", 2.0}, {"d", 3.0}},
      {{"a", 4.0}, {"b", 1.0}, {"c", 3.0}, {"d", 2.0}},
      {{"a", 3.0}, {"b", 1.0}, {"c", 2.0}, {"d", 4.0}},
  };
  const auto mrr = mrr_of_detectors(cells);
  CHECK(std::round(mrr.at("a") * 1e4) / 1e4 == 0.2778);
  CHECK(mrr.at("b") == 1.0);
  CHECK(mrr.at("c") == doctest::Approx((0.5 + 1.0 / 3.0 + 0.5) / 3.0));

  std::vector<std::map<std::string, double>> ragged = cells;
  ragged[1].erase("d");
  CHECK(error_code_of([&] { mrr_of_detectors(ragged); }) == ErrorCode::InconsistentDetectors);
}

TEST_CASE("seed summaries") {
  const auto s = summarize(std::vector<double>{0.6, 0.7, 0.8});
  CHECK(s.n == 3);
  CHECK(s.mean == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(s.stdev == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(s.ci95_half_width == doctest::Approx(1.96 * 0.1 / std::sqrt(3.0)).epsilon(1e-12));
  const auto one = summarize(std::vector<double>{0.9});
  CHECK(one.stdev == 0.0);
  CHECK(one.ci95_half_width == 0.0);
  CHECK(summarize(std::vector<double>{}).n == 0);
}
