#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "halodet/report.hpp"
#include "test_util.hpp"

using namespace halodet;
using testutil::error_code_of;

namespace {

RunResult row(const std::string& classifier, const std::string& dataset, int size, std::uint64_t seed,
              std::optional<double> auc, const std::string& extractor = "qwen") {
  RunResult r;
  r.config_id = "lb-" + classifier;
  r.strategy = "lookback";
  r.reducer = "pca";
  r.classifier = classifier;
  r.extractor = extractor;
  r.dataset = dataset;
  r.train_size = size;
  r.seed = seed;
  r.roc_auc = auc;
  if (!auc) r.status = "skipped:degenerate_labels";
  return r;
}

std::string table_text(const Table& t) {
  std::ostringstream ss;
  write_table_csv(t, ss);
  return ss.str();
}

std::vector<RunResult> grid() {
  std::vector<RunResult> out;
  int k = 0;
  for (const auto* c : {"logreg", "gbdt", "probe"}) {
    for (const auto* d : {"ragtruth", "covidqa", "finqa"}) {
      for (const auto* e : {"qwen", "llama"}) {
        for (int size : {50, 250}) {
          for (std::uint64_t seed = 0; seed < 3; ++seed) {
            out.push_back(row(c, d, size, seed, 0.5 + 0.01 * static_cast<double>((k * 37) % 41), e));
            ++k;
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("the four-detector ranking from dataset means") {
  const std::map<std::string, std::map<std::string, double>> means = {
      {"tabpfn", {{"ragtruth", 0.7161}, {"ragbench", 0.8204}, {"overall", 0.8139}}},
      {"logreg", {{"ragtruth", 0.6896}, {"ragbench", 0.8218}, {"overall", 0.8087}}},
      {"catboost", {{"ragtruth", 0.6832}, {"ragbench", 0.7932}, {"overall", 0.8176}}},
      {"att-pool", {{"ragtruth", 0.6776}, {"ragbench", 0.7611}, {"overall", 0.8002}}},
  };
  const auto t = rank_by_average("classifier", means);
  REQUIRE(t.rows == std::vector<std::string>{"tabpfn", "logreg", "catboost", "att-pool"});
  CHECK(t.rank == std::vector<double>{1.0, 2.0, 3.0, 4.0});
  const double expected[] = {(0.7161 + 0.8204 + 0.8139) / 3.0, (0.6896 + 0.8218 + 0.8087) / 3.0,
                             (0.6832 + 0.7932 + 0.8176) / 3.0, (0.6776 + 0.7611 + 0.8002) / 3.0};
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(t.average[i] - expected[i]) < 1e-15);
  CHECK(t.columns == std::vector<std::string>{"overall", "ragbench", "ragtruth"});
}

TEST_CASE("ties share the average rank and the name breaks the row order") {
  const auto t = rank_by_average("m", {{"b", {{"x", 0.7}}}, {"a", {{"x", 0.7}}}, {"c", {{"x", 0.9}}}});
  CHECK(t.rows == std::vector<std::string>{"c", "a", "b"});
  CHECK(t.rank == std::vector<double>{1.0, 2.5, 2.5});
}

TEST_CASE("aggregation is hierarchical and ignores input order") {
  const auto results = grid();
  const auto report = aggregate(results);
  CHECK(report.n_runs == results.size());
  CHECK(report.n_skipped == 0);
  CHECK(report.cells.size() == results.size() / 3);

  auto shuffled = results;
  Rng rng(8);
  rng.shuffle(shuffled);
  const auto again = aggregate(shuffled);
  CHECK(table_text(again.classifier_by_dataset) == table_text(report.classifier_by_dataset));
  CHECK(table_text(again.mrr_by_extractor) == table_text(report.mrr_by_extractor));
  CHECK(table_text(again.size_by_dataset) == table_text(report.size_by_dataset));

  // Hand computation: seed means per cell, then the mean of cell means.
  std::map<std::string, std::vector<double>> per_cell;
  for (const auto& r : results) {
    if (r.classifier == "gbdt" && r.dataset == "finqa") {
      per_cell[r.extractor + std::to_string(r.train_size)].push_back(*r.roc_auc);
    }
  }
  double total = 0.0;
  for (const auto& [k, v] : per_cell) total += (v[0] + v[1] + v[2]) / 3.0;
  const auto& t = report.classifier_by_dataset;
  const auto row_at = std::find(t.rows.begin(), t.rows.end(), "gbdt") - t.rows.begin();
  const auto col_at = std::find(t.columns.begin(), t.columns.end(), "finqa") - t.columns.begin();
  CHECK(std::abs(*t.values[static_cast<std::size_t>(row_at)][static_cast<std::size_t>(col_at)] - total / 4.0) < 1e-12);
}

TEST_CASE("skipped runs are counted but not averaged") {
  std::vector<RunResult> results = {row("logreg", "d", 50, 0, 0.8), row("logreg", "d", 50, 1, std::nullopt),
                                    row("logreg", "d", 50, 2, 0.6), row("gbdt", "d", 50, 0, std::nullopt)};
  const auto report = aggregate(results);
  CHECK(report.n_skipped == 2);
  REQUIRE(report.cells.size() == 2);
  const auto& lr = report.cells[1];
  CHECK(lr.key.classifier == "logreg");
  CHECK(lr.auc.n == 2);
  CHECK(lr.auc.mean == doctest::Approx(0.7));
  CHECK(lr.n_skipped == 1);
  CHECK(report.cells[0].auc.n == 0);
  CHECK(report.classifier_by_dataset.rows == std::vector<std::string>{"logreg"});
  CHECK(report.notes.size() == 2);
}

TEST_CASE("MRR needs the same classifiers in every dataset of an extractor") {
  auto results = grid();
  std::erase_if(results, [](const RunResult& r) { return r.classifier == "probe" && r.dataset == "finqa" && r.extractor == "llama"; });
  const auto report = aggregate(results);
  const auto& t = report.mrr_by_extractor;
  CHECK(t.columns == std::vector<std::string>{"qwen"});
  CHECK(std::any_of(report.notes.begin(), report.notes.end(),
                    [](const std::string& n) { return n.find("llama") != std::string::npos; }));
}

TEST_CASE("duplicate seeds in one cell are rejected") {
  std::vector<RunResult> results = {row("logreg", "d", 50, 0, 0.8), row("logreg", "d", 50, 0, 0.7)};
  CHECK(error_code_of([&] { aggregate(results); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("report files") {
  testutil::TempDir tmp;
  const auto report = aggregate(grid());
  const auto written = write_report(report, tmp / "out");
  CHECK(written.size() == report_file_names().size());
  for (const auto& name : report_file_names()) CHECK(std::filesystem::exists(tmp / "out" / name));
  const auto ranking = testutil::read_text(tmp / "out" / "classifier_by_dataset.csv");
  CHECK(ranking.rfind("classifier,covidqa,finqa,ragtruth,average,rank\n", 0) == 0);
  const auto curve = testutil::read_text(tmp / "out" / "curve.csv");
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 1 + 36);
  CHECK(testutil::read_text(tmp / "out" / "notes.txt").rfind("runs: 108\nskipped: 0\n", 0) == 0);
}
