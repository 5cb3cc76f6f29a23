#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "halodet/metrics.hpp"
#include "halodet/sweep.hpp"

namespace halodet {

struct CellKey {
  std::string config_id;
  std::string strategy;
  std::string reducer;
  std::string classifier;
  std::string extractor;
  std::string dataset;
  int train_size = 0;

  auto operator<=>(const CellKey&) const = default;
};

// One (config, extractor, dataset, train size) cell summarized over seeds.
// Skipped runs are counted and left out of the statistics.
struct CellSummary {
  CellKey key;
  SeedSummary auc;
  std::size_t n_skipped = 0;
};

// Rows by columns of means. For ranking tables `average` holds each row's
// mean over its present columns and `rank` the rank of that average (1 =
// best, ties averaged); rows are ordered by rank, then name.
struct Table {
  std::string row_label;
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> values;
  std::vector<double> average;
  std::vector<double> rank;

  bool ranked() const { return !rank.empty(); }
};

// Builds a ranking table from row -> column -> mean.
Table rank_by_average(const std::string& row_label,
                      const std::map<std::string, std::map<std::string, double>>& means);

struct AggregateReport {
  std::vector<CellSummary> cells;   // sorted by key
  Table classifier_by_dataset;      // ranked; averaged over configs, extractors and sizes
  Table classifier_by_extractor;    // ranked; averaged over configs, datasets and sizes
  Table mrr_by_extractor;           // classifiers ranked within each (extractor, dataset) cell
  Table method_by_dataset;          // ranked; one row per config id
  Table size_by_dataset;            // train size rows, unranked
  std::size_t n_runs = 0;
  std::size_t n_skipped = 0;
  std::vector<std::string> notes;
};

// Means are taken hierarchically: seeds into cells, then cell means into
// each table entry. The result does not depend on the order of `results`.
AggregateReport aggregate(std::span<const RunResult> results);

// Writes cells.csv, curve.csv and one CSV per table into `dir`; returns the
// paths written.
std::vector<std::filesystem::path> write_report(const AggregateReport& report, const std::filesystem::path& dir);

// The file names write_report produces, for overwrite checks.
std::vector<std::string> report_file_names();

void write_table_csv(const Table& table, std::ostream& out);

}  // namespace halodet
