#include "halodet/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>

#include "halodet/csv.hpp"
#include "halodet/error.hpp"

namespace halodet {

namespace {

using Grid = std::map<std::string, std::map<std::string, std::vector<double>>>;

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::map<std::string, std::map<std::string, double>> collapse(const Grid& grid) {
  std::map<std::string, std::map<std::string, double>> out;
  for (const auto& [row, cols] : grid) {
    for (const auto& [col, values] : cols) out[row][col] = mean_of(values);
  }
  return out;
}

Table plain_table(const std::string& row_label, const std::map<std::string, std::map<std::string, double>>& means,
                  const std::vector<std::string>& row_order) {
  Table t;
  t.row_label = row_label;
  std::set<std::string> cols;
  for (const auto& [row, m] : means) {
    for (const auto& [col, v] : m) cols.insert(col);
  }
  t.columns.assign(cols.begin(), cols.end());
  for (const auto& row : row_order) {
    const auto it = means.find(row);
    if (it == means.end()) continue;
    t.rows.push_back(row);
    std::vector<std::optional<double>> values;
    for (const auto& col : t.columns) {
      const auto found = it->second.find(col);
      values.push_back(found == it->second.end() ? std::nullopt : std::optional<double>(found->second));
    }
    t.values.push_back(std::move(values));
  }
  return t;
}

std::string cell_label(const CellKey& k) {
  return k.config_id + "/" + k.extractor + "/" + k.dataset + "/" + std::to_string(k.train_size);
}

}  // namespace

Table rank_by_average(const std::string& row_label,
                      const std::map<std::string, std::map<std::string, double>>& means) {
  std::map<std::string, double> averages;
  for (const auto& [row, cols] : means) {
    if (cols.empty()) continue;
    double s = 0.0;
    for (const auto& [col, v] : cols) s += v;
    averages[row] = s / static_cast<double>(cols.size());
  }
  const auto ranks = rank_detectors(averages);
  std::vector<std::string> order;
  for (const auto& [row, avg] : averages) order.push_back(row);
  std::stable_sort(order.begin(), order.end(),
                   [&](const std::string& a, const std::string& b) { return ranks.at(a) < ranks.at(b); });
  Table t = plain_table(row_label, means, order);
  for (const auto& row : t.rows) {
    t.average.push_back(averages.at(row));
    t.rank.push_back(ranks.at(row));
  }
  return t;
}

AggregateReport aggregate(std::span<const RunResult> results) {
  std::map<CellKey, std::map<std::uint64_t, std::optional<double>>> grouped;
  for (const auto& r : results) {
    CellKey key{r.config_id, r.strategy, r.reducer, r.classifier, r.extractor, r.dataset, r.train_size};
    auto& seeds = grouped[key];
    if (!seeds.emplace(r.seed, r.ok() ? r.roc_auc : std::nullopt).second) {
      throw Error(ErrorCode::InvalidArgument,
                  "duplicate result for cell " + cell_label(key) + " seed " + std::to_string(r.seed));
    }
  }

  AggregateReport report;
  report.n_runs = results.size();
  Grid by_dataset, by_extractor, by_method, by_size;
  std::map<std::string, Grid> mrr_cells;  // extractor -> dataset -> classifier -> cell means
  std::set<int> sizes;

  for (const auto& [key, seeds] : grouped) {
    CellSummary cell;
    cell.key = key;
    std::vector<double> values;
    for (const auto& [seed, auc] : seeds) {
      if (auc) values.push_back(*auc);
      else ++cell.n_skipped;
    }
    cell.auc = summarize(values);
    report.n_skipped += cell.n_skipped;
    if (cell.n_skipped > 0) {
      report.notes.push_back(cell_label(key) + ": " + std::to_string(cell.n_skipped) + " of " +
                             std::to_string(seeds.size()) + " runs skipped");
    }
    report.cells.push_back(cell);
    if (values.empty()) continue;

    const double m = cell.auc.mean;
    by_dataset[key.classifier][key.dataset].push_back(m);
    by_extractor[key.classifier][key.extractor].push_back(m);
    by_method[key.config_id][key.dataset].push_back(m);
    by_size[std::to_string(key.train_size)][key.dataset].push_back(m);
    mrr_cells[key.extractor][key.dataset][key.classifier].push_back(m);
    sizes.insert(key.train_size);
  }

  report.classifier_by_dataset = rank_by_average("classifier", collapse(by_dataset));
  report.classifier_by_extractor = rank_by_average("classifier", collapse(by_extractor));
  report.method_by_dataset = rank_by_average("method", collapse(by_method));

  std::vector<std::string> size_order;
  for (int s : sizes) size_order.push_back(std::to_string(s));
  report.size_by_dataset = plain_table("train_size", collapse(by_size), size_order);

  std::map<std::string, std::map<std::string, double>> mrr;  // classifier -> extractor -> mrr
  std::set<std::string> classifiers;
  for (const auto& [extractor, datasets] : mrr_cells) {
    std::vector<std::map<std::string, double>> cell_ranks;
    for (const auto& [dataset, per_classifier] : datasets) {
      std::map<std::string, double> scores;
      for (const auto& [classifier, means] : per_classifier) scores[classifier] = mean_of(means);
      cell_ranks.push_back(rank_detectors(scores));
    }
    try {
      for (const auto& [classifier, value] : mrr_of_detectors(cell_ranks)) {
        mrr[classifier][extractor] = value;
        classifiers.insert(classifier);
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InconsistentDetectors) throw;
      report.notes.push_back("MRR for extractor " + extractor +
                             " omitted: classifiers differ across its datasets");
    }
  }
  report.mrr_by_extractor = plain_table("classifier", mrr, {classifiers.begin(), classifiers.end()});
  return report;
}

void write_table_csv(const Table& table, std::ostream& out) {
  std::vector<std::string> header = {table.row_label};
  header.insert(header.end(), table.columns.begin(), table.columns.end());
  if (table.ranked()) {
    header.push_back("average");
    header.push_back("rank");
  }
  out << csv::join_row(header) << '\n';
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    std::vector<std::string> fields = {table.rows[r]};
    for (const auto& v : table.values[r]) fields.push_back(v ? fixed(*v) : std::string());
    if (table.ranked()) {
      fields.push_back(fixed(table.average[r]));
      fields.push_back(csv::format_number(table.rank[r], 6));
    }
    out << csv::join_row(fields) << '\n';
  }
}

std::vector<std::string> report_file_names() {
  return {"cells.csv",          "curve.csv",          "classifier_by_dataset.csv", "classifier_by_extractor.csv",
          "mrr_by_extractor.csv", "method_by_dataset.csv", "size_by_dataset.csv",     "notes.txt"};
}

std::vector<std::filesystem::path> write_report(const AggregateReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto open = [&](const std::string& name) {
    const auto path = dir / name;
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    written.push_back(path);
    return out;
  };

  {
    auto out = open("cells.csv");
    out << "config_id,strategy,reducer,classifier,extractor,dataset,train_size,n_seeds,n_skipped,mean,stdev,"
           "ci95_half_width\n";
    for (const auto& c : report.cells) {
      const bool has = c.auc.n > 0;
      out << csv::join_row({c.key.config_id, c.key.strategy, c.key.reducer, c.key.classifier, c.key.extractor,
                            c.key.dataset, std::to_string(c.key.train_size), std::to_string(c.auc.n),
                            std::to_string(c.n_skipped), has ? fixed(c.auc.mean) : "",
                            has ? fixed(c.auc.stdev) : "", has ? fixed(c.auc.ci95_half_width) : ""})
          << '\n';
    }
  }
  {
    auto out = open("curve.csv");
    out << "config_id,classifier,extractor,dataset,train_size,mean,ci95_low,ci95_high\n";
    for (const auto& c : report.cells) {
      if (c.auc.n == 0) continue;
      out << csv::join_row({c.key.config_id, c.key.classifier, c.key.extractor, c.key.dataset,
                            std::to_string(c.key.train_size), fixed(c.auc.mean),
                            fixed(c.auc.mean - c.auc.ci95_half_width), fixed(c.auc.mean + c.auc.ci95_half_width)})
          << '\n';
    }
  }
  const std::pair<const char*, const Table*> tables[] = {
      {"classifier_by_dataset.csv", &report.classifier_by_dataset},
      {"classifier_by_extractor.csv", &report.classifier_by_extractor},
      {"mrr_by_extractor.csv", &report.mrr_by_extractor},
      {"method_by_dataset.csv", &report.method_by_dataset},
      {"size_by_dataset.csv", &report.size_by_dataset},
  };
  for (const auto& [name, table] : tables) {
    auto out = open(name);
    write_table_csv(*table, out);
  }
  {
    auto out = open("notes.txt");
    out << "runs: " << report.n_runs << "\nskipped: " << report.n_skipped << '\n';
    for (const auto& n : report.notes) out << n << '\n';
  }
  return written;
}

}  // namespace halodet
