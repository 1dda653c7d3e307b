#pragma once
// Metric reports and the result tables built from them.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "patchprobe/metrics.hpp"

namespace patchprobe {

struct MetricReport {
  std::string dataset;
  std::string model;
  std::string task;  // "seg" or "det"
  std::vector<std::pair<std::string, double>> metrics;  // column order preserved
};

MetricReport seg_report(const SegScores& s, std::string dataset = {}, std::string model = {});
MetricReport det_report(const DetScores& s, std::string dataset = {}, std::string model = {});

nlohmann::json report_to_json(const MetricReport& r);
MetricReport report_from_json(const nlohmann::json& doc);

struct Table {
  std::vector<std::string> columns;  // metric columns only
  std::vector<MetricReport> rows;
  std::vector<std::vector<bool>> best;  // [row][column]
};

// Rows keep input order. The best (highest) value of each column is marked
// within each dataset; ties are all marked. Throws ConfigError when the
// reports do not share one column set.
Table build_table(const std::vector<MetricReport>& reports);

std::string format_csv(const Table& table);
std::string format_text(const Table& table);  // best values carry a '*'

// Writes <stem>.csv and <stem>.txt into dir.
void emit_tables(const std::vector<MetricReport>& reports, const std::filesystem::path& dir,
                 const std::string& stem = "table");

}  // namespace patchprobe
