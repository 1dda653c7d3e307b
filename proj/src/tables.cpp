#include "patchprobe/tables.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "patchprobe/errors.hpp"

namespace patchprobe {

MetricReport seg_report(const SegScores& s, std::string dataset, std::string model) {
  return {std::move(dataset), std::move(model), "seg",
          {{"mIoU", s.miou}, {"Dice", s.dice}, {"P", s.precision}, {"R", s.recall}}};
}

MetricReport det_report(const DetScores& s, std::string dataset, std::string model) {
  return {std::move(dataset), std::move(model), "det",
          {{"mAP50", s.map50}, {"mAP", s.map}, {"P", s.precision}, {"R", s.recall}, {"F1", s.f1}}};
}

namespace {

const std::vector<std::string>& columns_for(const std::string& task) {
  static const std::vector<std::string> seg{"mIoU", "Dice", "P", "R"};
  static const std::vector<std::string> det{"mAP50", "mAP", "P", "R", "F1"};
  if (task == "seg") return seg;
  if (task == "det") return det;
  throw SchemaError("metric report task must be seg or det, got '" + task + "'");
}

}  // namespace

nlohmann::json report_to_json(const MetricReport& r) {
  nlohmann::json doc = {{"dataset", r.dataset}, {"model", r.model}, {"task", r.task}};
  for (const auto& [name, value] : r.metrics) doc[name] = value;
  return doc;
}

MetricReport report_from_json(const nlohmann::json& doc) {
  try {
    MetricReport r;
    r.dataset = doc.value("dataset", "");
    r.model = doc.value("model", "");
    r.task = doc.at("task").get<std::string>();
    for (const auto& name : columns_for(r.task)) r.metrics.emplace_back(name, doc.at(name).get<double>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed metric report: ") + e.what());
  }
}

Table build_table(const std::vector<MetricReport>& reports) {
  Table t;
  if (reports.empty()) return t;
  for (const auto& [name, value] : reports.front().metrics) t.columns.push_back(name);
  for (const auto& r : reports) {
    std::vector<std::string> cols;
    for (const auto& [name, value] : r.metrics) cols.push_back(name);
    if (cols != t.columns) throw ConfigError("reports have different metric columns");
  }
  t.rows = reports;
  t.best.assign(reports.size(), std::vector<bool>(t.columns.size(), false));
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < reports.size(); ++i) groups[reports[i].dataset].push_back(i);
  for (const auto& [dataset, rows] : groups) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      double top = reports[rows.front()].metrics[c].second;
      for (std::size_t i : rows) top = std::max(top, reports[i].metrics[c].second);
      for (std::size_t i : rows) t.best[i][c] = reports[i].metrics[c].second == top;
    }
  }
  return t;
}

namespace {

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string format_csv(const Table& t) {
  std::ostringstream out;
  out << "Dataset,Model";
  for (const auto& c : t.columns) out << ',' << csv_field(c);
  for (const auto& c : t.columns) out << ',' << csv_field(c + "_best");
  out << '\n';
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    out << csv_field(t.rows[i].dataset) << ',' << csv_field(t.rows[i].model);
    for (const auto& [name, value] : t.rows[i].metrics) out << ',' << fixed3(value);
    for (bool b : t.best[i]) out << ',' << (b ? 1 : 0);
    out << '\n';
  }
  return out.str();
}

std::string format_text(const Table& t) {
  std::vector<std::string> header{"Dataset", "Model"};
  header.insert(header.end(), t.columns.begin(), t.columns.end());
  std::vector<std::vector<std::string>> cells{header};
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    std::vector<std::string> row{t.rows[i].dataset, t.rows[i].model};
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      row.push_back(fixed3(t.rows[i].metrics[c].second) + (t.best[i][c] ? "*" : " "));
    }
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) line += "  ";
      // Text columns left-aligned, numbers right-aligned.
      const std::string pad(width[c] - row[c].size(), ' ');
      line += c < 2 ? row[c] + pad : pad + row[c];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
  }
  return out.str();
}

void emit_tables(const std::vector<MetricReport>& reports, const std::filesystem::path& dir,
                 const std::string& stem) {
  const Table t = build_table(reports);
  std::filesystem::create_directories(dir);
  for (const auto& [ext, body] : {std::pair{".csv", format_csv(t)}, std::pair{".txt", format_text(t)}}) {
    std::ofstream out(dir / (stem + ext));
    if (!out) throw IoError("cannot write " + (dir / (stem + ext)).string());
    out << body;
  }
}

}  // namespace patchprobe
