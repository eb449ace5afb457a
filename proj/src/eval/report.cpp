// SPDX-License-Identifier: Apache-2.0
#include <cstdio>

#include "json.hpp"
#include "metaxp/error.hpp"
#include "metaxp/experiment.hpp"

namespace metaxp::eval {

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string percent(const std::optional<double>& v) { return v ? fixed(*v * 100.0, 2) : "n/a"; }

std::vector<std::string> header(bool timing) {
  std::vector<std::string> h{"Method", "Data", "CER_source", "CER_accent", "Δsource%", "Δaccent%"};
  if (timing) h.push_back("wall_s");
  h.push_back("trainable%");
  return h;
}

std::vector<std::string> cells(const MethodResult& r, bool timing) {
  std::vector<std::string> c{r.name, r.data, fixed(r.cer_source, 4), fixed(r.cer_accent, 4), percent(r.delta_source),
                             percent(r.delta_accent)};
  if (timing) c.push_back(fixed(r.wall_s, 1));
  c.push_back(fixed(r.trainable_fraction * 100.0, 1));
  return c;
}

// Display width of a UTF-8 string (counts code points).
std::size_t width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
  return n;
}

}  // namespace

ReportFormat parse_report_format(const std::string& name) {
  if (name == "table") return ReportFormat::Table;
  if (name == "csv") return ReportFormat::Csv;
  if (name == "json") return ReportFormat::Json;
  throw ConfigError("unknown report format: " + name + " (expected table, csv or json)");
}

std::string render_report(const ExperimentReport& report, ReportFormat format, bool include_timing) {
  const auto head = header(include_timing);
  std::string out;
  if (format == ReportFormat::Csv) {
    auto line = [&](const std::vector<std::string>& row) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        out += row[i];
      }
      out += '\n';
    };
    line(head);
    for (const auto& r : report.rows) line(cells(r, include_timing));
    return out;
  }
  if (format == ReportFormat::Json) {
    nlohmann::ordered_json j;
    j["columns"] = head;
    j["rows"] = nlohmann::ordered_json::array();
    auto rounded = [](double v, int decimals) { return std::stod(fixed(v, decimals)); };
    for (const auto& r : report.rows) {
      nlohmann::ordered_json row;
      row["method"] = r.name;
      row["data"] = r.data;
      row["cer_source"] = r.cer_source;
      row["cer_accent"] = r.cer_accent;
      row["delta_source_pct"] = r.delta_source ? nlohmann::ordered_json(rounded(*r.delta_source * 100.0, 2)) : nullptr;
      row["delta_accent_pct"] = r.delta_accent ? nlohmann::ordered_json(rounded(*r.delta_accent * 100.0, 2)) : nullptr;
      if (include_timing) row["wall_s"] = rounded(r.wall_s, 1);
      row["trainable_pct"] = rounded(r.trainable_fraction * 100.0, 1);
      row["steps"] = r.steps;
      row["cer_by_domain"] = r.cer_by_domain;
      j["rows"].push_back(std::move(row));
    }
    return j.dump(2) + "\n";
  }

  std::vector<std::vector<std::string>> table{head};
  for (const auto& r : report.rows) table.push_back(cells(r, include_timing));
  std::vector<std::size_t> widths(head.size(), 0);
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], width(row[i]));
  }
  for (std::size_t k = 0; k < table.size(); ++k) {
    const auto& row = table[k];
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += "  ";
      const std::string pad(widths[i] - width(row[i]), ' ');
      // Text columns left-aligned, numbers right-aligned.
      line += i < 2 ? row[i] + pad : pad + row[i];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + '\n';
    if (k == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w;
      out += std::string(total + 2 * (widths.size() - 1), '-') + '\n';
    }
  }
  return out;
}

}  // namespace metaxp::eval
