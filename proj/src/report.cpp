// SPDX-License-Identifier: Apache-2.0
#include "opdlab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "opdlab/numfmt.hpp"
#include "opdlab/trainer.hpp"

namespace opdlab {

std::size_t TelemetryTable::column(const std::string& name) {
  const auto& cols = telemetry_columns();
  const auto it = std::find(cols.begin() + 2, cols.end(), name);
  if (it == cols.end()) throw ReportError("unknown telemetry column '" + name + "'");
  return static_cast<std::size_t>(it - cols.begin()) - 2;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string fixed4(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

std::string opt4(const std::optional<double>& x) { return x ? fixed4(*x) : "NA"; }

}  // namespace

TelemetryTable read_telemetry_csv(std::istream& in) {
  const auto& cols = telemetry_columns();
  std::string line;
  if (!std::getline(in, line)) throw ReportError("line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (split(line) != cols) throw ReportError("line 1: header does not match the telemetry schema");
  TelemetryTable t;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (cells.size() != cols.size())
      throw ReportError(where + "expected " + std::to_string(cols.size()) + " fields, got " + std::to_string(cells.size()));
    TelemetryTable::Row row;
    row.stage = cells[0];
    if (row.stage.empty()) throw ReportError(where + "empty stage");
    if (cells[1].empty() || !std::all_of(cells[1].begin(), cells[1].end(), [](char c) { return c >= '0' && c <= '9'; }))
      throw ReportError(where + "step is not a non-negative integer");
    row.step = std::stoull(cells[1]);
    for (std::size_t i = 2; i < cells.size(); ++i) {
      if (cells[i] == "NA") {
        row.values.emplace_back();
        continue;
      }
      try {
        row.values.emplace_back(parse_double(cells[i]));
      } catch (const std::invalid_argument&) {
        throw ReportError(where + "column " + cols[i] + " is not a number: '" + cells[i] + "'");
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

TelemetryTable read_telemetry_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReportError("cannot open '" + path + "'");
  return read_telemetry_csv(in);
}

std::string summarize(const TelemetryTable& table) {
  const std::size_t acc = TelemetryTable::column("eval_acc");
  std::ostringstream out;

  std::optional<double> final_acc;
  for (const auto& r : table.rows)
    if (r.values[acc]) final_acc = r.values[acc];
  out << "final accuracy: " << opt4(final_acc) << '\n';

  std::vector<std::string> stages;
  for (const auto& r : table.rows)
    if (std::find(stages.begin(), stages.end(), r.stage) == stages.end()) stages.push_back(r.stage);
  if (stages.empty()) out << "no rows\n";

  for (const auto& stage : stages) {
    std::vector<const TelemetryTable::Row*> rows, train;
    for (const auto& r : table.rows)
      if (r.stage == stage) {
        rows.push_back(&r);
        if (r.step > 0) train.push_back(&r);
      }
    out << "stage " << stage << '\n';
    out << "  training steps: " << train.size();
    if (train.empty()) out << " (initial evaluation only)";
    out << '\n';
    out << "  eval_acc:";
    bool any = false;
    for (const auto* r : rows)
      if (r->values[acc]) {
        out << ' ' << r->step << '=' << fixed4(*r->values[acc]);
        any = true;
      }
    if (!any) out << " NA";
    out << '\n';
    for (const char* name : {"mean_len", "rep_ratio", "overlap"}) {
      const std::size_t c = TelemetryTable::column(name);
      std::vector<double> xs;
      for (const auto* r : train)
        if (r->values[c]) xs.push_back(*r->values[c]);
      out << "  " << name << ": ";
      if (xs.empty()) {
        out << "NA\n";
        continue;
      }
      const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
      out << "first " << fixed4(xs.front()) << " last " << fixed4(xs.back()) << " min " << fixed4(*mn)
          << " max " << fixed4(*mx) << '\n';
    }
  }
  return out.str();
}

}  // namespace opdlab
