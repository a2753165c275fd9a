// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace opdlab {

struct ReportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parsed telemetry CSV. Values are nullopt where the file says NA.
struct TelemetryTable {
  struct Row {
    std::string stage;
    std::size_t step = 0;
    std::vector<std::optional<double>> values;  // columns after stage and step
  };
  std::vector<Row> rows;

  /// Index into Row::values; throws ReportError for unknown names.
  static std::size_t column(const std::string& name);
};

/// Throws ReportError with the line number on any malformed input.
TelemetryTable read_telemetry_csv(std::istream& in);
TelemetryTable read_telemetry_file(const std::string& path);

/// Plain-text summary: final accuracy, then per stage the eval curve and the
/// first/last/min/max of mean_len, rep_ratio and overlap over training steps.
std::string summarize(const TelemetryTable& table);

}  // namespace opdlab
