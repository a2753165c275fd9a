// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace opdlab {

/// Configuration error carrying the JSON pointer of the offending key.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& path, const std::string& what)
      : std::runtime_error("config error at " + (path.empty() ? std::string("/") : path) + ": " + what),
        key_path(path) {}
  std::string key_path;
};

/// Read-only view over a JSON object that reports key paths in errors and
/// rejects keys nobody asked for (see finish()).
class ConfigNode {
 public:
  ConfigNode(const nlohmann::json& node, std::string path);

  const std::string& path() const { return path_; }
  bool has(const std::string& key) const;

  ConfigNode child(const std::string& key) const;
  std::optional<ConfigNode> optional_child(const std::string& key) const;

  double number(const std::string& key) const;
  double number(const std::string& key, double fallback) const;
  std::int64_t integer(const std::string& key) const;
  std::int64_t integer(const std::string& key, std::int64_t fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::string string(const std::string& key) const;
  std::string string(const std::string& key, const std::string& fallback) const;
  std::vector<std::int64_t> integer_list(const std::string& key) const;

  /// Fails on any key that was never read.
  void finish() const;

  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

 private:
  const nlohmann::json* lookup(const std::string& key) const;

  const nlohmann::json& node_;
  std::string path_;
  mutable std::vector<std::string> seen_;
};

nlohmann::json read_json_file(const std::string& path);

}  // namespace opdlab
