// SPDX-License-Identifier: Apache-2.0
#include "opdlab/config.hpp"

#include <algorithm>
#include <fstream>

namespace opdlab {

ConfigNode::ConfigNode(const nlohmann::json& node, std::string path)
    : node_(node), path_(std::move(path)) {
  if (!node_.is_object()) throw ConfigError(path_, "expected an object");
}

bool ConfigNode::has(const std::string& key) const { return node_.contains(key); }

const nlohmann::json* ConfigNode::lookup(const std::string& key) const {
  seen_.push_back(key);
  auto it = node_.find(key);
  return it == node_.end() ? nullptr : &*it;
}

void ConfigNode::fail(const std::string& key, const std::string& what) const {
  throw ConfigError(path_ + "/" + key, what);
}

ConfigNode ConfigNode::child(const std::string& key) const {
  const auto* j = lookup(key);
  if (!j) fail(key, "missing required section");
  if (!j->is_object()) fail(key, "expected an object");
  return ConfigNode(*j, path_ + "/" + key);
}

std::optional<ConfigNode> ConfigNode::optional_child(const std::string& key) const {
  const auto* j = lookup(key);
  if (!j) return std::nullopt;
  if (!j->is_object()) fail(key, "expected an object");
  return ConfigNode(*j, path_ + "/" + key);
}

double ConfigNode::number(const std::string& key) const {
  const auto* j = lookup(key);
  if (!j) fail(key, "missing required number");
  if (!j->is_number()) fail(key, "expected a number");
  return j->get<double>();
}

double ConfigNode::number(const std::string& key, double fallback) const {
  return has(key) ? number(key) : (seen_.push_back(key), fallback);
}

std::int64_t ConfigNode::integer(const std::string& key) const {
  const auto* j = lookup(key);
  if (!j) fail(key, "missing required integer");
  if (!j->is_number_integer()) fail(key, "expected an integer");
  return j->get<std::int64_t>();
}

std::int64_t ConfigNode::integer(const std::string& key, std::int64_t fallback) const {
  return has(key) ? integer(key) : (seen_.push_back(key), fallback);
}

bool ConfigNode::boolean(const std::string& key, bool fallback) const {
  const auto* j = lookup(key);
  if (!j) return fallback;
  if (!j->is_boolean()) fail(key, "expected true or false");
  return j->get<bool>();
}

std::string ConfigNode::string(const std::string& key) const {
  const auto* j = lookup(key);
  if (!j) fail(key, "missing required string");
  if (!j->is_string()) fail(key, "expected a string");
  return j->get<std::string>();
}

std::string ConfigNode::string(const std::string& key, const std::string& fallback) const {
  return has(key) ? string(key) : (seen_.push_back(key), fallback);
}

std::vector<std::int64_t> ConfigNode::integer_list(const std::string& key) const {
  const auto* j = lookup(key);
  if (!j) fail(key, "missing required list");
  if (!j->is_array()) fail(key, "expected a list of integers");
  std::vector<std::int64_t> out;
  for (const auto& e : *j) {
    if (!e.is_number_integer()) fail(key, "expected a list of integers");
    out.push_back(e.get<std::int64_t>());
  }
  return out;
}

void ConfigNode::finish() const {
  for (auto it = node_.begin(); it != node_.end(); ++it) {
    if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
      throw ConfigError(path_ + "/" + it.key(), "unknown key");
  }
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", "'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace opdlab
