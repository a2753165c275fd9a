// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "opdlab/config.hpp"
#include "opdlab/trainer.hpp"

using namespace opdlab;
using nlohmann::json;

namespace {

json minimal() {
  return json::parse(R"({"task": {"kind": "shared-rule", "symbols": 6}})");
}

// key path of the ConfigError thrown for j, or "<none>"
std::string error_path(const json& j) {
  try {
    parse_train_config(j);
  } catch (const ConfigError& e) {
    return e.key_path;
  }
  return "<none>";
}

}  // namespace

TEST(Config, MinimalUsesDefaults) {
  const auto c = parse_train_config(minimal());
  EXPECT_EQ(c.mode, TrainMode::opd);
  EXPECT_EQ(c.family.symbols, 6u);
  EXPECT_EQ(c.context_order, 4u);
  EXPECT_EQ(c.steps, 100u);
  EXPECT_EQ(c.effective_overlap_k(), 6u + TaskLayout::kReserved);
}

TEST(Config, UnknownKeysAreRejectedWithPath) {
  auto j = minimal();
  j["tpyo"] = 1;
  EXPECT_EQ(error_path(j), "/tpyo");
  j = minimal();
  j["rollout"] = {{"max_response_lenght", 3}};
  EXPECT_EQ(error_path(j), "/rollout/max_response_lenght");
  j = minimal();
  j["task"]["colour"] = "red";
  EXPECT_EQ(error_path(j), "/task/colour");
}

TEST(Config, BadValuesReportTheirPath) {
  auto with = [](const char* section, const char* key, json v) {
    auto j = minimal();
    j[section][key] = std::move(v);
    return error_path(j);
  };
  EXPECT_EQ(with("policy", "context_order", 0), "/policy/context_order");
  EXPECT_EQ(with("rollout", "temperature", -1.0), "/rollout/temperature");
  EXPECT_EQ(with("rollout", "prompts_per_batch", "many"), "/rollout/prompts_per_batch");
  EXPECT_EQ(with("objective", "kind", "nonsense"), "/objective/kind");
  EXPECT_EQ(with("objective", "jsd_beta", 1.0), "/objective/jsd_beta");
  EXPECT_EQ(with("optimizer", "kind", "lion"), "/optimizer/kind");
  EXPECT_EQ(with("teacher", "construction", "wizard"), "/teacher/construction");
  EXPECT_EQ(with("teacher", "ema_alpha", 1.0), "/teacher/ema_alpha");
  EXPECT_EQ(with("teacher", "construction", "snapshot"), "/teacher/snapshot");
  EXPECT_EQ(with("training", "lambda", -0.5), "/training/lambda");
  EXPECT_EQ(with("task", "symbols", 1), "/task/symbols");
  EXPECT_EQ(with("task", "kind", "maze"), "/task/kind");
  EXPECT_EQ(with("metrics", "ngram", 0), "/metrics/ngram");

  auto j = minimal();
  j["mode"] = "dance";
  EXPECT_EQ(error_path(j), "/mode");
  j = minimal();
  j.erase("task");
  EXPECT_EQ(error_path(j), "/task");
  EXPECT_EQ(error_path(json::array()), "");  // root; printed as "/"
}

TEST(Config, CrossFieldChecks) {
  auto j = minimal();
  j["mode"] = "opsd";
  EXPECT_EQ(error_path(j), "/teacher/pi_kind");
  j = minimal();
  j["mode"] = "rlvr";
  EXPECT_EQ(error_path(j), "/rollout/samples_per_prompt");
  j = minimal();
  j["mode"] = "combined";
  j["rollout"] = {{"samples_per_prompt", 4}};
  EXPECT_EQ(error_path(j), "/objective/kind");
}

TEST(Config, MessageCarriesPath) {
  auto j = minimal();
  j["policy"] = {{"context_order", -2}};
  try {
    parse_train_config(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("config error at /policy/context_order: ", 0), 0u) << e.what();
  }
}

TEST(Config, EveryRecipeParses) {
  std::size_t n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(OPDLAB_RECIPES)) {
    if (entry.path().extension() != ".json") continue;
    SCOPED_TRACE(entry.path().string());
    const auto c = load_train_config(entry.path().string());
    EXPECT_EQ(c.name + ".json", entry.path().filename().string());
    EXPECT_GT(c.steps + c.sft.steps, 0u);
    ++n;
  }
  EXPECT_GE(n, 7u);
}

TEST(Config, FamilySpecRoundTrip) {
  for (const auto& entry : std::filesystem::directory_iterator(OPDLAB_RECIPES)) {
    if (entry.path().extension() != ".json") continue;
    const auto c = load_train_config(entry.path().string());
    const auto j = c.family.to_json();
    const auto back = parse_family_spec(j);
    EXPECT_EQ(back.to_json(), j) << entry.path();
  }
}

TEST(Config, MissingFile) {
  EXPECT_THROW(load_train_config("/nonexistent/opdlab.json"), ConfigError);
}
