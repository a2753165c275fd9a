// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string output;  // stdout and stderr together
};

Outcome opdlab(const std::string& args) {
  const std::string cmd = std::string(OPDLAB_CLI) + " " + args + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  Outcome o;
  if (!p) return o;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) o.output.append(buf, n);
  const int status = ::pclose(p);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

std::string recipe(const std::string& name) { return std::string(OPDLAB_RECIPES) + "/" + name + ".json"; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("opdlab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, MissingConfigIsAUsageErrorNamingThePath) {
  const auto o = opdlab("run --config /no/such/recipe.json");
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.output.find("/no/such/recipe.json"), std::string::npos) << o.output;
  EXPECT_NE(o.output.find("opdlab: error: usage"), std::string::npos) << o.output;
}

TEST_F(Cli, BadConfigNamesTheKey) {
  std::ofstream(dir_ / "bad.json") << R"({"task": {"kind": "shared-rule"}, "rollout": {"temperature": 0}})";
  const auto o = opdlab("run --config " + (dir_ / "bad.json").string() + " --out-dir " + (dir_ / "out").string());
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.output.find("/rollout/temperature"), std::string::npos) << o.output;
}

TEST_F(Cli, NoSubcommandOrUnknownFlag) {
  EXPECT_EQ(opdlab("").code, 2);
  EXPECT_EQ(opdlab("run --config x.json --bogus").code, 2);
  EXPECT_EQ(opdlab("--help").code, 0);
}

TEST_F(Cli, SmokeRunWritesArtifactsAndSeedOverrideIsDeterministic) {
  const auto a = dir_ / "a", b = dir_ / "b", c = dir_ / "c";
  const auto ra = opdlab("run --config " + recipe("opsd-shared-rule") + " --seed 11 --out-dir " + a.string());
  ASSERT_EQ(ra.code, 0) << ra.output;
  EXPECT_NE(ra.output.find("ok name=opsd-shared-rule seed=11"), std::string::npos) << ra.output;
  for (const char* f : {"telemetry.csv", "policy.txt", "report.json"}) EXPECT_TRUE(fs::exists(a / f)) << f;

  ASSERT_EQ(opdlab("run --config " + recipe("opsd-shared-rule") + " --seed 11 --out-dir " + b.string()).code, 0);
  ASSERT_EQ(opdlab("run --config " + recipe("opsd-shared-rule") + " --seed 12 --out-dir " + c.string()).code, 0);
  EXPECT_EQ(slurp(a / "telemetry.csv"), slurp(b / "telemetry.csv"));
  EXPECT_EQ(slurp(a / "policy.txt"), slurp(b / "policy.txt"));
  EXPECT_NE(slurp(a / "telemetry.csv"), slurp(c / "telemetry.csv"));

  const auto rep = opdlab("report " + (a / "telemetry.csv").string());
  EXPECT_EQ(rep.code, 0);
  EXPECT_EQ(rep.output.rfind("final accuracy: ", 0), 0u) << rep.output;
  EXPECT_NE(rep.output.find("stage opsd"), std::string::npos);

  const auto j = nlohmann::json::parse(slurp(a / "report.json"));
  EXPECT_EQ(j.at("seed").get<std::uint64_t>(), 11u);
}

TEST_F(Cli, ReportExitCodes) {
  const std::string fx = std::string(OPDLAB_FIXTURES) + "/report/";
  const auto ok = opdlab("report --telemetry " + fx + "run_a.csv");
  EXPECT_EQ(ok.code, 0);
  EXPECT_EQ(ok.output, slurp(fx + "run_a.summary.txt"));
  const auto bad = opdlab("report " + fx + "bad_fields.csv");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.output.find("opdlab: error: telemetry: line 3"), std::string::npos) << bad.output;
  const auto missing = opdlab("report " + fx + "absent.csv");
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.output.find("absent.csv"), std::string::npos) << missing.output;
}

TEST_F(Cli, GradCheck) {
  const auto o = opdlab("grad-check --objective reverse_kl_topk_renorm --instances 20 --seed 3");
  ASSERT_EQ(o.code, 0) << o.output;
  const auto j = nlohmann::json::parse(o.output);
  EXPECT_TRUE(j.at("pass").get<bool>());
  ASSERT_EQ(j.at("results").size(), 1u);
  EXPECT_EQ(j["results"][0].at("objective"), "reverse_kl_topk_renorm");
  EXPECT_LT(j["results"][0].at("max_rel_error").get<double>(), 1e-6);
  const auto bad = opdlab("grad-check --objective telepathy");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.output.find("telepathy"), std::string::npos) << bad.output;
}

TEST_F(Cli, OracleSuite) {
  const auto out = dir_ / "suite.json";
  const auto o = opdlab("oracle-suite --seed 1 --out " + out.string());
  ASSERT_EQ(o.code, 0) << o.output;
  const auto j = nlohmann::json::parse(slurp(out));
  EXPECT_TRUE(j.at("pass").get<bool>());
}

TEST_F(Cli, QueryTeacherOverPipe) {
  const std::string snap = std::string(OPDLAB_FIXTURES) + "/protocol/teacher.txt";
  std::ofstream(dir_ / "req.json")
      << R"({"request_id": 4, "prompt_id": 2, "response_tokens": [4, 1], "topk_per_position": [[0, 4], [1, 5]]})";
  const auto o = opdlab("query-teacher --transport pipe --endpoint '" + std::string(OPDLAB_CLI) +
                        " serve-teacher --transport pipe --snapshot " + snap + "' --request " +
                        (dir_ / "req.json").string());
  ASSERT_EQ(o.code, 0) << o.output;
  const auto j = nlohmann::json::parse(o.output);
  EXPECT_EQ(j.at("request_id"), 4);
  EXPECT_EQ(j.at("union"), nlohmann::json({0, 1, 4, 5}));
  EXPECT_DOUBLE_EQ(j.at("amplification").get<double>(), 2.0);
}
