// SPDX-License-Identifier: Apache-2.0
// opdlab: experiment runner, oracle suite, teacher scoring server/client, telemetry report.

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "opdlab/config.hpp"
#include "opdlab/protocol.hpp"
#include "opdlab/report.hpp"
#include "opdlab/suite.hpp"
#include "opdlab/teacher.hpp"
#include "opdlab/trainer.hpp"
#include "opdlab/transport.hpp"

namespace {

using namespace opdlab;
using nlohmann::json;

// Usage and input errors exit with 2, everything else with 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
  if (!std::filesystem::is_regular_file(path)) throw UsageError(std::string(what) + " '" + path + "' does not exist");
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, std::string out_dir) {
  require_file(config, "config file");
  auto cfg = load_train_config(config);
  if (seed) cfg.seed = *seed;
  if (out_dir.empty()) out_dir = "runs/" + cfg.name;
  const auto res = run_experiment(cfg, out_dir);
  std::cout << "ok name=" << cfg.name << " seed=" << cfg.seed << " out_dir=" << out_dir
            << " final_accuracy=" << res.final_accuracy << '\n';
  return 0;
}

int cmd_grad_check(const std::string& objective, std::size_t instances, std::uint64_t seed) {
  std::vector<objectives::ObjectiveKind> kinds;
  if (objective == "all") {
    kinds = objectives::vocabulary_objectives();
  } else {
    try {
      kinds.push_back(objectives::parse_objective_kind(objective));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  json out = json::array();
  bool pass = true;
  for (auto k : kinds) {
    if (k == objectives::ObjectiveKind::sampled_token) {
      const auto s = suite::check_sampled_estimators(instances, seed);
      out.push_back({{"objective", "sampled_token"},
                     {"instances", s.instances},
                     {"max_rel_error", s.max_grad_rel_error},
                     {"max_k1_error", s.max_k1_error},
                     {"max_k3_error", s.max_k3_error},
                     {"pass", s.pass}});
      pass = pass && s.pass;
      continue;
    }
    const auto s = suite::check_objective_gradients(k, instances, seed);
    out.push_back(suite::to_json(s));
    pass = pass && s.pass;
  }
  std::cout << json{{"results", out}, {"pass", pass}}.dump(2) << '\n';
  return pass ? 0 : 1;
}

int cmd_oracle_suite(std::uint64_t seed, const std::string& out_path) {
  const auto report = suite::run_oracle_suite(seed);
  const std::string text = report.dump(2);
  std::cout << text << '\n';
  if (!out_path.empty()) {
    std::ofstream f(out_path, std::ios::binary);
    f << text << '\n';
    if (!f) throw std::runtime_error("cannot write '" + out_path + "'");
  }
  return report["pass"].get<bool>() ? 0 : 1;
}

int cmd_serve(const std::string& snapshot, const std::string& transport, const std::string& endpoint,
              std::size_t cap) {
  require_file(snapshot, "teacher snapshot");
  protocol::TeacherService service(load_teacher(snapshot), cap);
  if (transport == "pipe") {
    protocol::serve_stream(service, STDIN_FILENO, STDOUT_FILENO);
    return 0;
  }
  if (endpoint.empty()) throw UsageError("--endpoint host:port is required for the socket transport");
  protocol::SocketServerOptions opts;
  opts.on_listening = [](std::uint16_t port) { std::cerr << "listening on port " << port << std::endl; };
  protocol::serve_socket(service, protocol::parse_endpoint(endpoint), opts);
  return 0;
}

std::vector<TokenId> token_list(const json& j, const char* key) {
  std::vector<TokenId> out;
  if (!j.contains(key)) return out;
  if (!j[key].is_array()) throw ConfigError(std::string("/") + key, "expected a list of token ids");
  for (const auto& v : j[key]) {
    if (!v.is_number_integer()) throw ConfigError(std::string("/") + key, "expected a list of token ids");
    out.push_back(v.get<TokenId>());
  }
  return out;
}

int cmd_query(const std::string& endpoint, const std::string& transport, const std::string& request_path) {
  require_file(request_path, "request file");
  if (endpoint.empty()) throw UsageError("--endpoint is required");
  const json j = read_json_file(request_path);
  protocol::ScoreRequest req;
  req.request_id = j.value("request_id", std::uint64_t{0});
  req.prompt_id = j.value("prompt_id", std::int64_t{0});
  try {
    req.pi_kind = parse_pi_kind(j.value("pi_kind", std::string("none")));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("/pi_kind", e.what());
  }
  req.pi_tokens = token_list(j, "pi_tokens");
  req.response_tokens = token_list(j, "response_tokens");

  std::vector<std::vector<TokenId>> per_position;
  json out;
  if (j.contains("topk_per_position")) {
    if (!j["topk_per_position"].is_array()) throw ConfigError("/topk_per_position", "expected a list of lists");
    for (const auto& row : j["topk_per_position"]) per_position.push_back(row.get<std::vector<TokenId>>());
    const auto u = protocol::build_union(per_position);
    req.token_ids_logprob = u.tokens;
    out["union"] = u.tokens;
    out["amplification"] = u.amplification;
  } else {
    req.token_ids_logprob = token_list(j, "token_ids_logprob");
  }

  auto client = transport == "pipe" ? protocol::Client::spawn(endpoint)
                                    : protocol::Client::connect(protocol::parse_endpoint(endpoint));
  const auto msg = client.query(req);
  if (const auto* e = std::get_if<protocol::ErrorResponse>(&msg)) {
    std::cout << json{{"request_id", e->request_id}, {"error", e->reason}}.dump() << '\n';
    return 1;
  }
  const auto& resp = std::get<protocol::ScoreResponse>(msg);
  out["request_id"] = resp.request_id;
  out["sampled_logprobs"] = resp.sampled_logprobs;
  if (!per_position.empty()) {
    const auto maps = protocol::extract_position_maps(req, resp, per_position);
    json positions = json::array();
    for (const auto& m : maps) {
      json row = json::object();
      for (const auto& [tok, lp] : m) row[std::to_string(tok)] = lp;
      positions.push_back(row);
    }
    out["positions"] = positions;
  } else {
    json rows = json::array();
    for (std::size_t t = 0; t < resp.rows; ++t) {
      json row = json::array();
      for (std::size_t c = 0; c < resp.cols; ++c) row.push_back(resp.at(t, c));
      rows.push_back(row);
    }
    out["logprobs"] = rows;
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_report(const std::string& path) {
  require_file(path, "telemetry file");
  std::cout << summarize(read_telemetry_file(path));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"opdlab: on-policy distillation desk lab"};
  app.require_subcommand(1, 1);

  std::string config, out_dir, objective = "all", snapshot, endpoint, transport = "socket", request, telemetry,
                               suite_out;
  std::optional<std::uint64_t> seed;
  std::uint64_t check_seed = 1;
  std::size_t instances = 100, cap = 0;

  auto* run = app.add_subcommand("run", "train according to a config file");
  run->add_option("--config", config, "experiment config (JSON)")->required();
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--out-dir", out_dir, "output directory (default runs/<name>)");

  auto* grad = app.add_subcommand("grad-check", "finite-difference check of objective gradients");
  grad->add_option("--objective", objective, "objective name or 'all'");
  grad->add_option("--instances", instances, "random instances per objective");
  grad->add_option("--seed", check_seed, "seed");

  auto* oracle = app.add_subcommand("oracle-suite", "run every oracle check, JSON report");
  oracle->add_option("--seed", check_seed, "seed");
  oracle->add_option("--out", suite_out, "also write the report here");

  auto* serve = app.add_subcommand("serve-teacher", "score requests against a teacher snapshot");
  serve->add_option("--snapshot", snapshot, "teacher snapshot file")->required();
  serve->add_option("--endpoint", endpoint, "host:port (socket transport)");
  serve->add_option("--transport", transport, "socket or pipe")->check(CLI::IsMember({"socket", "pipe"}));
  serve->add_option("--union-cap", cap, "largest accepted union (default: vocab size)");

  auto* query = app.add_subcommand("query-teacher", "send one request file to a teacher server");
  query->add_option("--endpoint", endpoint, "host:port, or the server command for the pipe transport")->required();
  query->add_option("--transport", transport, "socket or pipe")->check(CLI::IsMember({"socket", "pipe"}));
  query->add_option("--request", request, "request file (JSON)")->required();

  auto* report = app.add_subcommand("report", "summarize a telemetry CSV");
  report->add_option("telemetry,--telemetry", telemetry, "telemetry CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "opdlab: error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*run) return cmd_run(config, seed, out_dir);
    if (*grad) return cmd_grad_check(objective, instances, check_seed);
    if (*oracle) return cmd_oracle_suite(check_seed, suite_out);
    if (*serve) return cmd_serve(snapshot, transport, endpoint, cap);
    if (*query) return cmd_query(endpoint, transport, request);
    if (*report) return cmd_report(telemetry);
  } catch (const UsageError& e) {
    std::cerr << "opdlab: error: usage: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "opdlab: error: config: " << e.what() << '\n';
    return 2;
  } catch (const ReportError& e) {
    std::cerr << "opdlab: error: telemetry: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "opdlab: error: runtime: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
