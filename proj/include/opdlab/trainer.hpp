// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "opdlab/kernels.hpp"
#include "opdlab/objectives.hpp"
#include "opdlab/policy.hpp"
#include "opdlab/tasks.hpp"
#include "opdlab/teacher.hpp"

namespace opdlab {

enum class TrainMode { opd, opsd, rlvr, sft, combined };
std::string_view to_string(TrainMode mode);

struct TeacherConfig {
  // oracle | frozen | ema | self | snapshot | rlvr
  std::string construction = "oracle";
  double temperature = 0.2;  // oracle only
  double ema_alpha = 0.9;
  std::string snapshot;      // construction == snapshot
  PiKind pi_kind = PiKind::none;
  // construction == rlvr: the teacher is trained in-run before the student stage
  std::size_t rlvr_warmup_sft_steps = 0;
  std::size_t rlvr_steps = 0;
  double rlvr_learning_rate = 0.05;
  std::size_t rlvr_samples_per_prompt = 8;
};

struct SftConfig {
  std::size_t steps = 0;
  double learning_rate = 0.05;
  std::size_t traces_per_instance = 4;
  double temperature = 1.0;  // sampling temperature of the trace source
};

struct TrainConfig {
  std::string name = "run";
  TrainMode mode = TrainMode::opd;
  std::uint64_t seed = 1;
  FamilySpec family;
  std::size_t context_order = 4;
  objectives::ObjectiveSpec objective;
  bool include_minus_one = false;
  OptimizerConfig optimizer;
  double learning_rate = 0.05;
  std::size_t batch_size = 16;          // prompts per step
  std::size_t samples_per_prompt = 1;
  std::size_t max_length = 12;
  double temperature = 1.0;
  TeacherConfig teacher;
  double lambda = 0.0;
  std::size_t steps = 100;
  std::size_t eval_every = 50;
  std::size_t overlap_k = 0;  // 0: min(50, vocab)
  std::size_t ngram = 3;
  SftConfig sft;              // warm-up stage when steps > 0; the whole run in sft mode
  bool parallel = true;

  std::size_t effective_overlap_k() const;
};

/// Throws ConfigError with the offending key path.
TrainConfig parse_train_config(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);

/// Every telemetry column except `stage` and `step` may be undefined ("NA").
struct StepTelemetry {
  std::size_t step = 0;
  std::optional<double> loss, reward, mean_len, max_len, trunc_ratio, skip_rate, grad_norm;
  std::optional<double> rep_ratio, overlap, rank_at_k, dlogprob, entropy, corr_dlogprob_entropy;
  std::optional<double> overlap_rep, overlap_other, rank_rep, rank_other;
  std::optional<double> eval_acc;
};

struct TelemetryRow {
  std::string stage;
  StepTelemetry t;
};

const std::vector<std::string>& telemetry_columns();
void write_telemetry_csv(std::ostream& out, std::span<const TelemetryRow> rows);

struct TrainState {
  Policy policy;
  OptimizerState optimizer;
};

/// Gradient of one step plus its telemetry, before any update is applied.
struct StepOutput {
  GradMap grads;
  StepTelemetry telemetry;
};

/// Verified, deduplicated (prompt, response) pair.
struct Trace {
  std::int64_t prompt = 0;
  std::vector<TokenId> tokens;

  friend auto operator<=>(const Trace&, const Trace&) = default;
  friend bool operator==(const Trace&, const Trace&) = default;
};

/// Leave-one-out group baseline: a_i = r_i - mean_{j != i} r_j, which is
/// (r_i - mean r) * G / (G - 1). Singleton groups get 0.
std::vector<double> group_advantages(std::span<const double> rewards, std::size_t group_size);

/// Descent gradient -scale * sum_i sum_t adv[i][t] * d log p(y_t) / dz.
GradMap reinforce_grad(const Policy& policy, std::span<const Trajectory> trajs,
                       std::span<const std::vector<double>> advantages, double scale);

/// Instances drawn uniformly for one step, deterministic in `seed`.
std::vector<const TaskInstance*> draw_batch(const TaskFamily& family, std::size_t n, std::uint64_t seed);

StepOutput distill_gradient(const Policy& student, const Teacher& teacher, const TaskFamily& family,
                            const TrainConfig& cfg, std::uint64_t seed);
StepOutput rlvr_gradient(const Policy& policy, const TaskFamily& family, const TrainConfig& cfg,
                         std::uint64_t seed);
StepOutput combined_gradient(const Policy& policy, const Teacher& teacher, const TaskFamily& family,
                             const TrainConfig& cfg, std::uint64_t seed);
/// Mean per-token negative log-likelihood gradient. Throws ArgumentError on an empty set.
StepOutput sft_gradient(const Policy& policy, std::span<const Trace> traces, std::size_t ngram = 3);

StepTelemetry opd_step(TrainState& state, const Teacher& teacher, const TaskFamily& family,
                       const TrainConfig& cfg, std::uint64_t seed);
/// opd_step with the teacher reading privileged information; cfg.teacher.pi_kind must not be none.
StepTelemetry opsd_step(TrainState& state, const Teacher& teacher, const TaskFamily& family,
                        const TrainConfig& cfg, std::uint64_t seed);
/// Needs samples_per_prompt >= 2.
StepTelemetry rlvr_step(TrainState& state, const TaskFamily& family, const TrainConfig& cfg,
                        std::uint64_t seed);
StepTelemetry sft_step(TrainState& state, std::span<const Trace> traces, double learning_rate,
                       std::size_t ngram = 3);
StepTelemetry combined_step(TrainState& state, const Teacher& teacher, const TaskFamily& family,
                            const TrainConfig& cfg, std::uint64_t seed);

/// Draws from the teacher at `temperature` (0 = greedy) until eos or max_length.
std::vector<TokenId> teacher_rollout(const Teacher& teacher, const Policy* student, std::int64_t prompt,
                                     const PrivilegedInfo& pi, std::span<const TokenId> prefix,
                                     std::size_t max_length, double temperature, std::uint64_t seed);

/// Trace-then-filter: sample from the teacher, keep reward-1 responses, deduplicate.
std::vector<Trace> collect_traces(const Teacher& teacher, const TaskFamily& family, PiKind pi_kind,
                                  std::size_t per_instance, std::size_t max_length, double temperature,
                                  std::uint64_t seed);

/// Greedy exact-match accuracy over every instance of the family, without PI.
double greedy_accuracy(const Policy& policy, const TaskFamily& family, std::size_t max_length);
double greedy_accuracy(const Teacher& teacher, const TaskFamily& family, PiKind pi_kind,
                       std::size_t max_length);

/// The policy's distribution right after the answer-start marker.
Distribution answer_distribution(const Policy& policy, const TaskFamily& family, std::int64_t prompt);

enum class TruncationRule { uniform, fixed, full };

struct PrefixEvalReport {
  std::size_t instances = 0;
  double standalone_accuracy = 0.0;
  double prefix_accuracy = 0.0;
  double student_accuracy = 0.0;
  std::size_t correct_to_wrong = 0;
  std::size_t wrong_to_correct = 0;
};

/// Standalone: teacher decodes greedily from the prompt. Prefix-conditioned: the
/// student decodes greedily, the response is cut at a point chosen by `rule`
/// (uniform over 0..len, `fixed_point` clamped to len, or len), and the teacher
/// continues greedily. Every instance of the family is evaluated.
PrefixEvalReport prefix_conditioned_eval(const Teacher& teacher, const Policy& student,
                                         const TaskFamily& family, PiKind pi_kind,
                                         std::size_t max_length, TruncationRule rule,
                                         std::uint64_t seed, std::size_t fixed_point = 0);

struct ExperimentResult {
  std::vector<TelemetryRow> rows;
  Policy policy;
  std::optional<Policy> trained_teacher;
  double final_accuracy = 0.0;
  nlohmann::json report;
};

/// Pure function of the config: same config, same result.
ExperimentResult run_training(const TrainConfig& cfg);

/// run_training plus files in out_dir: telemetry.csv, policy.txt, report.json
/// (and teacher.txt when the teacher was trained in-run).
ExperimentResult run_experiment(const TrainConfig& cfg, const std::string& out_dir);

}  // namespace opdlab
