// SPDX-License-Identifier: Apache-2.0
#include "opdlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "opdlab/metrics.hpp"
#include "opdlab/numfmt.hpp"
#include "opdlab/rng.hpp"

namespace opdlab {

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::opd: return "opd";
    case TrainMode::opsd: return "opsd";
    case TrainMode::rlvr: return "rlvr";
    case TrainMode::sft: return "sft";
    case TrainMode::combined: return "combined";
  }
  return "?";
}

std::size_t TrainConfig::effective_overlap_k() const {
  const std::size_t v = family.symbols + TaskLayout::kReserved;
  return overlap_k == 0 ? metrics::default_overlap_k(v) : std::min(overlap_k, v);
}

// ---------------------------------------------------------------------------
// telemetry

const std::vector<std::string>& telemetry_columns() {
  static const std::vector<std::string> cols = {
      "stage",    "step",       "loss",         "reward",        "mean_len",
      "max_len",  "trunc_ratio", "skip_rate",   "grad_norm",     "rep_ratio",
      "overlap",  "rank_at_k",  "dlogprob",     "entropy",       "corr_dlogprob_entropy",
      "overlap_rep", "overlap_other", "rank_rep", "rank_other",  "eval_acc"};
  return cols;
}

void write_telemetry_csv(std::ostream& out, std::span<const TelemetryRow> rows) {
  const auto& cols = telemetry_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  auto cell = [&out](const std::optional<double>& v) {
    out << ',' << (v ? format_double(*v) : std::string("NA"));
  };
  for (const auto& row : rows) {
    const auto& t = row.t;
    out << row.stage << ',' << t.step;
    for (const auto* v : {&t.loss, &t.reward, &t.mean_len, &t.max_len, &t.trunc_ratio, &t.skip_rate,
                          &t.grad_norm, &t.rep_ratio, &t.overlap, &t.rank_at_k, &t.dlogprob,
                          &t.entropy, &t.corr_dlogprob_entropy, &t.overlap_rep, &t.overlap_other,
                          &t.rank_rep, &t.rank_other, &t.eval_acc})
      cell(*v);
    out << '\n';
  }
}

namespace {

// Stream tags for counter-based seeds.
enum : std::uint64_t {
  kBatchStream = 1,
  kRolloutStream = 2,
  kTraceStream = 3,
  kStageMain = 10,
  kStageSft = 11,
  kStageTeacherSft = 12,
  kStageTeacherRl = 13,
  kStageTraces = 14,
  kStageTeacherTraces = 15,
};

double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

void fill_lengths(StepTelemetry& t, std::span<const Trajectory> trajs) {
  if (trajs.empty()) return;
  double sum = 0.0;
  std::size_t mx = 0, trunc = 0;
  for (const auto& tr : trajs) {
    sum += static_cast<double>(tr.length());
    mx = std::max(mx, tr.length());
    trunc += tr.truncated ? 1 : 0;
  }
  t.mean_len = sum / static_cast<double>(trajs.size());
  t.max_len = static_cast<double>(mx);
  t.trunc_ratio = static_cast<double>(trunc) / static_cast<double>(trajs.size());
}

// Aggregates per-position diagnostics over a batch. Teacher-side columns stay
// undefined when no teacher was consulted.
void fill_metrics(StepTelemetry& t, std::span<const metrics::TokenDiagnostics> diags, bool with_teacher) {
  if (diags.empty()) return;
  std::size_t reps = 0;
  std::vector<double> ent, dlp;
  ent.reserve(diags.size());
  dlp.reserve(diags.size());
  double ov = 0.0, rk = 0.0;
  for (const auto& d : diags) {
    reps += static_cast<std::size_t>(d.repetitive);
    ent.push_back(d.entropy);
    dlp.push_back(d.dlogprob);
    ov += d.overlap;
    rk += d.rank;
  }
  const double n = static_cast<double>(diags.size());
  t.rep_ratio = static_cast<double>(reps) / n;
  t.entropy = mean_of(ent);
  if (!with_teacher) return;
  t.overlap = ov / n;
  t.rank_at_k = rk / n;
  t.dlogprob = mean_of(dlp);
  t.corr_dlogprob_entropy = metrics::pearson(dlp, ent);
  const auto o = metrics::conditional_averages(diags, metrics::Quantity::overlap);
  const auto r = metrics::conditional_averages(diags, metrics::Quantity::rank);
  t.overlap_rep = o.repetitive;
  t.overlap_other = o.other;
  t.rank_rep = r.repetitive;
  t.rank_other = r.other;
}

struct Rollouts {
  std::vector<const TaskInstance*> instances;  // one per trajectory
  std::vector<Trajectory> trajs;
  std::vector<double> rewards;
};

Rollouts roll_out(const Policy& policy, const TaskFamily& family, const TrainConfig& cfg,
                  std::size_t group, std::uint64_t seed) {
  if (cfg.batch_size == 0) throw ArgumentError("batch size must be positive");
  if (group == 0) throw ArgumentError("samples per prompt must be positive");
  Rollouts r;
  const auto batch = draw_batch(family, cfg.batch_size, stream_seed(seed, kBatchStream));
  std::vector<kernels::RolloutJob> jobs;
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t g = 0; g < group; ++g) {
      jobs.push_back({batch[i]->prompt_id, stream_seed(seed, kRolloutStream, i * group + g)});
      r.instances.push_back(batch[i]);
    }
  r.trajs = cfg.parallel ? kernels::rollout_batch_parallel(policy, jobs, cfg.max_length, cfg.temperature)
                         : kernels::rollout_batch_serial(policy, jobs, cfg.max_length, cfg.temperature);
  for (std::size_t k = 0; k < r.trajs.size(); ++k)
    r.rewards.push_back(reward(family.layout(), *r.instances[k], r.trajs[k].tokens));
  return r;
}

std::vector<kernels::DistillResult> distill_all(const Policy& student, const Teacher& teacher,
                                                const TaskFamily& family, const TrainConfig& cfg,
                                                const Rollouts& ro, const kernels::DistillSettings& s) {
  std::vector<PrivilegedInfo> pis;
  pis.reserve(ro.instances.size());
  for (const auto* inst : ro.instances) pis.push_back(family.privileged_info(*inst, cfg.teacher.pi_kind));
  return cfg.parallel ? kernels::distill_batch_parallel(student, teacher, ro.trajs, pis, s)
                      : kernels::distill_batch_serial(student, teacher, ro.trajs, pis, s);
}

StepTelemetry apply(TrainState& state, StepOutput out, double lr) {
  apply_update_in_place(state.policy, out.grads, state.optimizer, lr);
  return out.telemetry;
}

}  // namespace

// ---------------------------------------------------------------------------
// gradients

std::vector<double> group_advantages(std::span<const double> rewards, std::size_t group_size) {
  if (group_size == 0 || rewards.size() % group_size != 0)
    throw ArgumentError("group_advantages: reward count is not a multiple of the group size");
  std::vector<double> adv(rewards.size(), 0.0);
  if (group_size == 1) return adv;
  const double g = static_cast<double>(group_size);
  for (std::size_t start = 0; start < rewards.size(); start += group_size) {
    double sum = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) sum += rewards[start + i];
    for (std::size_t i = 0; i < group_size; ++i) {
      const double r = rewards[start + i];
      adv[start + i] = r - (sum - r) / (g - 1.0);
    }
  }
  return adv;
}

GradMap reinforce_grad(const Policy& policy, std::span<const Trajectory> trajs,
                       std::span<const std::vector<double>> advantages, double scale) {
  if (advantages.size() != trajs.size()) throw ArgumentError("reinforce_grad: one advantage row per trajectory");
  GradMap out;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& tr = trajs[i];
    if (advantages[i].size() != tr.length()) throw ArgumentError("reinforce_grad: advantage length mismatch");
    for (std::size_t t = 0; t < tr.length(); ++t) {
      const double a = advantages[i][t];
      if (a == 0.0) continue;
      const auto key = policy.context(tr.prompt, tr.prefix(t));
      accumulate(out, key, grad_logprob(policy, key, tr.tokens[t]), -scale * a);
    }
  }
  return out;
}

std::vector<const TaskInstance*> draw_batch(const TaskFamily& family, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<const TaskInstance*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(&sample_instance(family, rng));
  return out;
}

StepOutput distill_gradient(const Policy& student, const Teacher& teacher, const TaskFamily& family,
                            const TrainConfig& cfg, std::uint64_t seed) {
  if (student.vocab() != family.vocab()) throw ArgumentError("teacher and student vocabularies differ");
  const auto ro = roll_out(student, family, cfg, cfg.samples_per_prompt, seed);
  kernels::DistillSettings s{cfg.objective, cfg.include_minus_one, cfg.effective_overlap_k(), cfg.ngram};
  const auto results = distill_all(student, teacher, family, cfg, ro, s);

  StepOutput out;
  const double n = static_cast<double>(results.size());
  out.grads = kernels::merge_grads(results, 1.0 / n);

  std::vector<metrics::TokenDiagnostics> diags;
  std::size_t positions = 0, skipped = 0;
  std::vector<double> losses;
  for (const auto& r : results) {
    positions += r.positions;
    skipped += r.skipped;
    if (r.positions > r.skipped) losses.push_back(r.loss);
    diags.insert(diags.end(), r.diagnostics.begin(), r.diagnostics.end());
  }
  auto& t = out.telemetry;
  if (!losses.empty()) t.loss = mean_of(losses);
  t.reward = mean_of(ro.rewards);
  fill_lengths(t, ro.trajs);
  t.skip_rate = positions ? static_cast<double>(skipped) / static_cast<double>(positions) : 0.0;
  t.grad_norm = grad_norm(out.grads);
  fill_metrics(t, diags, true);
  return out;
}

StepOutput rlvr_gradient(const Policy& policy, const TaskFamily& family, const TrainConfig& cfg,
                         std::uint64_t seed) {
  if (cfg.samples_per_prompt < 2) throw ArgumentError("rlvr needs at least 2 samples per prompt");
  const auto ro = roll_out(policy, family, cfg, cfg.samples_per_prompt, seed);
  const auto adv = group_advantages(ro.rewards, cfg.samples_per_prompt);

  std::vector<std::vector<double>> token_adv(ro.trajs.size());
  std::vector<metrics::TokenDiagnostics> diags;
  double surrogate = 0.0;
  for (std::size_t i = 0; i < ro.trajs.size(); ++i) {
    const auto& tr = ro.trajs[i];
    token_adv[i].assign(tr.length(), adv[i]);
    const auto reps = metrics::repetition_flags(tr.tokens, cfg.ngram);
    for (std::size_t t = 0; t < tr.length(); ++t) {
      surrogate -= adv[i] * tr.student_logprobs[t];
      metrics::TokenDiagnostics d;
      d.repetitive = reps.flags[t];
      d.entropy = entropy(dist_at(policy, policy.context(tr.prompt, tr.prefix(t))));
      diags.push_back(d);
    }
  }
  const double scale = 1.0 / static_cast<double>(ro.trajs.size());
  StepOutput out;
  out.grads = reinforce_grad(policy, ro.trajs, token_adv, scale);
  auto& t = out.telemetry;
  t.loss = surrogate * scale;
  t.reward = mean_of(ro.rewards);
  fill_lengths(t, ro.trajs);
  t.skip_rate = 0.0;
  t.grad_norm = grad_norm(out.grads);
  fill_metrics(t, diags, false);
  return out;
}

StepOutput combined_gradient(const Policy& policy, const Teacher& teacher, const TaskFamily& family,
                             const TrainConfig& cfg, std::uint64_t seed) {
  if (!(cfg.lambda >= 0.0)) throw ArgumentError("lambda must be non-negative");
  const auto ro = roll_out(policy, family, cfg, cfg.samples_per_prompt, seed);
  const auto adv = group_advantages(ro.rewards, cfg.samples_per_prompt);

  objectives::ObjectiveSpec sampled;
  sampled.kind = objectives::ObjectiveKind::sampled_token;
  kernels::DistillSettings s{sampled, cfg.include_minus_one, cfg.effective_overlap_k(), cfg.ngram};
  const auto results = distill_all(policy, teacher, family, cfg, ro, s);

  std::vector<std::vector<double>> token_adv(ro.trajs.size());
  std::vector<metrics::TokenDiagnostics> diags;
  double surrogate = 0.0;
  for (std::size_t i = 0; i < ro.trajs.size(); ++i) {
    const auto& tr = ro.trajs[i];
    token_adv[i].resize(tr.length());
    for (std::size_t t = 0; t < tr.length(); ++t) {
      double opd = results[i].teacher_logprobs[t] - tr.student_logprobs[t];
      if (cfg.include_minus_one) opd -= 1.0;
      token_adv[i][t] = adv[i] + cfg.lambda * opd;
      surrogate -= token_adv[i][t] * tr.student_logprobs[t];
    }
    diags.insert(diags.end(), results[i].diagnostics.begin(), results[i].diagnostics.end());
  }
  const double scale = 1.0 / static_cast<double>(ro.trajs.size());
  StepOutput out;
  out.grads = reinforce_grad(policy, ro.trajs, token_adv, scale);
  auto& t = out.telemetry;
  t.loss = surrogate * scale;
  t.reward = mean_of(ro.rewards);
  fill_lengths(t, ro.trajs);
  t.skip_rate = 0.0;
  t.grad_norm = grad_norm(out.grads);
  fill_metrics(t, diags, true);
  return out;
}

StepOutput sft_gradient(const Policy& policy, std::span<const Trace> traces, std::size_t ngram) {
  if (traces.empty()) throw ArgumentError("sft: empty trace set");
  std::size_t tokens = 0;
  for (const auto& tr : traces) tokens += tr.tokens.size();
  if (tokens == 0) throw ArgumentError("sft: traces contain no tokens");
  const double inv = 1.0 / static_cast<double>(tokens);

  StepOutput out;
  double nll = 0.0;
  std::vector<metrics::TokenDiagnostics> diags;
  std::vector<Trajectory> as_trajs;
  for (const auto& tr : traces) {
    const auto reps = metrics::repetition_flags(tr.tokens, ngram);
    Trajectory traj;
    traj.prompt = tr.prompt;
    traj.tokens = tr.tokens;
    traj.truncated = tr.tokens.empty() || tr.tokens.back() != policy.vocab().eos();
    for (std::size_t t = 0; t < tr.tokens.size(); ++t) {
      const auto key = policy.context(tr.prompt, std::span<const TokenId>(tr.tokens.data(), t));
      const auto p = dist_at(policy, key);
      nll -= safe_log(p[static_cast<std::size_t>(tr.tokens[t])]);
      accumulate(out.grads, key, grad_logprob(policy, key, tr.tokens[t]), -inv);
      metrics::TokenDiagnostics d;
      d.repetitive = reps.flags[t];
      d.entropy = entropy(p);
      diags.push_back(d);
    }
    as_trajs.push_back(std::move(traj));
  }
  auto& t = out.telemetry;
  t.loss = nll * inv;
  fill_lengths(t, as_trajs);
  t.skip_rate = 0.0;
  t.grad_norm = grad_norm(out.grads);
  fill_metrics(t, diags, false);
  return out;
}

// ---------------------------------------------------------------------------
// steps

StepTelemetry opd_step(TrainState& state, const Teacher& teacher, const TaskFamily& family,
                       const TrainConfig& cfg, std::uint64_t seed) {
  return apply(state, distill_gradient(state.policy, teacher, family, cfg, seed), cfg.learning_rate);
}

StepTelemetry opsd_step(TrainState& state, const Teacher& teacher, const TaskFamily& family,
                        const TrainConfig& cfg, std::uint64_t seed) {
  if (cfg.teacher.pi_kind == PiKind::none)
    throw ArgumentError("opsd needs privileged information (teacher.pi_kind is none)");
  return opd_step(state, teacher, family, cfg, seed);
}

StepTelemetry rlvr_step(TrainState& state, const TaskFamily& family, const TrainConfig& cfg,
                        std::uint64_t seed) {
  return apply(state, rlvr_gradient(state.policy, family, cfg, seed), cfg.learning_rate);
}

StepTelemetry sft_step(TrainState& state, std::span<const Trace> traces, double learning_rate,
                       std::size_t ngram) {
  return apply(state, sft_gradient(state.policy, traces, ngram), learning_rate);
}

StepTelemetry combined_step(TrainState& state, const Teacher& teacher, const TaskFamily& family,
                            const TrainConfig& cfg, std::uint64_t seed) {
  return apply(state, combined_gradient(state.policy, teacher, family, cfg, seed), cfg.learning_rate);
}

// ---------------------------------------------------------------------------
// decoding and evaluation

std::vector<TokenId> teacher_rollout(const Teacher& teacher, const Policy* student, std::int64_t prompt,
                                     const PrivilegedInfo& pi, std::span<const TokenId> prefix,
                                     std::size_t max_length, double temperature, std::uint64_t seed) {
  std::vector<TokenId> out(prefix.begin(), prefix.end());
  Rng rng(seed);
  while (out.size() < max_length) {
    const auto p = teacher_dist(teacher, student, prompt, pi, out);
    const TokenId eos = static_cast<TokenId>(p.size() - 1);
    if (!out.empty() && out.back() == eos) break;
    TokenId next;
    if (temperature <= 0.0) {
      next = rank_order(p).front();
    } else {
      std::vector<double> lp(p.size());
      for (std::size_t v = 0; v < p.size(); ++v) lp[v] = safe_log(p[v]);
      const auto q = softmax(lp, temperature);
      next = static_cast<TokenId>(rng.categorical(q.probs()));
    }
    out.push_back(next);
    if (next == eos) break;
  }
  return out;
}

std::vector<Trace> collect_traces(const Teacher& teacher, const TaskFamily& family, PiKind pi_kind,
                                  std::size_t per_instance, std::size_t max_length, double temperature,
                                  std::uint64_t seed) {
  std::set<Trace> kept;
  for (const auto& inst : family.instances()) {
    const auto pi = family.privileged_info(inst, pi_kind);
    for (std::size_t k = 0; k < per_instance; ++k) {
      auto tokens = teacher_rollout(teacher, nullptr, inst.prompt_id, pi, {}, max_length, temperature,
                                    stream_seed(seed, kTraceStream + inst.instance_id, k));
      if (reward(family.layout(), inst, tokens) == 1) kept.insert(Trace{inst.prompt_id, std::move(tokens)});
    }
  }
  return {kept.begin(), kept.end()};
}

double greedy_accuracy(const Policy& policy, const TaskFamily& family, std::size_t max_length) {
  const auto& insts = family.instances();
  if (insts.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& inst : insts)
    hits += static_cast<std::size_t>(
        reward(family.layout(), inst, greedy_trajectory(policy, inst.prompt_id, max_length).tokens));
  return static_cast<double>(hits) / static_cast<double>(insts.size());
}

double greedy_accuracy(const Teacher& teacher, const TaskFamily& family, PiKind pi_kind,
                       std::size_t max_length) {
  const auto& insts = family.instances();
  if (insts.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& inst : insts) {
    const auto pi = family.privileged_info(inst, pi_kind);
    hits += static_cast<std::size_t>(reward(
        family.layout(), inst, teacher_rollout(teacher, nullptr, inst.prompt_id, pi, {}, max_length, 0.0, 0)));
  }
  return static_cast<double>(hits) / static_cast<double>(insts.size());
}

Distribution answer_distribution(const Policy& policy, const TaskFamily& family, std::int64_t prompt) {
  const TokenId ans = family.layout().answer_start();
  return dist_at(policy, policy.context(prompt, std::span<const TokenId>(&ans, 1)));
}

PrefixEvalReport prefix_conditioned_eval(const Teacher& teacher, const Policy& student,
                                         const TaskFamily& family, PiKind pi_kind,
                                         std::size_t max_length, TruncationRule rule,
                                         std::uint64_t seed, std::size_t fixed_point) {
  PrefixEvalReport rep;
  std::size_t standalone_hits = 0, prefix_hits = 0, student_hits = 0;
  for (const auto& inst : family.instances()) {
    const auto pi = family.privileged_info(inst, pi_kind);
    const auto alone = teacher_rollout(teacher, &student, inst.prompt_id, pi, {}, max_length, 0.0, 0);
    const bool ok_alone = reward(family.layout(), inst, alone) == 1;

    const auto stu = greedy_trajectory(student, inst.prompt_id, max_length);
    const std::size_t len = stu.length();
    std::size_t cut = len;
    if (rule == TruncationRule::uniform) cut = Rng(stream_seed(seed, inst.instance_id)).below(len + 1);
    else if (rule == TruncationRule::fixed) cut = std::min(fixed_point, len);
    const auto cont = teacher_rollout(teacher, &student, inst.prompt_id, pi, stu.prefix(cut), max_length, 0.0, 0);
    const bool ok_prefix = reward(family.layout(), inst, cont) == 1;

    standalone_hits += ok_alone;
    prefix_hits += ok_prefix;
    student_hits += reward(family.layout(), inst, stu.tokens) == 1;
    rep.correct_to_wrong += ok_alone && !ok_prefix;
    rep.wrong_to_correct += !ok_alone && ok_prefix;
    ++rep.instances;
  }
  if (rep.instances) {
    const double n = static_cast<double>(rep.instances);
    rep.standalone_accuracy = static_cast<double>(standalone_hits) / n;
    rep.prefix_accuracy = static_cast<double>(prefix_hits) / n;
    rep.student_accuracy = static_cast<double>(student_hits) / n;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// experiment driver

namespace {

bool is_eval_step(std::size_t step, std::size_t budget, std::size_t every) {
  return step == budget || (every > 0 && step % every == 0);
}

StepTelemetry eval_row(std::size_t step, double acc) {
  StepTelemetry t;
  t.step = step;
  t.eval_acc = acc;
  return t;
}

// Runs `steps` SFT steps on traces from the oracle teacher, which sees the full target.
void sft_stage(TrainState& state, const TaskFamily& family, const TrainConfig& cfg, std::size_t steps,
               double lr, std::uint64_t trace_seed, const std::string& stage, std::vector<TelemetryRow>& rows) {
  auto fam = std::make_shared<const TaskFamily>(family);
  const auto source = Teacher::oracle(fam, cfg.teacher.temperature);
  const auto traces = collect_traces(source, family, PiKind::instance_response, cfg.sft.traces_per_instance,
                                     cfg.max_length, cfg.sft.temperature, trace_seed);
  if (traces.empty()) throw ArgumentError("sft: the trace source produced no verified traces");
  rows.push_back({stage, eval_row(0, greedy_accuracy(state.policy, family, cfg.max_length))});
  for (std::size_t s = 1; s <= steps; ++s) {
    auto t = sft_step(state, traces, lr, cfg.ngram);
    t.step = s;
    if (is_eval_step(s, steps, cfg.eval_every)) t.eval_acc = greedy_accuracy(state.policy, family, cfg.max_length);
    rows.push_back({stage, t});
  }
}

Policy train_rlvr_teacher(const TaskFamily& family, const TrainConfig& cfg, std::vector<TelemetryRow>& rows) {
  TrainConfig tc = cfg;
  tc.samples_per_prompt = cfg.teacher.rlvr_samples_per_prompt;
  tc.learning_rate = cfg.teacher.rlvr_learning_rate;
  TrainState st{Policy(family.vocab(), cfg.context_order), OptimizerState(cfg.optimizer)};
  if (cfg.teacher.rlvr_warmup_sft_steps > 0)
    sft_stage(st, family, cfg, cfg.teacher.rlvr_warmup_sft_steps, cfg.sft.learning_rate,
              stream_seed(cfg.seed, kStageTeacherTraces), "teacher_sft", rows);
  st.optimizer = OptimizerState(cfg.optimizer);
  const std::size_t n = cfg.teacher.rlvr_steps;
  rows.push_back({"teacher_rlvr", eval_row(0, greedy_accuracy(st.policy, family, cfg.max_length))});
  for (std::size_t s = 1; s <= n; ++s) {
    auto t = rlvr_step(st, family, tc, stream_seed(cfg.seed, kStageTeacherRl, s));
    t.step = s;
    if (is_eval_step(s, n, cfg.eval_every)) t.eval_acc = greedy_accuracy(st.policy, family, cfg.max_length);
    rows.push_back({"teacher_rlvr", t});
  }
  return st.policy;
}

nlohmann::json answer_report(const Policy& student, const Teacher& teacher, const TaskFamily& family,
                             const TrainConfig& cfg) {
  nlohmann::json out = nlohmann::json::array();
  const TokenId ans = family.layout().answer_start();
  for (const auto prompt : family.prompt_ids()) {
    const auto p = answer_distribution(student, family, prompt);
    std::vector<Distribution> qs;
    for (const auto* inst : family.candidates(prompt, {})) {
      const auto pi = family.privileged_info(*inst, cfg.teacher.pi_kind);
      qs.push_back(teacher_dist(teacher, &student, prompt, pi, std::span<const TokenId>(&ans, 1)).floored());
    }
    const std::vector<double> w(qs.size(), 1.0 / static_cast<double>(qs.size()));
    const auto consensus = consensus_optimum(qs, w);
    nlohmann::json answers = nlohmann::json::object();
    for (TokenId a : family.rule()) answers[std::to_string(a)] = p[static_cast<std::size_t>(a)];
    out.push_back({{"prompt", prompt},
                   {"answer_probs", answers},
                   {"tv_to_consensus", total_variation(p, consensus)}});
  }
  return out;
}

}  // namespace

ExperimentResult run_training(const TrainConfig& cfg) {
  const auto family = std::make_shared<const TaskFamily>(cfg.family);
  std::vector<TelemetryRow> rows;
  std::optional<Policy> trained_teacher;
  TrainState state{Policy(family->vocab(), cfg.context_order), OptimizerState(cfg.optimizer)};

  const auto& tc = cfg.teacher;
  if (tc.construction == "rlvr") trained_teacher = train_rlvr_teacher(*family, cfg, rows);

  const std::size_t sft_steps = cfg.mode == TrainMode::sft ? cfg.steps : cfg.sft.steps;
  if (sft_steps > 0 || cfg.mode == TrainMode::sft) {
    const double lr = cfg.mode == TrainMode::sft ? cfg.learning_rate : cfg.sft.learning_rate;
    sft_stage(state, *family, cfg, sft_steps, lr, stream_seed(cfg.seed, kStageTraces), "sft", rows);
    state.optimizer = OptimizerState(cfg.optimizer);
  }
  const double initial_acc = greedy_accuracy(state.policy, *family, cfg.max_length);

  std::optional<Teacher> teacher;
  const bool needs_teacher =
      cfg.mode == TrainMode::opd || cfg.mode == TrainMode::opsd || cfg.mode == TrainMode::combined;
  if (needs_teacher) {
    if (tc.construction == "oracle") teacher = Teacher::oracle(family, tc.temperature);
    else if (tc.construction == "frozen") teacher = Teacher::frozen(state.policy);
    else if (tc.construction == "ema") teacher = Teacher::ema(state.policy, tc.ema_alpha);
    else if (tc.construction == "self") teacher = Teacher::self_ref();
    else if (tc.construction == "snapshot") teacher = load_teacher(tc.snapshot);
    else if (tc.construction == "rlvr") teacher = Teacher::frozen(*trained_teacher);
    else throw ArgumentError("unknown teacher construction '" + tc.construction + "'");
  }

  if (cfg.mode != TrainMode::sft) {
    const std::string stage(to_string(cfg.mode));
    rows.push_back({stage, eval_row(0, initial_acc)});
    for (std::size_t s = 1; s <= cfg.steps; ++s) {
      const std::uint64_t seed = stream_seed(cfg.seed, kStageMain, s);
      StepTelemetry t;
      switch (cfg.mode) {
        case TrainMode::opd: t = opd_step(state, *teacher, *family, cfg, seed); break;
        case TrainMode::opsd: t = opsd_step(state, *teacher, *family, cfg, seed); break;
        case TrainMode::rlvr: t = rlvr_step(state, *family, cfg, seed); break;
        case TrainMode::combined: t = combined_step(state, *teacher, *family, cfg, seed); break;
        case TrainMode::sft: break;
      }
      if (teacher && std::holds_alternative<EmaTeacher>(teacher->construction))
        teacher = ema_update(*teacher, state.policy);
      t.step = s;
      if (is_eval_step(s, cfg.steps, cfg.eval_every))
        t.eval_acc = greedy_accuracy(state.policy, *family, cfg.max_length);
      rows.push_back({stage, t});
    }
  }

  ExperimentResult res{std::move(rows), state.policy, trained_teacher, 0.0, {}};
  res.final_accuracy = greedy_accuracy(state.policy, *family, cfg.max_length);
  auto& rep = res.report;
  rep["name"] = cfg.name;
  rep["mode"] = std::string(to_string(cfg.mode));
  rep["seed"] = cfg.seed;
  rep["family"] = cfg.family.to_json();
  rep["initial_accuracy"] = initial_acc;
  rep["final_accuracy"] = res.final_accuracy;
  rep["instances"] = family->instances().size();
  if (trained_teacher) rep["teacher_accuracy"] = greedy_accuracy(*trained_teacher, *family, cfg.max_length);
  if (teacher && cfg.family.kind == FamilyKind::instance_answer)
    rep["answers"] = answer_report(state.policy, *teacher, *family, cfg);
  return res;
}

ExperimentResult run_experiment(const TrainConfig& cfg, const std::string& out_dir) {
  auto res = run_training(cfg);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  {
    std::ofstream csv(dir / "telemetry.csv", std::ios::binary);
    write_telemetry_csv(csv, res.rows);
    if (!csv) throw std::runtime_error("cannot write " + (dir / "telemetry.csv").string());
  }
  save_policy_file(res.policy, (dir / "policy.txt").string());
  if (res.trained_teacher) save_policy_file(*res.trained_teacher, (dir / "teacher.txt").string());
  std::ofstream rep(dir / "report.json", std::ios::binary);
  rep << res.report.dump(2) << '\n';
  if (!rep) throw std::runtime_error("cannot write " + (dir / "report.json").string());
  return res;
}

}  // namespace opdlab
