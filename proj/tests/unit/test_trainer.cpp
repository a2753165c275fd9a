// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "opdlab/oracle.hpp"
#include "opdlab/trainer.hpp"

using namespace opdlab;
using objectives::ObjectiveKind;
using objectives::SupportMode;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.seed = 5;
  c.family.kind = FamilyKind::shared_rule;
  c.family.symbols = 6;
  c.family.num_prompts = 6;
  c.family.min_input_length = 1;
  c.family.max_input_length = 2;
  c.context_order = 3;
  c.objective = {ObjectiveKind::reverse_kl_topk_stopgrad, {SupportMode::student, 5}, 0.5};
  c.learning_rate = 0.3;
  c.batch_size = 6;
  c.samples_per_prompt = 2;
  c.max_length = 5;
  c.steps = 10;
  c.eval_every = 5;
  c.overlap_k = 3;
  return c;
}

Policy random_policy(const TaskFamily& fam, std::size_t order, std::uint64_t seed) {
  Policy p(fam.vocab(), order);
  Rng rng(seed);
  for (auto prompt : fam.prompt_ids())
    for (TokenId a = -1; a < static_cast<TokenId>(fam.vocab().size()); ++a) {
      std::vector<TokenId> pre;
      if (a >= 0) pre.push_back(a);
      std::vector<double> z(fam.vocab().size());
      for (auto& x : z) x = 2.0 * rng.uniform01() - 1.0;
      p.set_logits(p.context(prompt, pre), Logits(z));
    }
  return p;
}

double norm(const GradMap& g) {
  double s = 0.0;
  for (const auto& [k, v] : g)
    for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool same(const GradMap& a, const GradMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end() || it->second != v) return false;
  }
  return true;
}

std::string csv_of(const ExperimentResult& r) {
  std::ostringstream s;
  write_telemetry_csv(s, r.rows);
  return s.str();
}

}  // namespace

TEST(Distill, FrozenCopyTeacherGivesZeroGradient) {
  auto cfg = small_config();
  const TaskFamily fam(cfg.family);
  const auto student = random_policy(fam, cfg.context_order, 1);
  for (auto kind : {ObjectiveKind::reverse_kl_full, ObjectiveKind::reverse_kl_topk_stopgrad,
                    ObjectiveKind::reverse_kl_topk_renorm, ObjectiveKind::reverse_kl_topk_tail,
                    ObjectiveKind::sampled_token}) {
    cfg.objective.kind = kind;
    const auto out = distill_gradient(student, Teacher::frozen(student), fam, cfg, 3);
    EXPECT_EQ(norm(out.grads), 0.0) << to_string(kind);
    TrainState st{student, OptimizerState(cfg.optimizer)};
    opd_step(st, Teacher::frozen(student), fam, cfg, 3);
    for (const auto& [key, z] : student.table()) EXPECT_TRUE(std::ranges::equal(st.policy.logits_at(key).values(), z.values()));
  }
}

TEST(Distill, SelfTeacherFixedPoint) {
  auto cfg = small_config();
  const TaskFamily fam(cfg.family);
  const auto student = random_policy(fam, cfg.context_order, 2);
  for (auto kind : {ObjectiveKind::reverse_kl_full, ObjectiveKind::reverse_kl_topk_stopgrad,
                    ObjectiveKind::reverse_kl_topk_renorm, ObjectiveKind::reverse_kl_topk_tail}) {
    cfg.objective.kind = kind;
    EXPECT_EQ(norm(distill_gradient(student, Teacher::self_ref(), fam, cfg, 4).grads), 0.0) << to_string(kind);
  }
  // the truncated unnormalized form keeps its +1 term and moves even at p = q
  cfg.objective.kind = ObjectiveKind::reverse_kl_topk_unnorm;
  EXPECT_GT(norm(distill_gradient(student, Teacher::self_ref(), fam, cfg, 4).grads), 0.0);
}

TEST(Distill, HiddenPiReducesToSelfDistillation) {
  auto cfg = small_config();
  cfg.family.kind = FamilyKind::instance_answer;
  cfg.family.num_questions = 2;
  cfg.family.num_answers = 2;
  cfg.context_order = 1;  // a one-token PI plus its marker does not fit
  cfg.teacher.pi_kind = PiKind::instance_answer;
  const TaskFamily fam(cfg.family);
  const auto student = random_policy(fam, cfg.context_order, 3);
  EXPECT_EQ(norm(distill_gradient(student, Teacher::frozen(student), fam, cfg, 1).grads), 0.0);
}

TEST(Distill, SinglePositionSgdStepIsExact) {
  auto cfg = small_config();
  cfg.max_length = 1;
  cfg.samples_per_prompt = 1;
  cfg.objective = {ObjectiveKind::reverse_kl_full, {SupportMode::full, 0}, 0.5};
  cfg.optimizer.kind = OptimizerKind::sgd;
  cfg.learning_rate = 0.7;
  cfg.family.num_prompts = 1;  // every trajectory lands on the same first-position context
  const auto fam = std::make_shared<const TaskFamily>(cfg.family);
  const auto teacher = Teacher::oracle(fam, 0.5);
  const auto student = random_policy(*fam, cfg.context_order, 4);

  TrainState st{student, OptimizerState(cfg.optimizer)};
  opd_step(st, teacher, *fam, cfg, 9);
  for (const auto prompt : fam->prompt_ids()) {
    const double w = 1.0;
    const auto key = student.context(prompt, {});
    const auto g = objectives::reverse_kl_full(student.logits_at(key),
                                               teacher_dist(teacher, nullptr, prompt, {}, {}))
                       .grad;
    const auto before = student.logits_at(key), after = st.policy.logits_at(key);
    for (std::size_t v = 0; v < g.size(); ++v) EXPECT_NEAR(after[v] - before[v], -0.7 * w * g[v], 1e-15);
  }
}

TEST(Distill, OpsdNeedsPi) {
  auto cfg = small_config();
  const auto fam = std::make_shared<const TaskFamily>(cfg.family);
  TrainState st{Policy(fam->vocab(), 3), OptimizerState(cfg.optimizer)};
  EXPECT_THROW(opsd_step(st, Teacher::oracle(fam, 0.2), *fam, cfg, 1), ArgumentError);
}

TEST(GroupAdvantages, Examples) {
  EXPECT_EQ(group_advantages(std::vector<double>{1, 1, 1, 0, 0, 0}, 3), (std::vector<double>(6, 0.0)));
  EXPECT_EQ(group_advantages(std::vector<double>{1, 0}, 2), (std::vector<double>{1.0, -1.0}));
  EXPECT_EQ(group_advantages(std::vector<double>{1, 0, 0}, 1), (std::vector<double>(3, 0.0)));
  const auto a = group_advantages(std::vector<double>{1, 0, 0, 1}, 4);
  // r_i minus the mean of the other three
  EXPECT_DOUBLE_EQ(a[0], 1.0 - 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(a[1], 0.0 - 2.0 / 3.0);
}

TEST(Reinforce, RewardedTokensGetPositivePressure) {
  Policy p(Vocab(4), 1);
  Trajectory good, bad;
  good.tokens = {1, 2};
  bad.tokens = {3, 0};
  const std::vector<Trajectory> trajs{good, bad};
  const auto adv = group_advantages(std::vector<double>{1.0, 0.0}, 2);
  const std::vector<std::vector<double>> token_adv{{adv[0], adv[0]}, {adv[1], adv[1]}};
  const auto g = reinforce_grad(p, trajs, token_adv, 0.5);
  // descent gradient: negative means the logit goes up
  EXPECT_LT(g.at(p.context(0, {}))[1], 0.0);
  EXPECT_GT(g.at(p.context(0, {}))[3], 0.0);
  const std::vector<TokenId> one{1};
  EXPECT_LT(g.at(p.context(0, one))[2], 0.0);
}

// Groups of one-token trajectories: every draw reads the same first-position context.
TEST(Reinforce, GroupBaselineIsUnbiased) {
  const std::size_t V = 4, G = 4;
  Policy p(Vocab(V), 1);
  const auto key = p.context(0, {});
  p.set_logits(key, Logits({0.3, -0.2, 0.5, -0.6}));
  const auto probs = dist_at(p, key);
  auto r = [](TokenId y) { return y == 2 ? 1.0 : 0.0; };
  auto group_grad = [&](std::span<const TokenId> ys) {
    std::vector<Trajectory> trajs(G);
    std::vector<double> rewards(G);
    for (std::size_t i = 0; i < G; ++i) {
      trajs[i].tokens = {ys[i]};
      rewards[i] = r(ys[i]);
    }
    const auto adv = group_advantages(rewards, G);
    std::vector<std::vector<double>> ta;
    for (double a : adv) ta.push_back({a});
    const auto g = reinforce_grad(p, trajs, ta, 1.0 / static_cast<double>(G));
    auto it = g.find(key);
    return it == g.end() ? std::vector<double>(V, 0.0) : it->second;
  };
  // exact descent direction: -d/dz E[r] = -p_2 (e_2 - p)
  std::vector<double> exact(V);
  for (std::size_t v = 0; v < V; ++v) exact[v] = -probs[2] * ((v == 2 ? 1.0 : 0.0) - probs[v]);

  // all V^G groups, weighted by their probability
  std::vector<double> enumerated(V, 0.0);
  std::vector<TokenId> ys(G);
  for (std::size_t code = 0; code < V * V * V * V; ++code) {
    double w = 1.0;
    for (std::size_t i = 0, c = code; i < G; ++i, c /= V) {
      ys[i] = static_cast<TokenId>(c % V);
      w *= probs[c % V];
    }
    const auto g = group_grad(ys);
    for (std::size_t v = 0; v < V; ++v) enumerated[v] += w * g[v];
  }
  for (std::size_t v = 0; v < V; ++v) EXPECT_NEAR(enumerated[v], exact[v], 1e-12);

  const int n = 100000;
  std::vector<double> mean(V, 0.0), sq(V, 0.0);
  Rng rng(77);
  for (int s = 0; s < n; ++s) {
    for (auto& y : ys) y = static_cast<TokenId>(rng.categorical(probs.probs()));
    const auto g = group_grad(ys);
    for (std::size_t v = 0; v < V; ++v) {
      mean[v] += g[v];
      sq[v] += g[v] * g[v];
    }
  }
  for (std::size_t v = 0; v < V; ++v) {
    mean[v] /= n;
    const double se = std::sqrt((sq[v] / n - mean[v] * mean[v]) / n);
    EXPECT_LE(std::abs(mean[v] - exact[v]), 3.0 * se) << v;
  }
}

TEST(Rlvr, NeedsGroups) {
  auto cfg = small_config();
  cfg.samples_per_prompt = 1;
  const TaskFamily fam(cfg.family);
  EXPECT_THROW(rlvr_gradient(Policy(fam.vocab(), 3), fam, cfg, 1), ArgumentError);
}

TEST(Combined, LambdaZeroEqualsRlvr) {
  auto cfg = small_config();
  cfg.lambda = 0.0;
  const auto fam = std::make_shared<const TaskFamily>(cfg.family);
  const auto student = random_policy(*fam, cfg.context_order, 6);
  const auto a = combined_gradient(student, Teacher::oracle(fam, 0.2), *fam, cfg, 11);
  const auto b = rlvr_gradient(student, *fam, cfg, 11);
  EXPECT_TRUE(same(a.grads, b.grads));
  cfg.lambda = -1.0;
  EXPECT_THROW(combined_gradient(student, Teacher::oracle(fam, 0.2), *fam, cfg, 11), ArgumentError);
}

TEST(Combined, SingletonGroupsScaleWithLambda) {
  auto cfg = small_config();
  cfg.samples_per_prompt = 1;
  const auto fam = std::make_shared<const TaskFamily>(cfg.family);
  const auto student = random_policy(*fam, cfg.context_order, 7);
  const auto t = Teacher::oracle(fam, 0.2);
  cfg.lambda = 1.0;
  const auto one = combined_gradient(student, t, *fam, cfg, 12).grads;
  cfg.lambda = 2.0;
  const auto two = combined_gradient(student, t, *fam, cfg, 12).grads;
  ASSERT_GT(norm(one), 0.0);
  ASSERT_EQ(one.size(), two.size());
  for (const auto& [k, v] : one)
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(two.at(k)[i], 2.0 * v[i]);
}

TEST(Sft, EmptyTraceSetThrows) {
  EXPECT_THROW(sft_gradient(Policy(Vocab(4), 2), std::vector<Trace>{}), ArgumentError);
  EXPECT_THROW(sft_gradient(Policy(Vocab(4), 2), std::vector<Trace>{Trace{0, {}}}), ArgumentError);
}

TEST(Sft, MemorizesASingleTrace) {
  const Trace tr{3, {1, 4, 2, 5}};
  TrainState st{Policy(Vocab(6), 4), OptimizerState(OptimizerConfig{})};
  StepTelemetry last;
  for (int s = 0; s < 300; ++s) last = sft_step(st, std::vector<Trace>{tr, tr}, 0.1);
  EXPECT_LT(*last.loss, 0.01);
  EXPECT_EQ(greedy_trajectory(st.policy, 3, 10).tokens, tr.tokens);
}

TEST(Sft, OracleTracesLoseLikelihoodOverTraining) {
  auto cfg = small_config();
  const auto fam = std::make_shared<const TaskFamily>(cfg.family);
  const auto traces = collect_traces(Teacher::oracle(fam, 0.5), *fam, PiKind::instance_response, 4, 8, 1.0, 3);
  ASSERT_FALSE(traces.empty());
  for (const auto& tr : traces) EXPECT_EQ(reward(fam->layout(), *fam->candidates(tr.prompt, {})[0], tr.tokens), 1);
  TrainState st{Policy(fam->vocab(), cfg.context_order), OptimizerState(cfg.optimizer)};
  const double before = *sft_gradient(st.policy, traces).telemetry.loss;
  for (int s = 0; s < 100; ++s) sft_step(st, traces, 0.1);
  const double after = *sft_gradient(st.policy, traces).telemetry.loss;
  EXPECT_LT(after, before);
  EXPECT_LT(after, 0.1 * before);
}

TEST(PrefixEval, EndpointsMatchStandaloneAndStudent) {
  auto cfg = small_config();
  const auto fam = std::make_shared<const TaskFamily>(cfg.family);
  const auto teacher = Teacher::oracle(fam, 0.2);
  const auto student = random_policy(*fam, cfg.context_order, 8);
  const auto at0 = prefix_conditioned_eval(teacher, student, *fam, PiKind::none, 8, TruncationRule::fixed, 1, 0);
  EXPECT_EQ(at0.prefix_accuracy, at0.standalone_accuracy);
  EXPECT_EQ(at0.correct_to_wrong + at0.wrong_to_correct, 0u);
  const auto full = prefix_conditioned_eval(teacher, student, *fam, PiKind::none, 8, TruncationRule::full, 1);
  EXPECT_EQ(full.prefix_accuracy, full.student_accuracy);
  EXPECT_EQ(full.student_accuracy, greedy_accuracy(student, *fam, 8));
  EXPECT_EQ(full.instances, fam->instances().size());
}

TEST(Experiment, ZeroStepBudgetEvaluatesOnly) {
  auto cfg = small_config();
  cfg.steps = 0;
  const auto r = run_training(cfg);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].t.step, 0u);
  ASSERT_TRUE(r.rows[0].t.eval_acc.has_value());
  EXPECT_EQ(r.final_accuracy, *r.rows[0].t.eval_acc);
  EXPECT_FALSE(r.rows[0].t.loss.has_value());
}

TEST(Experiment, DeterministicAndThreadIndependent) {
  for (auto mode : {TrainMode::opd, TrainMode::rlvr, TrainMode::combined}) {
    auto cfg = small_config();
    cfg.mode = mode;
    cfg.lambda = 0.5;
    const auto a = csv_of(run_training(cfg));
    EXPECT_EQ(a, csv_of(run_training(cfg)));
    cfg.parallel = !cfg.parallel;
    EXPECT_EQ(a, csv_of(run_training(cfg))) << to_string(mode);
    cfg.seed += 1;
    EXPECT_NE(a, csv_of(run_training(cfg)));
  }
}

TEST(Experiment, OpdLearnsSmallFamily) {
  auto cfg = small_config();
  cfg.steps = 150;
  cfg.eval_every = 150;
  cfg.teacher.temperature = 0.2;
  const auto r = run_training(cfg);
  EXPECT_GE(r.final_accuracy, 0.95);
}

TEST(Telemetry, CsvHeaderAndNa) {
  std::ostringstream s;
  StepTelemetry t;
  t.step = 3;
  t.loss = 0.5;
  write_telemetry_csv(s, std::vector<TelemetryRow>{{"train", t}});
  const auto text = s.str();
  const auto& cols = telemetry_columns();
  EXPECT_EQ(cols[0], "stage");
  EXPECT_EQ(cols[1], "step");
  EXPECT_NE(text.find("train,3,0.5,NA"), std::string::npos) << text;
}
