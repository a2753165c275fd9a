// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <omp.h>

#include "opdlab/kernels.hpp"
#include "opdlab/rng.hpp"
#include "opdlab/tasks.hpp"

using namespace opdlab;
using objectives::ObjectiveKind;
using objectives::SupportMode;

namespace {

std::shared_ptr<const TaskFamily> family() {
  FamilySpec s;
  s.symbols = 8;
  s.num_prompts = 10;
  s.min_input_length = 1;
  s.max_input_length = 3;
  s.rule = "random";
  s.seed = 4;
  return std::make_shared<const TaskFamily>(s);
}

Policy random_policy(const TaskFamily& fam, std::uint64_t seed) {
  Policy p(fam.vocab(), 2);
  Rng rng(seed);
  for (auto prompt : fam.prompt_ids())
    for (TokenId a = -1; a < static_cast<TokenId>(fam.vocab().size()); ++a) {
      std::vector<TokenId> pre;
      if (a >= 0) pre.push_back(a);
      std::vector<double> z(fam.vocab().size());
      for (auto& x : z) x = 3.0 * rng.uniform01() - 1.5;
      p.set_logits(p.context(prompt, pre), Logits(z));
    }
  return p;
}

std::vector<kernels::RolloutJob> jobs(const TaskFamily& fam, std::size_t n, std::uint64_t seed) {
  std::vector<kernels::RolloutJob> out;
  const auto ids = fam.prompt_ids();
  for (std::size_t i = 0; i < n; ++i) out.push_back({ids[i % ids.size()], seed * 1000 + i});
  return out;
}

bool same(const Trajectory& a, const Trajectory& b) {
  return a.prompt == b.prompt && a.tokens == b.tokens && a.student_logprobs == b.student_logprobs &&
         a.truncated == b.truncated;
}

bool same(const kernels::DistillResult& a, const kernels::DistillResult& b) {
  return a.grads == b.grads && a.loss == b.loss && a.positions == b.positions && a.skipped == b.skipped &&
         a.teacher_logprobs == b.teacher_logprobs && a.diagnostics.size() == b.diagnostics.size();
}

class Threads : public ::testing::Test {
 protected:
  void SetUp() override {
    saved_ = omp_get_max_threads();
    omp_set_num_threads(4);  // force real interleaving even on one core
  }
  void TearDown() override { omp_set_num_threads(saved_); }
  int saved_ = 1;
};

}  // namespace

TEST_F(Threads, RolloutSerialEqualsParallel) {
  const auto fam = family();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = random_policy(*fam, seed);
    const auto js = jobs(*fam, 37, seed);
    for (double temp : {1.0, 0.5}) {
      const auto a = kernels::rollout_batch_serial(p, js, 9, temp);
      const auto b = kernels::rollout_batch_parallel(p, js, 9, temp);
      ASSERT_EQ(a.size(), js.size());
      ASSERT_EQ(b.size(), js.size());
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(same(a[i], b[i])) << "seed " << seed << " job " << i;
    }
  }
}

TEST_F(Threads, RolloutDependsOnlyOnTheJob) {
  const auto fam = family();
  const auto p = random_policy(*fam, 1);
  const auto js = jobs(*fam, 12, 3);
  const auto batch = kernels::rollout_batch_parallel(p, js, 9, 1.0);
  for (std::size_t i = 0; i < js.size(); ++i) {
    const auto alone = kernels::rollout_batch_serial(p, std::span(js).subspan(i, 1), 9, 1.0);
    EXPECT_TRUE(same(alone[0], batch[i]));
  }
}

TEST_F(Threads, DistillSerialEqualsParallelForEveryObjective) {
  const auto fam = family();
  const auto student = random_policy(*fam, 2);
  const auto teacher = Teacher::oracle(fam, 0.3);
  const auto trajs = kernels::rollout_batch_serial(student, jobs(*fam, 25, 7), 9, 1.0);
  std::vector<PrivilegedInfo> pis;
  for (const auto& t : trajs) {
    const auto& inst = *fam->candidates(t.prompt, {}).front();
    pis.push_back(fam->privileged_info(inst, PiKind::shared_rule));
  }
  for (auto kind : {ObjectiveKind::reverse_kl_full, ObjectiveKind::forward_kl_full, ObjectiveKind::jsd_full,
                    ObjectiveKind::reverse_kl_topk_unnorm, ObjectiveKind::reverse_kl_topk_stopgrad,
                    ObjectiveKind::reverse_kl_topk_renorm, ObjectiveKind::reverse_kl_topk_tail,
                    ObjectiveKind::sampled_token}) {
    for (auto mode : {SupportMode::teacher, SupportMode::union_}) {
      SCOPED_TRACE(std::string(objectives::to_string(kind)));
      kernels::DistillSettings s{{kind, {mode, 3}, 0.5}, kind == ObjectiveKind::sampled_token, 4, 3};
      const auto a = kernels::distill_batch_serial(student, teacher, trajs, pis, s);
      const auto b = kernels::distill_batch_parallel(student, teacher, trajs, pis, s);
      ASSERT_EQ(a.size(), trajs.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_TRUE(same(a[i], b[i])) << i;
        EXPECT_TRUE(same(a[i], kernels::distill_trajectory(student, teacher, trajs[i], pis[i], s))) << i;
      }
      EXPECT_EQ(kernels::merge_grads(a, 0.1), kernels::merge_grads(b, 0.1));
    }
  }
}

TEST(Kernels, PiCountMustMatch) {
  const auto fam = family();
  const auto p = random_policy(*fam, 3);
  const auto trajs = kernels::rollout_batch_serial(p, jobs(*fam, 3, 1), 5, 1.0);
  const std::vector<PrivilegedInfo> pis(2);
  const auto t = Teacher::frozen(p);
  kernels::DistillSettings s;
  EXPECT_THROW(kernels::distill_batch_serial(p, t, trajs, pis, s), ArgumentError);
  EXPECT_THROW(kernels::distill_batch_parallel(p, t, trajs, pis, s), ArgumentError);
}

TEST(Kernels, MergeGradsSumsInIndexOrder) {
  Policy p(Vocab(3), 1);
  const auto k1 = p.context(0, {}), k2 = p.context(1, {});
  std::vector<kernels::DistillResult> rs(3);
  rs[0].grads[k1] = {1e16, 0.0, 0.0};
  rs[1].grads[k1] = {1.0, 2.0, 0.0};
  rs[1].grads[k2] = {0.5, 0.5, 0.5};
  rs[2].grads[k1] = {-1e16, 0.0, 1.0};
  const auto m = kernels::merge_grads(rs, 2.0);
  ASSERT_EQ(m.size(), 2u);
  // left-to-right: (2e16 + 2) - 2e16 = 2 in doubles
  const double expect0 = (2e16 + 2.0) + -2e16;
  EXPECT_EQ(m.at(k1), (std::vector<double>{expect0, 4.0, 2.0}));
  EXPECT_EQ(m.at(k2), (std::vector<double>{1.0, 1.0, 1.0}));
  EXPECT_TRUE(kernels::merge_grads(std::span<const kernels::DistillResult>{}, 1.0).empty());
}

TEST(Kernels, MaxThreadsIsPositive) { EXPECT_GE(kernels::max_threads(), 1); }
