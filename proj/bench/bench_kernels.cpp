// SPDX-License-Identifier: Apache-2.0
// Serial reference vs OpenMP kernels on a mid-sized shared-rule batch.
// Thread count comes from OMP_NUM_THREADS.
#include <benchmark/benchmark.h>

#include "opdlab/kernels.hpp"
#include "opdlab/rng.hpp"
#include "opdlab/tasks.hpp"

using namespace opdlab;

namespace {

struct Fixture {
  std::shared_ptr<const TaskFamily> family;
  Policy student;
  Teacher teacher;
  std::vector<kernels::RolloutJob> jobs;
  std::vector<Trajectory> trajs;
  std::vector<PrivilegedInfo> pis;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    FamilySpec s;
    s.symbols = 32;
    s.num_prompts = 128;
    s.rule = "random";
    auto fam = std::make_shared<const TaskFamily>(s);
    Policy p(fam->vocab(), 4);
    Rng rng(1);
    for (auto prompt : fam->prompt_ids())
      for (TokenId a = -1; a < static_cast<TokenId>(fam->vocab().size()); ++a) {
        std::vector<TokenId> pre;
        if (a >= 0) pre.push_back(a);
        std::vector<double> z(fam->vocab().size());
        for (auto& x : z) x = 2.0 * rng.uniform01() - 1.0;
        p.set_logits(p.context(prompt, pre), Logits(z));
      }
    std::vector<kernels::RolloutJob> jobs;
    const auto ids = fam->prompt_ids();
    for (std::size_t i = 0; i < 256; ++i) jobs.push_back({ids[i % ids.size()], 1000 + i});
    auto trajs = kernels::rollout_batch_serial(p, jobs, 16, 1.0);
    std::vector<PrivilegedInfo> pis(trajs.size());
    auto teacher = Teacher::oracle(fam, 0.2);
    return Fixture{fam, std::move(p), std::move(teacher), std::move(jobs), std::move(trajs), std::move(pis)};
  }();
  return f;
}

kernels::DistillSettings settings() {
  using namespace objectives;
  return {{ObjectiveKind::reverse_kl_topk_stopgrad, {SupportMode::student, 20}, 0.5}, false, 5, 3};
}

void BM_RolloutSerial(benchmark::State& st) {
  const auto& f = fixture();
  for (auto _ : st) benchmark::DoNotOptimize(kernels::rollout_batch_serial(f.student, f.jobs, 16, 1.0));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(f.jobs.size()));
}

void BM_RolloutParallel(benchmark::State& st) {
  const auto& f = fixture();
  for (auto _ : st) benchmark::DoNotOptimize(kernels::rollout_batch_parallel(f.student, f.jobs, 16, 1.0));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(f.jobs.size()));
  st.counters["threads"] = kernels::max_threads();
}

void BM_DistillSerial(benchmark::State& st) {
  const auto& f = fixture();
  const auto s = settings();
  for (auto _ : st) benchmark::DoNotOptimize(kernels::distill_batch_serial(f.student, f.teacher, f.trajs, f.pis, s));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(f.trajs.size()));
}

void BM_DistillParallel(benchmark::State& st) {
  const auto& f = fixture();
  const auto s = settings();
  for (auto _ : st)
    benchmark::DoNotOptimize(kernels::distill_batch_parallel(f.student, f.teacher, f.trajs, f.pis, s));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(f.trajs.size()));
  st.counters["threads"] = kernels::max_threads();
}

}  // namespace

BENCHMARK(BM_RolloutSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RolloutParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_DistillSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DistillParallel)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
