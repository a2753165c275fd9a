// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "opdlab/metrics.hpp"
#include "opdlab/objectives.hpp"
#include "opdlab/policy.hpp"
#include "opdlab/teacher.hpp"

// Batch kernels. Each has a serial reference and an OpenMP version; both
// produce bit-identical results because every trajectory owns its RNG stream
// and per-trajectory outputs are merged in index order.
namespace opdlab::kernels {

struct RolloutJob {
  std::int64_t prompt = 0;
  std::uint64_t seed = 0;
};

std::vector<Trajectory> rollout_batch_serial(const Policy& policy, std::span<const RolloutJob> jobs,
                                             std::size_t max_length, double temperature);
std::vector<Trajectory> rollout_batch_parallel(const Policy& policy, std::span<const RolloutJob> jobs,
                                               std::size_t max_length, double temperature);

struct DistillSettings {
  objectives::ObjectiveSpec objective;
  bool include_minus_one = false;  // sampled-token objective only
  std::size_t overlap_k = 5;
  std::size_t ngram = metrics::kDefaultNgram;
};

/// Per-trajectory distillation outcome.
struct DistillResult {
  GradMap grads;         // mean over non-skipped positions
  double loss = 0.0;     // mean over non-skipped positions
  std::size_t positions = 0;
  std::size_t skipped = 0;
  std::vector<double> teacher_logprobs;
  std::vector<metrics::TokenDiagnostics> diagnostics;
};

/// Direct-term gradient of the configured objective along one trajectory.
DistillResult distill_trajectory(const Policy& student, const Teacher& teacher,
                                 const Trajectory& traj, const PrivilegedInfo& pi,
                                 const DistillSettings& settings);

std::vector<DistillResult> distill_batch_serial(const Policy& student, const Teacher& teacher,
                                                std::span<const Trajectory> trajs,
                                                std::span<const PrivilegedInfo> pis,
                                                const DistillSettings& settings);
std::vector<DistillResult> distill_batch_parallel(const Policy& student, const Teacher& teacher,
                                                  std::span<const Trajectory> trajs,
                                                  std::span<const PrivilegedInfo> pis,
                                                  const DistillSettings& settings);

/// Sum of `results[i].grads * scale` in index order.
GradMap merge_grads(std::span<const DistillResult> results, double scale);

int max_threads();

}  // namespace opdlab::kernels
