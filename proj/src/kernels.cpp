// SPDX-License-Identifier: Apache-2.0
#include "opdlab/kernels.hpp"

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace opdlab::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

std::vector<Trajectory> rollout_batch_serial(const Policy& policy, std::span<const RolloutJob> jobs,
                                             std::size_t max_length, double temperature) {
  std::vector<Trajectory> out;
  out.reserve(jobs.size());
  for (const auto& job : jobs)
    out.push_back(sample_trajectory(policy, job.prompt, max_length, job.seed, temperature));
  return out;
}

std::vector<Trajectory> rollout_batch_parallel(const Policy& policy, std::span<const RolloutJob> jobs,
                                               std::size_t max_length, double temperature) {
  std::vector<Trajectory> out(jobs.size());
  const auto n = static_cast<std::ptrdiff_t>(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& job = jobs[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] =
        sample_trajectory(policy, job.prompt, max_length, job.seed, temperature);
  }
  return out;
}

DistillResult distill_trajectory(const Policy& student, const Teacher& teacher,
                                 const Trajectory& traj, const PrivilegedInfo& pi,
                                 const DistillSettings& settings) {
  using objectives::ObjectiveKind;
  DistillResult r;
  const std::size_t len = traj.length();
  r.positions = len;
  r.teacher_logprobs.resize(len);
  r.diagnostics.resize(len);
  const auto reps = metrics::repetition_flags(traj.tokens, settings.ngram);
  const bool sampled = settings.objective.kind == ObjectiveKind::sampled_token;

  double loss_sum = 0.0;
  GradMap sum;
  for (std::size_t t = 0; t < len; ++t) {
    const auto prefix = traj.prefix(t);
    const ContextKey key = student.context(traj.prompt, prefix);
    const Logits z = student.logits_at(key);
    const Distribution p_s = softmax(z);
    const Distribution p_t = teacher_dist(teacher, &student, traj.prompt, pi, prefix);
    const TokenId tok = traj.tokens[t];
    const double l_t = safe_log(p_t[static_cast<std::size_t>(tok)]);
    r.teacher_logprobs[t] = l_t;

    auto& d = r.diagnostics[t];
    d.repetitive = reps.flags[t];
    d.dlogprob = l_t - traj.student_logprobs[t];
    d.overlap = metrics::topk_overlap(p_s, p_t, settings.overlap_k);
    d.rank = static_cast<double>(metrics::rank_at_k(p_t, tok, settings.overlap_k));
    d.entropy = entropy(p_s);

    if (sampled) {
      loss_sum += objectives::sampled_estimator(l_t, traj.student_logprobs[t], objectives::Estimator::k1);
      continue;
    }
    const auto report = objectives::evaluate(settings.objective, z, p_t);
    if (report.skipped) {
      ++r.skipped;
      continue;
    }
    loss_sum += report.loss;
    accumulate(sum, key, report.grad);
  }

  if (sampled) {
    Trajectory with_teacher = traj;
    with_teacher.teacher_logprobs = r.teacher_logprobs;
    sum = objectives::pg_sampled_grad(student, with_teacher, settings.include_minus_one);
  }
  const std::size_t effective = len - r.skipped;
  if (effective > 0) {
    const double inv = 1.0 / static_cast<double>(effective);
    r.loss = loss_sum * inv;
    accumulate(r.grads, sum, inv);
  }
  return r;
}

std::vector<DistillResult> distill_batch_serial(const Policy& student, const Teacher& teacher,
                                                std::span<const Trajectory> trajs,
                                                std::span<const PrivilegedInfo> pis,
                                                const DistillSettings& settings) {
  if (pis.size() != trajs.size()) throw ArgumentError("distill_batch: one PI per trajectory");
  std::vector<DistillResult> out;
  out.reserve(trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i)
    out.push_back(distill_trajectory(student, teacher, trajs[i], pis[i], settings));
  return out;
}

std::vector<DistillResult> distill_batch_parallel(const Policy& student, const Teacher& teacher,
                                                  std::span<const Trajectory> trajs,
                                                  std::span<const PrivilegedInfo> pis,
                                                  const DistillSettings& settings) {
  if (pis.size() != trajs.size()) throw ArgumentError("distill_batch: one PI per trajectory");
  std::vector<DistillResult> out(trajs.size());
  const auto n = static_cast<std::ptrdiff_t>(trajs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = distill_trajectory(student, teacher, trajs[k], pis[k], settings);
  }
  return out;
}

GradMap merge_grads(std::span<const DistillResult> results, double scale) {
  GradMap out;
  for (const auto& r : results) accumulate(out, r.grads, scale);
  return out;
}

}  // namespace opdlab::kernels
