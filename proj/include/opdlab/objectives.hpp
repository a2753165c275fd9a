// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "opdlab/corelang.hpp"
#include "opdlab/policy.hpp"

namespace opdlab::objectives {

struct DegenerateSupportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Per-position loss with its exact gradient w.r.t. student logits.
///
/// `coeff[v]` is the score-space weight: for every objective except the
/// renormalized one, grad = sum_v p_S(v) * coeff[v] * d log p_S(v) / dz.
/// The renormalized objective uses the in-support renormalized student instead.
struct ObjectiveReport {
  double loss = 0.0;
  std::vector<double> grad;
  std::vector<double> coeff;
  bool skipped = false;  // empty support: contributes nothing and is counted
};

enum class SupportMode { teacher, student, intersection, union_, full };

struct TopKSelector {
  SupportMode mode = SupportMode::full;
  std::size_t k = 0;  // ignored in full mode
};

std::string_view to_string(SupportMode mode);
SupportMode parse_support_mode(std::string_view name);

/// Sorted ascending token ids. Intersection may be empty.
std::vector<TokenId> select_support(const TopKSelector& sel, const Distribution& p_student,
                                    const Distribution& p_teacher);

ObjectiveReport reverse_kl_full(const Logits& z_student, const Distribution& p_teacher);
ObjectiveReport forward_kl_full(const Logits& z_student, const Distribution& p_teacher);
ObjectiveReport jsd_full(const Logits& z_student, const Distribution& p_teacher, double beta);

/// Truncated reverse KL differentiated through both p and log p; keeps the +1.
ObjectiveReport reverse_kl_topk_unnorm(const Logits& z_student, const Distribution& p_teacher,
                                       const std::vector<TokenId>& support);
/// Truncated reverse KL with the log-ratio held constant (advantage form).
ObjectiveReport reverse_kl_topk_stopgrad(const Logits& z_student, const Distribution& p_teacher,
                                         const std::vector<TokenId>& support);
/// KL between the two distributions renormalized on the support.
ObjectiveReport reverse_kl_topk_renorm(const Logits& z_student, const Distribution& p_teacher,
                                       const std::vector<TokenId>& support);
/// Truncated reverse KL plus one aggregated tail bucket.
ObjectiveReport reverse_kl_topk_tail(const Logits& z_student, const Distribution& p_teacher,
                                     const std::vector<TokenId>& support);

enum class Estimator { k1, k2, k3 };
std::string_view to_string(Estimator e);

/// A = l_T - l_S; k1 = -A, k2 = A^2/2, k3 = e^A - 1 - A.
double sampled_estimator(double l_teacher, double l_student, Estimator kind);

/// Sum over positions of -a_t * d log p(y_t|ctx_t)/dz with a_t = l_T - l_S (- 1).
/// Not divided by the trajectory length.
GradMap pg_sampled_grad(const Policy& policy, const Trajectory& traj, bool include_minus_one);

/// Objective selection used by the trainer and the CLI.
enum class ObjectiveKind {
  reverse_kl_full,
  forward_kl_full,
  jsd_full,
  reverse_kl_topk_unnorm,
  reverse_kl_topk_stopgrad,
  reverse_kl_topk_renorm,
  reverse_kl_topk_tail,
  sampled_token,
};

std::string_view to_string(ObjectiveKind kind);
ObjectiveKind parse_objective_kind(std::string_view name);
const std::vector<ObjectiveKind>& vocabulary_objectives();

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::reverse_kl_topk_stopgrad;
  TopKSelector selector{SupportMode::full, 0};
  double jsd_beta = 0.5;
};

/// Dispatches a vocabulary-level objective; builds the support from `selector`.
/// Throws ArgumentError for ObjectiveKind::sampled_token.
ObjectiveReport evaluate(const ObjectiveSpec& spec, const Logits& z_student,
                         const Distribution& p_teacher);

}  // namespace opdlab::objectives
