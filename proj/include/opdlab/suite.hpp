// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "opdlab/objectives.hpp"

// Oracle-vs-implementation checks. Losses are re-derived here from their
// definitions; only the analytic gradients come from the objectives module.
namespace opdlab::suite {

inline constexpr double kGradTolerance = 1e-6;

struct GradSummary {
  objectives::ObjectiveKind kind{};
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool pass = false;
};

/// Random instances (vocab 3..8) of one vocabulary-level objective; TopK
/// objectives draw their support mode and K per instance and skip empty supports.
GradSummary check_objective_gradients(objectives::ObjectiveKind kind, std::size_t instances,
                                      std::uint64_t seed);

struct EstimatorSummary {
  std::size_t instances = 0;
  double max_k1_error = 0.0;   // |E[k1] - KL|
  double max_k3_error = 0.0;   // |E[k3] - KL|
  double max_grad_rel_error = 0.0;  // E[sampled-token gradient] vs FD of KL
  bool pass = false;
};

/// Sampled-token estimators on one-step policies, expectations by exhaustive enumeration.
EstimatorSummary check_sampled_estimators(std::size_t instances, std::uint64_t seed);

struct SignFlipSummary {
  std::size_t points = 0;
  std::size_t disagreements = 0;
  std::size_t predicted = 0;
  std::size_t exceptions = 0;  // points where the observed and predicted flips differ
};

/// Sweeps (p_S, p_T) over the open unit square on a grid of spacing `resolution`,
/// comparing the signs of the unnormalized and stop-gradient TopK coefficients.
SignFlipSummary sign_flip_sweep(double resolution);

struct ReductionSummary {
  std::size_t instances = 0;
  double unnorm_loss_error = 0.0;
  double renorm_loss_error = 0.0;
  double tail_loss_error = 0.0;
  double stopgrad_grad_error = 0.0;
  bool pass = false;
};

/// Full-vocabulary supports: truncated objectives must reduce to reverse KL (1e-10).
ReductionSummary check_full_support_reductions(std::size_t instances, std::uint64_t seed);

struct ConsensusSummary {
  std::size_t cases = 0;
  double max_tv = 0.0;  // consensus_optimum vs refined grid argmin
  bool pass = false;
};

/// consensus_optimum against the simplex grid search on 2- and 3-token teacher sets.
ConsensusSummary check_consensus_grid(std::size_t cases, std::uint64_t seed, double tolerance = 1e-4);

/// Every check above as one machine-readable report with an overall "pass".
nlohmann::json run_oracle_suite(std::uint64_t seed, std::size_t instances = 100);

nlohmann::json to_json(const GradSummary& s);

}  // namespace opdlab::suite
