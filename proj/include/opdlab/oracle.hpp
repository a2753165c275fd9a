// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "opdlab/corelang.hpp"
#include "opdlab/policy.hpp"

// Independent ground truth. Nothing here calls into the analytic gradient code;
// only loss values and policy probabilities are consumed.
namespace opdlab::oracle {

struct OracleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultEps = 1e-5;

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences, one coordinate at a time.
std::vector<double> finite_diff_grad(const ScalarFn& loss, std::span<const double> z,
                                     double eps = kDefaultEps);

/// Five-point stencil; truncation error O(eps^4), so a larger eps keeps rounding noise low.
std::vector<double> finite_diff_grad5(const ScalarFn& loss, std::span<const double> z, double eps = 1e-3);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
  double eps = kDefaultEps;
  double tolerance = 0.0;
  bool pass = true;
};

/// Relative error uses max(|analytic|, |numeric|, 1e-8) as the denominator.
GradCheckReport compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                  double tolerance, double eps = kDefaultEps);

/// Fixed-horizon rollouts of a policy at one prompt: every token sequence of
/// exactly `horizon` tokens (end-of-sequence is not special here).
struct OneStepTask {
  std::int64_t prompt = 0;
  std::size_t horizon = 1;
};

inline constexpr double kMaxOutcomes = 1e6;

/// Exact E[f(y)] over all |V|^horizon sequences weighted by the policy.
/// Throws OracleError (with the size) past kMaxOutcomes.
double enumerate_expectation(const Policy& policy, const OneStepTask& task,
                             const std::function<double(std::span<const TokenId>)>& functional);
std::vector<double> enumerate_expectation(
    const Policy& policy, const OneStepTask& task,
    const std::function<std::vector<double>(std::span<const TokenId>)>& functional);

struct SimplexArgmin {
  Distribution point;
  double value = 0.0;
};

using DistributionFn = std::function<double(const Distribution&)>;

/// Exhaustive scan of the probability simplex on a grid of spacing `resolution`
/// (dimension <= 3). Grid points on the boundary are included. Each refinement
/// rescans a +-2 cell box around the incumbent at a tenth of the spacing.
SimplexArgmin simplex_grid_argmin(const DistributionFn& objective, std::size_t dimension,
                                  double resolution, std::size_t refinements = 0);

/// Plain reverse KL sum p log(p/q) with the shared floor, for oracle-side objectives.
double kl(const Distribution& p, const Distribution& q);

}  // namespace opdlab::oracle
