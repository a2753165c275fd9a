// SPDX-License-Identifier: Apache-2.0
#include "opdlab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace opdlab::oracle {

std::vector<double> finite_diff_grad(const ScalarFn& loss, std::span<const double> z, double eps) {
  if (!(eps > 0.0)) throw OracleError("finite_diff_grad: eps must be positive");
  std::vector<double> x(z.begin(), z.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = loss(x);
    x[i] = orig - eps;
    const double down = loss(x);
    x[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw OracleError("finite_diff_grad: non-finite loss at coordinate " + std::to_string(i));
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

std::vector<double> finite_diff_grad5(const ScalarFn& loss, std::span<const double> z, double eps) {
  if (!(eps > 0.0)) throw OracleError("finite_diff_grad5: eps must be positive");
  std::vector<double> x(z.begin(), z.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    double f[4];
    const double offsets[4] = {2.0, 1.0, -1.0, -2.0};
    for (int k = 0; k < 4; ++k) {
      x[i] = orig + offsets[k] * eps;
      f[k] = loss(x);
      if (!std::isfinite(f[k]))
        throw OracleError("finite_diff_grad5: non-finite loss at coordinate " + std::to_string(i));
    }
    x[i] = orig;
    // differences first, so a flat direction gives exactly zero
    g[i] = (8.0 * (f[1] - f[2]) - (f[0] - f[3])) / (12.0 * eps);
  }
  return g;
}

GradCheckReport compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                  double tolerance, double eps) {
  if (analytic.size() != numeric.size()) throw OracleError("compare_gradients: size mismatch");
  GradCheckReport r;
  r.eps = eps;
  r.tolerance = tolerance;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
    const double err = std::abs(analytic[i] - numeric[i]) / denom;
    if (err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_coordinate = i;
    }
  }
  r.pass = r.max_rel_error <= tolerance;
  return r;
}

namespace {

void check_space(const Policy& policy, const OneStepTask& task) {
  const double outcomes = std::pow(static_cast<double>(policy.vocab().size()),
                                   static_cast<double>(task.horizon));
  if (task.horizon < 1) throw OracleError("enumerate_expectation: horizon must be at least 1");
  if (outcomes > kMaxOutcomes)
    throw OracleError("enumerate_expectation: outcome space of " + std::to_string(outcomes) +
                      " sequences exceeds the limit of 1e6");
}

template <class R, class Add>
void walk(const Policy& policy, const OneStepTask& task, std::vector<TokenId>& prefix, double prob,
          const std::function<R(std::span<const TokenId>)>& f, Add add) {
  if (prefix.size() == task.horizon) {
    add(prob, f(prefix));
    return;
  }
  const Distribution p = dist_at(policy, policy.context(task.prompt, prefix));
  for (std::size_t v = 0; v < p.size(); ++v) {
    prefix.push_back(static_cast<TokenId>(v));
    walk(policy, task, prefix, prob * p[v], f, add);
    prefix.pop_back();
  }
}

}  // namespace

double enumerate_expectation(const Policy& policy, const OneStepTask& task,
                             const std::function<double(std::span<const TokenId>)>& functional) {
  check_space(policy, task);
  double total = 0.0;
  std::vector<TokenId> prefix;
  walk<double>(policy, task, prefix, 1.0, functional,
               [&](double w, double value) { total += w * value; });
  return total;
}

std::vector<double> enumerate_expectation(
    const Policy& policy, const OneStepTask& task,
    const std::function<std::vector<double>(std::span<const TokenId>)>& functional) {
  check_space(policy, task);
  std::vector<double> total;
  std::vector<TokenId> prefix;
  walk<std::vector<double>>(policy, task, prefix, 1.0, functional,
                            [&](double w, const std::vector<double>& value) {
                              if (total.empty()) total.assign(value.size(), 0.0);
                              if (value.size() != total.size())
                                throw OracleError("enumerate_expectation: ragged functional");
                              for (std::size_t i = 0; i < value.size(); ++i) total[i] += w * value[i];
                            });
  return total;
}

SimplexArgmin simplex_grid_argmin(const DistributionFn& objective, std::size_t dimension,
                                  double resolution, std::size_t refinements) {
  if (dimension < 2 || dimension > 3) throw OracleError("simplex_grid_argmin: dimension must be 2 or 3");
  if (!(resolution >= 1e-3 && resolution <= 0.5))
    throw OracleError("simplex_grid_argmin: resolution must lie in [1e-3, 0.5]");
  double best = INFINITY;
  std::vector<double> best_point;
  std::vector<double> p(dimension);
  auto consider = [&]() {
    const Distribution d(p);
    const double v = objective(d);
    if (v < best) {
      best = v;
      best_point = p;
    }
  };

  const auto steps = static_cast<std::size_t>(std::llround(1.0 / resolution));
  const double h = 1.0 / static_cast<double>(steps);
  for (std::size_t i = 0; i <= steps; ++i) {
    if (dimension == 2) {
      p[0] = static_cast<double>(i) * h;
      p[1] = static_cast<double>(steps - i) * h;
      consider();
      continue;
    }
    for (std::size_t j = 0; i + j <= steps; ++j) {
      p[0] = static_cast<double>(i) * h;
      p[1] = static_cast<double>(j) * h;
      p[2] = static_cast<double>(steps - i - j) * h;
      consider();
    }
  }

  double cell = h;
  for (std::size_t r = 0; r < refinements; ++r) {
    const std::vector<double> centre = best_point;
    const double fine = cell / 10.0;
    for (int a = -20; a <= 20; ++a) {
      const double x0 = centre[0] + a * fine;
      if (x0 < 0.0 || x0 > 1.0) continue;
      if (dimension == 2) {
        p[0] = x0;
        p[1] = 1.0 - x0;
        consider();
        continue;
      }
      for (int b = -20; b <= 20; ++b) {
        const double x1 = centre[1] + b * fine;
        const double x2 = 1.0 - x0 - x1;
        if (x1 < 0.0 || x1 > 1.0 || x2 < 0.0) continue;
        p[0] = x0;
        p[1] = x1;
        p[2] = x2;
        consider();
      }
    }
    cell = fine;
  }
  return {Distribution(best_point), best};
}

double kl(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size()) throw OracleError("kl: size mismatch");
  double s = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v)
    if (p[v] > 0.0) s += p[v] * (std::log(p[v]) - std::log(std::max(q[v], kProbFloor)));
  return s;
}

}  // namespace opdlab::oracle
