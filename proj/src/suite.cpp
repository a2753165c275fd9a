// SPDX-License-Identifier: Apache-2.0
#include "opdlab/suite.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "opdlab/oracle.hpp"
#include "opdlab/rng.hpp"
#include "opdlab/teacher.hpp"

namespace opdlab::suite {

namespace {

using objectives::ObjectiveKind;

std::vector<double> uniform_vector(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform01();
  return v;
}

std::vector<double> probs_of(std::span<const double> z) {
  const auto d = softmax(z);
  return {d.probs().begin(), d.probs().end()};
}

// Loss definitions written out directly from their formulas.
double reverse_kl(std::span<const double> p, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) s += p[v] * std::log(p[v] / q[v]);
  return s;
}

double independent_loss(ObjectiveKind kind, std::span<const double> z, std::span<const double> q,
                        const std::vector<TokenId>& support, const std::vector<double>& frozen, double beta) {
  const auto p = probs_of(z);
  const std::size_t n = p.size();
  std::vector<char> in(n, 0);
  for (TokenId t : support) in[static_cast<std::size_t>(t)] = 1;
  double s = 0.0;
  switch (kind) {
    case ObjectiveKind::reverse_kl_full: return reverse_kl(p, q);
    case ObjectiveKind::forward_kl_full: return reverse_kl(q, p);
    case ObjectiveKind::jsd_full:
      for (std::size_t v = 0; v < n; ++v) {
        const double m = beta * p[v] + (1 - beta) * q[v];
        s += beta * p[v] * std::log(p[v] / m) + (1 - beta) * q[v] * std::log(q[v] / m);
      }
      return s;
    case ObjectiveKind::reverse_kl_topk_unnorm:
      for (std::size_t v = 0; v < n; ++v)
        if (in[v]) s += p[v] * std::log(p[v] / q[v]);
      return s;
    case ObjectiveKind::reverse_kl_topk_stopgrad:
      // surrogate: the log-ratio is a constant taken at the unperturbed logits
      for (std::size_t v = 0; v < n; ++v)
        if (in[v]) s += p[v] * frozen[v];
      return s;
    case ObjectiveKind::reverse_kl_topk_renorm: {
      // softmax over the support logits alone is the renormalized student
      std::vector<double> zs, qs;
      double mt = 0.0;
      for (std::size_t v = 0; v < n; ++v)
        if (in[v]) {
          zs.push_back(z[v]);
          qs.push_back(q[v]);
          mt += q[v];
        }
      const auto pbar = probs_of(zs);
      for (std::size_t i = 0; i < zs.size(); ++i) s += pbar[i] * std::log(pbar[i] / (qs[i] / mt));
      return s;
    }
    case ObjectiveKind::reverse_kl_topk_tail: {
      double ts = 0.0, tt = 0.0;
      for (std::size_t v = 0; v < n; ++v) {
        if (in[v]) s += p[v] * std::log(p[v] / q[v]);
        else {
          ts += p[v];
          tt += q[v];
        }
      }
      if (ts > 0.0) s += ts * std::log(ts / tt);
      return s;
    }
    case ObjectiveKind::sampled_token: break;
  }
  throw ArgumentError("independent_loss: not a vocabulary objective");
}

bool is_topk(ObjectiveKind k) {
  return k == ObjectiveKind::reverse_kl_topk_unnorm || k == ObjectiveKind::reverse_kl_topk_stopgrad ||
         k == ObjectiveKind::reverse_kl_topk_renorm || k == ObjectiveKind::reverse_kl_topk_tail;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

GradSummary check_objective_gradients(ObjectiveKind kind, std::size_t instances, std::uint64_t seed) {
  if (kind == ObjectiveKind::sampled_token) throw ArgumentError("use check_sampled_estimators for sampled_token");
  GradSummary out;
  out.kind = kind;
  static const objectives::SupportMode modes[] = {
      objectives::SupportMode::teacher, objectives::SupportMode::student,
      objectives::SupportMode::intersection, objectives::SupportMode::union_};
  std::uint64_t draw = 0;
  while (out.instances < instances) {
    Rng rng(stream_seed(seed, static_cast<std::uint64_t>(kind) + 1, draw++));
    const std::size_t n = 3 + rng.below(6);
    const auto z = uniform_vector(rng, n, -3.0, 3.0);
    const Distribution q = softmax(uniform_vector(rng, n, -3.0, 3.0));
    const double beta = 0.1 + 0.8 * rng.uniform01();

    objectives::ObjectiveSpec spec;
    spec.kind = kind;
    spec.jsd_beta = beta;
    std::vector<TokenId> support;
    if (is_topk(kind)) {
      spec.selector = {modes[rng.below(4)], 1 + rng.below(n)};
      support = objectives::select_support(spec.selector, softmax(z), q);
      if (support.empty()) continue;
    }
    const auto report = objectives::evaluate(spec, Logits(z), q);
    std::vector<double> frozen(n, 0.0);
    const auto p0 = probs_of(z);
    for (std::size_t v = 0; v < n; ++v) frozen[v] = std::log(p0[v] / q[v]);
    const std::vector<double> qv(q.probs().begin(), q.probs().end());

    const auto numeric = oracle::finite_diff_grad5(
        [&](std::span<const double> x) { return independent_loss(kind, x, qv, support, frozen, beta); }, z);
    const auto cmp = oracle::compare_gradients(report.grad, numeric, kGradTolerance);
    out.max_rel_error = std::max(out.max_rel_error, cmp.max_rel_error);
    ++out.instances;
  }
  out.pass = out.max_rel_error <= kGradTolerance;
  return out;
}

EstimatorSummary check_sampled_estimators(std::size_t instances, std::uint64_t seed) {
  EstimatorSummary out;
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng(stream_seed(seed, 0xe57, i));
    const std::size_t n = 3 + rng.below(6);
    const auto z = uniform_vector(rng, n, -3.0, 3.0);
    const auto qv = probs_of(uniform_vector(rng, n, -3.0, 3.0));
    Policy pol{Vocab(n), 1};
    const ContextKey key = pol.context(0, {});
    pol.set_logits(key, Logits(z));
    const auto p = probs_of(z);
    const double kl = reverse_kl(p, qv);
    const oracle::OneStepTask task{0, 1};

    for (auto est : {objectives::Estimator::k1, objectives::Estimator::k3}) {
      const double e = oracle::enumerate_expectation(pol, task, [&](std::span<const TokenId> y) {
        const auto v = static_cast<std::size_t>(y[0]);
        return objectives::sampled_estimator(std::log(qv[v]), std::log(p[v]), est);
      });
      auto& slot = est == objectives::Estimator::k1 ? out.max_k1_error : out.max_k3_error;
      slot = std::max(slot, std::abs(e - kl));
    }

    const auto numeric = oracle::finite_diff_grad5(
        [&](std::span<const double> x) { return reverse_kl(probs_of(x), qv); }, z);
    for (bool minus_one : {false, true}) {
      const auto g = oracle::enumerate_expectation(pol, task, [&](std::span<const TokenId> y) {
        const auto v = static_cast<std::size_t>(y[0]);
        Trajectory tr;
        tr.prompt = 0;
        tr.tokens = {y[0]};
        tr.student_logprobs = {std::log(p[v])};
        tr.teacher_logprobs = std::vector<double>{std::log(qv[v])};
        const auto grads = objectives::pg_sampled_grad(pol, tr, minus_one);
        const auto it = grads.find(key);
        return it == grads.end() ? std::vector<double>(n, 0.0) : it->second;
      });
      const auto cmp = oracle::compare_gradients(g, numeric, kGradTolerance);
      out.max_grad_rel_error = std::max(out.max_grad_rel_error, cmp.max_rel_error);
    }
    ++out.instances;
  }
  out.pass = out.max_k1_error <= 1e-12 && out.max_k3_error <= 1e-12 && out.max_grad_rel_error <= kGradTolerance;
  return out;
}

SignFlipSummary sign_flip_sweep(double resolution) {
  if (!(resolution > 0.0 && resolution < 0.5)) throw ArgumentError("sign_flip_sweep: bad resolution");
  const auto steps = static_cast<std::size_t>(std::llround(1.0 / resolution));
  // Both axes use the distributions the student logits actually realize, so the
  // diagonal compares bitwise-equal probabilities instead of ulp-shifted ones.
  std::vector<Logits> zs;
  std::vector<Distribution> ds;
  for (std::size_t i = 1; i < steps; ++i) {
    const double p = static_cast<double>(i) / static_cast<double>(steps);
    zs.emplace_back(std::vector<double>{std::log(p), std::log1p(-p)});
    ds.push_back(softmax(zs.back()));
  }
  SignFlipSummary out;
  const std::vector<TokenId> support{0};
  auto sign = [](double x) { return (x > 0.0) - (x < 0.0); };
  for (std::size_t i = 0; i < zs.size(); ++i) {
    const double ps = ds[i][0];
    for (std::size_t j = 0; j < ds.size(); ++j) {
      const double pt = ds[j][0];
      const auto un = objectives::reverse_kl_topk_unnorm(zs[i], ds[j], support);
      const auto sg = objectives::reverse_kl_topk_stopgrad(zs[i], ds[j], support);
      const bool flip = sign(un.coeff[0]) * sign(sg.coeff[0]) < 0;
      const bool predicted = ps < pt && pt < std::numbers::e * ps;
      out.points++;
      out.disagreements += flip;
      out.predicted += predicted;
      out.exceptions += flip != predicted;
    }
  }
  return out;
}

ReductionSummary check_full_support_reductions(std::size_t instances, std::uint64_t seed) {
  ReductionSummary out;
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng(stream_seed(seed, 0x4ed, i));
    const std::size_t n = 2 + rng.below(19);
    const Logits z(uniform_vector(rng, n, -4.0, 4.0));
    const Distribution q = softmax(uniform_vector(rng, n, -4.0, 4.0));
    std::vector<TokenId> all(n);
    for (std::size_t v = 0; v < n; ++v) all[v] = static_cast<TokenId>(v);
    const auto full = objectives::reverse_kl_full(z, q);
    const auto un = objectives::reverse_kl_topk_unnorm(z, q, all);
    const auto rn = objectives::reverse_kl_topk_renorm(z, q, all);
    const auto tl = objectives::reverse_kl_topk_tail(z, q, all);
    const auto sg = objectives::reverse_kl_topk_stopgrad(z, q, all);
    out.unnorm_loss_error = std::max(out.unnorm_loss_error, std::abs(un.loss - full.loss));
    out.renorm_loss_error = std::max(out.renorm_loss_error, std::abs(rn.loss - full.loss));
    out.tail_loss_error = std::max(out.tail_loss_error, std::abs(tl.loss - full.loss));
    out.stopgrad_grad_error = std::max(out.stopgrad_grad_error, max_abs_diff(sg.grad, full.grad));
    ++out.instances;
  }
  out.pass = out.unnorm_loss_error <= 1e-10 && out.renorm_loss_error <= 1e-10 && out.tail_loss_error <= 1e-10 &&
             out.stopgrad_grad_error <= 1e-10;
  return out;
}

ConsensusSummary check_consensus_grid(std::size_t cases, std::uint64_t seed, double tolerance) {
  ConsensusSummary out;
  for (std::size_t c = 0; c < cases; ++c) {
    Rng rng(stream_seed(seed, 0xc05, c));
    const std::size_t dim = 2 + (c % 2);
    const std::size_t m = 2 + rng.below(3);
    std::vector<Distribution> qs;
    std::vector<double> w(m);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      qs.push_back(softmax(uniform_vector(rng, dim, -2.0, 2.0)));
      w[i] = 0.1 + rng.uniform01();
      total += w[i];
    }
    for (auto& x : w) x /= total;
    const auto closed = consensus_optimum(qs, w);
    const auto grid = oracle::simplex_grid_argmin(
        [&](const Distribution& p) {
          double s = 0.0;
          for (std::size_t i = 0; i < m; ++i) s += w[i] * oracle::kl(p, qs[i]);
          return s;
        },
        dim, 1e-3, 3);
    out.max_tv = std::max(out.max_tv, total_variation(closed, grid.point));
    ++out.cases;
  }
  out.pass = out.max_tv <= tolerance;
  return out;
}

nlohmann::json to_json(const GradSummary& s) {
  return {{"objective", std::string(objectives::to_string(s.kind))},
          {"instances", s.instances},
          {"max_rel_error", s.max_rel_error},
          {"tolerance", kGradTolerance},
          {"pass", s.pass}};
}

nlohmann::json run_oracle_suite(std::uint64_t seed, std::size_t instances) {
  nlohmann::json checks = nlohmann::json::array();
  bool all = true;
  for (auto kind : objectives::vocabulary_objectives()) {
    const auto s = check_objective_gradients(kind, instances, seed);
    auto j = to_json(s);
    j["check"] = "gradient";
    checks.push_back(j);
    all = all && s.pass;
  }
  const auto est = check_sampled_estimators(instances, seed);
  checks.push_back({{"check", "sampled_estimators"},
                    {"instances", est.instances},
                    {"max_k1_error", est.max_k1_error},
                    {"max_k3_error", est.max_k3_error},
                    {"max_grad_rel_error", est.max_grad_rel_error},
                    {"pass", est.pass}});
  all = all && est.pass;
  const auto flip = sign_flip_sweep(1e-3);
  checks.push_back({{"check", "sign_flip"},
                    {"points", flip.points},
                    {"disagreements", flip.disagreements},
                    {"exceptions", flip.exceptions},
                    {"pass", flip.exceptions == 0}});
  all = all && flip.exceptions == 0;
  const auto red = check_full_support_reductions(1000, seed);
  checks.push_back({{"check", "full_support_reductions"},
                    {"instances", red.instances},
                    {"unnorm_loss_error", red.unnorm_loss_error},
                    {"renorm_loss_error", red.renorm_loss_error},
                    {"tail_loss_error", red.tail_loss_error},
                    {"stopgrad_grad_error", red.stopgrad_grad_error},
                    {"pass", red.pass}});
  all = all && red.pass;
  const auto con = check_consensus_grid(10, seed);
  checks.push_back({{"check", "consensus_grid"}, {"cases", con.cases}, {"max_tv", con.max_tv}, {"pass", con.pass}});
  all = all && con.pass;
  return {{"seed", seed}, {"checks", checks}, {"pass", all}};
}

}  // namespace opdlab::suite
