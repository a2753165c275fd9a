// SPDX-License-Identifier: Apache-2.0
#include "opdlab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace opdlab::objectives {

namespace {

void check_sizes(const Logits& z, const Distribution& q) {
  if (z.size() != q.size()) throw ArgumentError("student logits and teacher distribution differ in size");
}

void check_support(const std::vector<TokenId>& support, std::size_t n) {
  for (TokenId t : support)
    if (t < 0 || static_cast<std::size_t>(t) >= n) throw ArgumentError("support token out of range");
}

// grad_z of a loss with dL/dp = g through softmax: p * (g - <p, g>).
std::vector<double> through_softmax(const Distribution& p, const std::vector<double>& g) {
  double mean = 0.0;
  for (std::size_t v = 0; v < g.size(); ++v) mean += p[v] * g[v];
  std::vector<double> out(g.size());
  for (std::size_t v = 0; v < g.size(); ++v) out[v] = p[v] * (g[v] - mean);
  return out;
}

ObjectiveReport skipped_report(std::size_t n) {
  ObjectiveReport r;
  r.grad.assign(n, 0.0);
  r.coeff.assign(n, 0.0);
  r.skipped = true;
  return r;
}

double log_ratio(double a, double b) { return safe_log(a) - safe_log(b); }

}  // namespace

std::string_view to_string(SupportMode mode) {
  switch (mode) {
    case SupportMode::teacher: return "teacher";
    case SupportMode::student: return "student";
    case SupportMode::intersection: return "intersection";
    case SupportMode::union_: return "union";
    case SupportMode::full: return "full";
  }
  return "?";
}

SupportMode parse_support_mode(std::string_view name) {
  for (auto m : {SupportMode::teacher, SupportMode::student, SupportMode::intersection,
                 SupportMode::union_, SupportMode::full})
    if (to_string(m) == name) return m;
  throw ArgumentError("unknown support mode '" + std::string(name) + "'");
}

std::vector<TokenId> select_support(const TopKSelector& sel, const Distribution& p_student,
                                    const Distribution& p_teacher) {
  const std::size_t n = p_student.size();
  if (p_teacher.size() != n) throw ArgumentError("select_support: vocab size mismatch");
  if (sel.mode == SupportMode::full) {
    std::vector<TokenId> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  auto sorted_topk = [&](const Distribution& d) {
    auto ids = topk(d, sel.k).tokens();
    std::sort(ids.begin(), ids.end());
    return ids;
  };
  std::vector<TokenId> out;
  switch (sel.mode) {
    case SupportMode::teacher: return sorted_topk(p_teacher);
    case SupportMode::student: return sorted_topk(p_student);
    case SupportMode::intersection: {
      const auto a = sorted_topk(p_teacher), b = sorted_topk(p_student);
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
      return out;
    }
    case SupportMode::union_: {
      const auto a = sorted_topk(p_teacher), b = sorted_topk(p_student);
      std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
      return out;
    }
    case SupportMode::full: break;
  }
  return out;
}

ObjectiveReport reverse_kl_full(const Logits& z_student, const Distribution& p_teacher) {
  check_sizes(z_student, p_teacher);
  const Distribution p = softmax(z_student);
  ObjectiveReport r;
  r.coeff.resize(p.size());
  for (std::size_t v = 0; v < p.size(); ++v) {
    r.coeff[v] = log_ratio(p[v], p_teacher[v]);
    r.loss += p[v] * r.coeff[v];
  }
  r.grad = through_softmax(p, r.coeff);
  return r;
}

ObjectiveReport forward_kl_full(const Logits& z_student, const Distribution& p_teacher) {
  check_sizes(z_student, p_teacher);
  const Distribution p = softmax(z_student);
  ObjectiveReport r;
  r.coeff.resize(p.size());
  r.grad.resize(p.size());
  for (std::size_t v = 0; v < p.size(); ++v) {
    const double q = p_teacher[v];
    if (q > 0.0) r.loss += q * log_ratio(q, p[v]);
    r.grad[v] = p[v] - q;
    r.coeff[v] = -q / std::max(p[v], kProbFloor);
  }
  return r;
}

ObjectiveReport jsd_full(const Logits& z_student, const Distribution& p_teacher, double beta) {
  check_sizes(z_student, p_teacher);
  if (!(beta > 0.0 && beta < 1.0)) throw ArgumentError("jsd beta must lie in (0, 1)");
  const Distribution p = softmax(z_student);
  ObjectiveReport r;
  r.coeff.resize(p.size());
  for (std::size_t v = 0; v < p.size(); ++v) {
    const double q = p_teacher[v];
    const double m = beta * p[v] + (1.0 - beta) * q;
    if (p[v] > 0.0) r.loss += beta * p[v] * log_ratio(p[v], m);
    if (q > 0.0) r.loss += (1.0 - beta) * q * log_ratio(q, m);
    // dL/dp_v collapses to beta * log(p_v / m_v); the +beta terms cancel.
    r.coeff[v] = beta * log_ratio(p[v], m);
  }
  r.loss = std::max(r.loss, 0.0);
  r.grad = through_softmax(p, r.coeff);
  return r;
}

ObjectiveReport reverse_kl_topk_unnorm(const Logits& z_student, const Distribution& p_teacher,
                                       const std::vector<TokenId>& support) {
  check_sizes(z_student, p_teacher);
  check_support(support, p_teacher.size());
  if (support.empty()) return skipped_report(p_teacher.size());
  const Distribution p = softmax(z_student);
  ObjectiveReport r;
  r.coeff.assign(p.size(), 0.0);
  for (TokenId t : support) {
    const auto v = static_cast<std::size_t>(t);
    const double w = log_ratio(p[v], p_teacher[v]);
    r.loss += p[v] * w;
    r.coeff[v] = w + 1.0;
  }
  r.grad = through_softmax(p, r.coeff);
  return r;
}

ObjectiveReport reverse_kl_topk_stopgrad(const Logits& z_student, const Distribution& p_teacher,
                                         const std::vector<TokenId>& support) {
  check_sizes(z_student, p_teacher);
  check_support(support, p_teacher.size());
  if (support.empty()) return skipped_report(p_teacher.size());
  const Distribution p = softmax(z_student);
  ObjectiveReport r;
  r.coeff.assign(p.size(), 0.0);
  for (TokenId t : support) {
    const auto v = static_cast<std::size_t>(t);
    const double advantage = safe_log(p_teacher[v]) - safe_log(p[v]);
    r.loss -= p[v] * advantage;
    r.coeff[v] = -advantage;
  }
  r.grad = through_softmax(p, r.coeff);
  return r;
}

ObjectiveReport reverse_kl_topk_renorm(const Logits& z_student, const Distribution& p_teacher,
                                       const std::vector<TokenId>& support) {
  check_sizes(z_student, p_teacher);
  check_support(support, p_teacher.size());
  if (support.empty()) return skipped_report(p_teacher.size());
  const Distribution p = softmax(z_student);
  double mass_s = 0.0, mass_t = 0.0;
  for (TokenId t : support) {
    mass_s += p[static_cast<std::size_t>(t)];
    mass_t += p_teacher[static_cast<std::size_t>(t)];
  }
  if (mass_t < 1e-9)
    throw DegenerateSupportError("teacher mass on support is " + std::to_string(mass_t));
  if (mass_s < kProbFloor)
    throw DegenerateSupportError("student mass on support is " + std::to_string(mass_s));

  const std::size_t n = p.size();
  std::vector<double> pbar(n, 0.0);
  ObjectiveReport r;
  r.coeff.assign(n, 0.0);
  double mean = 0.0;
  for (TokenId t : support) {
    const auto v = static_cast<std::size_t>(t);
    pbar[v] = p[v] / mass_s;
    r.coeff[v] = log_ratio(pbar[v], p_teacher[v] / mass_t);
    r.loss += pbar[v] * r.coeff[v];
    mean += pbar[v] * r.coeff[v];
  }
  // The renormalized student is the softmax restricted to the support.
  r.grad.assign(n, 0.0);
  for (TokenId t : support) {
    const auto v = static_cast<std::size_t>(t);
    r.grad[v] = pbar[v] * (r.coeff[v] - mean);
  }
  r.loss = std::max(r.loss, 0.0);
  return r;
}

ObjectiveReport reverse_kl_topk_tail(const Logits& z_student, const Distribution& p_teacher,
                                     const std::vector<TokenId>& support) {
  check_sizes(z_student, p_teacher);
  check_support(support, p_teacher.size());
  if (support.empty()) return skipped_report(p_teacher.size());
  const Distribution p = softmax(z_student);
  const std::size_t n = p.size();
  std::vector<char> in_support(n, 0);
  for (TokenId t : support) in_support[static_cast<std::size_t>(t)] = 1;

  double tail_s = 0.0, tail_t = 0.0;
  for (std::size_t v = 0; v < n; ++v)
    if (!in_support[v]) {
      tail_s += p[v];
      tail_t += p_teacher[v];
    }
  ObjectiveReport r;
  r.coeff.assign(n, 0.0);
  const double tail_w = log_ratio(tail_s, tail_t);
  for (std::size_t v = 0; v < n; ++v) {
    if (in_support[v]) {
      r.coeff[v] = log_ratio(p[v], p_teacher[v]);
      r.loss += p[v] * r.coeff[v];
    } else {
      r.coeff[v] = tail_w;
    }
  }
  if (tail_s > 0.0) r.loss += tail_s * tail_w;
  r.grad = through_softmax(p, r.coeff);
  return r;
}

std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::k1: return "k1";
    case Estimator::k2: return "k2";
    case Estimator::k3: return "k3";
  }
  return "?";
}

double sampled_estimator(double l_teacher, double l_student, Estimator kind) {
  const double a = l_teacher - l_student;
  switch (kind) {
    case Estimator::k1: return -a;
    case Estimator::k2: return 0.5 * a * a;
    case Estimator::k3: return std::expm1(a) - a;
  }
  return 0.0;
}

GradMap pg_sampled_grad(const Policy& policy, const Trajectory& traj, bool include_minus_one) {
  if (!traj.teacher_logprobs || traj.teacher_logprobs->size() != traj.length())
    throw ArgumentError("pg_sampled_grad: trajectory lacks teacher logprobs");
  GradMap out;
  for (std::size_t t = 0; t < traj.length(); ++t) {
    double a = (*traj.teacher_logprobs)[t] - traj.student_logprobs[t];
    if (include_minus_one) a -= 1.0;
    const ContextKey key = policy.context(traj.prompt, traj.prefix(t));
    accumulate(out, key, grad_logprob(policy, key, traj.tokens[t]), -a);
  }
  return out;
}

std::string_view to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::reverse_kl_full: return "reverse_kl_full";
    case ObjectiveKind::forward_kl_full: return "forward_kl_full";
    case ObjectiveKind::jsd_full: return "jsd_full";
    case ObjectiveKind::reverse_kl_topk_unnorm: return "reverse_kl_topk_unnorm";
    case ObjectiveKind::reverse_kl_topk_stopgrad: return "reverse_kl_topk_stopgrad";
    case ObjectiveKind::reverse_kl_topk_renorm: return "reverse_kl_topk_renorm";
    case ObjectiveKind::reverse_kl_topk_tail: return "reverse_kl_topk_tail";
    case ObjectiveKind::sampled_token: return "sampled_token";
  }
  return "?";
}

ObjectiveKind parse_objective_kind(std::string_view name) {
  for (auto k : vocabulary_objectives())
    if (to_string(k) == name) return k;
  if (name == "sampled_token") return ObjectiveKind::sampled_token;
  throw ArgumentError("unknown objective '" + std::string(name) + "'");
}

const std::vector<ObjectiveKind>& vocabulary_objectives() {
  static const std::vector<ObjectiveKind> all = {
      ObjectiveKind::reverse_kl_full,          ObjectiveKind::forward_kl_full,
      ObjectiveKind::jsd_full,                 ObjectiveKind::reverse_kl_topk_unnorm,
      ObjectiveKind::reverse_kl_topk_stopgrad, ObjectiveKind::reverse_kl_topk_renorm,
      ObjectiveKind::reverse_kl_topk_tail,
  };
  return all;
}

ObjectiveReport evaluate(const ObjectiveSpec& spec, const Logits& z_student,
                         const Distribution& p_teacher) {
  switch (spec.kind) {
    case ObjectiveKind::reverse_kl_full: return reverse_kl_full(z_student, p_teacher);
    case ObjectiveKind::forward_kl_full: return forward_kl_full(z_student, p_teacher);
    case ObjectiveKind::jsd_full: return jsd_full(z_student, p_teacher, spec.jsd_beta);
    case ObjectiveKind::sampled_token:
      throw ArgumentError("sampled_token is not a vocabulary-level objective");
    default: break;
  }
  const auto support = select_support(spec.selector, softmax(z_student), p_teacher);
  switch (spec.kind) {
    case ObjectiveKind::reverse_kl_topk_unnorm:
      return reverse_kl_topk_unnorm(z_student, p_teacher, support);
    case ObjectiveKind::reverse_kl_topk_stopgrad:
      return reverse_kl_topk_stopgrad(z_student, p_teacher, support);
    case ObjectiveKind::reverse_kl_topk_renorm:
      return reverse_kl_topk_renorm(z_student, p_teacher, support);
    case ObjectiveKind::reverse_kl_topk_tail:
      return reverse_kl_topk_tail(z_student, p_teacher, support);
    default: break;
  }
  throw ArgumentError("unhandled objective");
}

}  // namespace opdlab::objectives
