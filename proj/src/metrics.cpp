// SPDX-License-Identifier: Apache-2.0
#include "opdlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace opdlab::metrics {

std::size_t default_overlap_k(std::size_t vocab_size) {
  return std::min(kDefaultOverlapK, vocab_size);
}

RepetitionResult repetition_flags(std::span<const TokenId> tokens, std::size_t n) {
  if (n < 1) throw ArgumentError("n-gram size must be at least 1");
  RepetitionResult out;
  out.flags.assign(tokens.size(), 0);
  std::set<std::vector<TokenId>> seen;
  std::size_t hits = 0;
  for (std::size_t t = n - 1; t < tokens.size(); ++t) {
    std::vector<TokenId> gram(tokens.begin() + static_cast<std::ptrdiff_t>(t + 1 - n),
                              tokens.begin() + static_cast<std::ptrdiff_t>(t + 1));
    if (!seen.insert(std::move(gram)).second) {
      out.flags[t] = 1;
      ++hits;
    }
  }
  if (!tokens.empty()) out.ratio = static_cast<double>(hits) / static_cast<double>(tokens.size());
  return out;
}

double topk_overlap(const Distribution& p_student, const Distribution& p_teacher, std::size_t k) {
  if (p_student.size() != p_teacher.size()) throw ArgumentError("topk_overlap: size mismatch");
  const auto a = topk(p_teacher, k).tokens();
  const auto b = topk(p_student, k);
  std::size_t common = 0;
  for (TokenId t : a)
    if (b.contains(t)) ++common;
  return static_cast<double>(common) / static_cast<double>(k);
}

std::size_t rank_at_k(const Distribution& p_teacher, TokenId token, std::size_t k) {
  if (token < 0 || static_cast<std::size_t>(token) >= p_teacher.size())
    throw ArgumentError("rank_at_k: token out of range");
  const auto top = topk(p_teacher, k);
  for (std::size_t i = 0; i < top.entries.size(); ++i)
    if (top.entries[i].first == token) return i + 1;
  return k + 1;
}

ConditionalAverages conditional_averages(std::span<const TokenDiagnostics> diags, Quantity q) {
  auto pick = [q](const TokenDiagnostics& d) {
    switch (q) {
      case Quantity::dlogprob: return d.dlogprob;
      case Quantity::overlap: return d.overlap;
      case Quantity::rank: return d.rank;
      case Quantity::entropy: return d.entropy;
    }
    return 0.0;
  };
  double sum_rep = 0.0, sum_other = 0.0;
  ConditionalAverages out;
  for (const auto& d : diags) {
    if (d.repetitive) {
      sum_rep += pick(d);
      ++out.n_repetitive;
    } else {
      sum_other += pick(d);
      ++out.n_other;
    }
  }
  if (out.n_repetitive) out.repetitive = sum_rep / static_cast<double>(out.n_repetitive);
  if (out.n_other) out.other = sum_other / static_cast<double>(out.n_other);
  return out;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace opdlab::metrics
