// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "opdlab/corelang.hpp"

namespace opdlab::metrics {

inline constexpr std::size_t kDefaultNgram = 3;
inline constexpr std::size_t kDefaultOverlapK = 50;

/// min(50, vocab size)
std::size_t default_overlap_k(std::size_t vocab_size);

struct RepetitionResult {
  std::vector<int> flags;
  double ratio = 0.0;  // 0 for an empty sequence
};

/// r_t = 1 iff the n-gram ending at t occurred earlier in the sequence. t < n-1 is never flagged.
RepetitionResult repetition_flags(std::span<const TokenId> tokens, std::size_t n = kDefaultNgram);

/// |TopK_T & TopK_S| / K
double topk_overlap(const Distribution& p_student, const Distribution& p_teacher, std::size_t k);

/// 1-based teacher rank of `token` if inside the teacher TopK, else K + 1.
std::size_t rank_at_k(const Distribution& p_teacher, TokenId token, std::size_t k);

/// One position of a response.
struct TokenDiagnostics {
  int repetitive = 0;
  double dlogprob = 0.0;  // l_T - l_S
  double overlap = 0.0;
  double rank = 0.0;
  double entropy = 0.0;
};

enum class Quantity { dlogprob, overlap, rank, entropy };

/// Empty partitions yield std::nullopt (the undefined marker).
struct ConditionalAverages {
  std::optional<double> repetitive;
  std::optional<double> other;
  std::size_t n_repetitive = 0;
  std::size_t n_other = 0;
};

ConditionalAverages conditional_averages(std::span<const TokenDiagnostics> diags, Quantity q);

/// Pearson correlation; nullopt for fewer than two points or zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

}  // namespace opdlab::metrics
