// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <numeric>

#include "opdlab/metrics.hpp"
#include "opdlab/rng.hpp"

using namespace opdlab;
using namespace opdlab::metrics;

TEST(Repetition, AllDistinctIsZero) {
  const std::vector<TokenId> t{0, 1, 2, 3, 4, 5, 6};
  const auto r = repetition_flags(t);
  EXPECT_EQ(r.ratio, 0.0);
  for (int f : r.flags) EXPECT_EQ(f, 0);
}

TEST(Repetition, SingleTokenTenTimes) {
  const std::vector<TokenId> t(10, 4);
  const auto r = repetition_flags(t, 3);
  EXPECT_EQ(r.flags, (std::vector<int>{0, 0, 0, 1, 1, 1, 1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(r.ratio, 7.0 / 10.0);
}

TEST(Repetition, TripleRepeatedThreeTimes) {
  const std::vector<TokenId> t{0, 1, 2, 0, 1, 2, 0, 1, 2};
  const auto r = repetition_flags(t, 3);
  EXPECT_DOUBLE_EQ(r.ratio, 4.0 / 9.0);
  EXPECT_EQ(r.flags, (std::vector<int>{0, 0, 0, 0, 0, 1, 1, 1, 1}));
}

TEST(Repetition, EmptyAndShort) {
  EXPECT_EQ(repetition_flags(std::vector<TokenId>{}).ratio, 0.0);
  EXPECT_EQ(repetition_flags(std::vector<TokenId>{1, 1}).ratio, 0.0);
}

namespace {

// brute-force scan over every earlier window
std::vector<int> naive_flags(const std::vector<TokenId>& t, std::size_t n) {
  std::vector<int> out(t.size(), 0);
  for (std::size_t i = n - 1; i < t.size(); ++i)
    for (std::size_t j = n - 1; j < i && !out[i]; ++j)
      if (std::equal(t.begin() + static_cast<long>(i + 1 - n), t.begin() + static_cast<long>(i + 1),
                     t.begin() + static_cast<long>(j + 1 - n)))
        out[i] = 1;
  return out;
}

}  // namespace

TEST(Repetition, MatchesBruteForceAndIsRelabelInvariant) {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const std::size_t len = rng.below(40), vocab = 2 + rng.below(4), n = 1 + rng.below(4);
    std::vector<TokenId> t(len);
    for (auto& x : t) x = static_cast<TokenId>(rng.below(vocab));
    const auto r = repetition_flags(t, n);
    EXPECT_EQ(r.flags, naive_flags(t, n));
    std::vector<TokenId> perm(vocab);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t k = vocab; k > 1; --k) std::swap(perm[k - 1], perm[rng.below(k)]);
    auto relabeled = t;
    for (auto& x : relabeled) x = perm[static_cast<std::size_t>(x)] + 100;
    EXPECT_EQ(repetition_flags(relabeled, n).ratio, r.ratio);
  }
}

TEST(Overlap, Examples) {
  const Distribution a({0.4, 0.3, 0.2, 0.1}), b({0.1, 0.2, 0.3, 0.4});
  EXPECT_EQ(topk_overlap(a, a, 2), 1.0);
  EXPECT_EQ(topk_overlap(a, b, 2), 0.0);
  EXPECT_EQ(topk_overlap(a, b, 3), 2.0 / 3.0);
  EXPECT_EQ(default_overlap_k(20), 20u);
  EXPECT_EQ(default_overlap_k(100), 50u);
}

TEST(Overlap, SymmetricUnderSharedTieBreak) {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = 2 + rng.below(12);
    std::vector<double> za(n), zb(n);
    for (auto& x : za) x = static_cast<double>(rng.below(3));
    for (auto& x : zb) x = static_cast<double>(rng.below(3));
    const auto a = softmax(za), b = softmax(zb);
    const std::size_t k = 1 + rng.below(n);
    const double o = topk_overlap(a, b, k);
    EXPECT_EQ(o, topk_overlap(b, a, k));
    EXPECT_GE(o, 0.0);
    EXPECT_LE(o, 1.0);
  }
}

TEST(RankAtK, Examples) {
  const Distribution t({0.5, 0.3, 0.2});
  EXPECT_EQ(rank_at_k(t, 0, 2), 1u);
  EXPECT_EQ(rank_at_k(t, 1, 2), 2u);
  EXPECT_EQ(rank_at_k(t, 2, 2), 3u);
}

namespace {

std::vector<TokenDiagnostics> stream(const std::vector<int>& rep, const std::vector<double>& dl) {
  std::vector<TokenDiagnostics> out;
  for (std::size_t i = 0; i < rep.size(); ++i) out.push_back({rep[i], dl[i], 0.0, 0.0, 0.0});
  return out;
}

}  // namespace

TEST(Conditional, HandComputed) {
  const auto d = stream({1, 0, 1, 0, 1, 0}, {3.0, 1.0, 4.0, 5.0, 4.0, 4.0});
  const auto c = conditional_averages(d, Quantity::dlogprob);
  EXPECT_DOUBLE_EQ(*c.repetitive, 11.0 / 3.0);
  EXPECT_DOUBLE_EQ(*c.other, 10.0 / 3.0);
  EXPECT_EQ(c.n_repetitive, 3u);
  EXPECT_EQ(c.n_other, 3u);
}

TEST(Conditional, EmptyPartitions) {
  const auto none = conditional_averages(stream({0, 0}, {1.0, 2.0}), Quantity::dlogprob);
  EXPECT_FALSE(none.repetitive.has_value());
  EXPECT_DOUBLE_EQ(*none.other, 1.5);
  const auto all = conditional_averages(stream({1, 1}, {1.0, 2.0}), Quantity::dlogprob);
  EXPECT_FALSE(all.other.has_value());
  EXPECT_DOUBLE_EQ(*all.repetitive, 1.5);
  const auto empty = conditional_averages(std::vector<TokenDiagnostics>{}, Quantity::rank);
  EXPECT_FALSE(empty.repetitive.has_value());
  EXPECT_FALSE(empty.other.has_value());
}

TEST(Conditional, SelectsQuantity) {
  std::vector<TokenDiagnostics> d{{1, 1.0, 0.5, 2.0, 0.7}, {0, 2.0, 0.25, 4.0, 0.1}};
  EXPECT_DOUBLE_EQ(*conditional_averages(d, Quantity::overlap).repetitive, 0.5);
  EXPECT_DOUBLE_EQ(*conditional_averages(d, Quantity::rank).other, 4.0);
  EXPECT_DOUBLE_EQ(*conditional_averages(d, Quantity::entropy).repetitive, 0.7);
}

TEST(Conditional, WeightedMeansRecoverGlobalMean) {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = 2 + rng.below(50);
    std::vector<int> rep(n);
    std::vector<double> dl(n);
    // small integers keep every sum exact
    for (std::size_t k = 0; k < n; ++k) {
      rep[k] = static_cast<int>(rng.below(2));
      dl[k] = static_cast<double>(rng.below(17)) - 8.0;
    }
    rep[0] = 1;
    rep[1] = 0;
    const auto c = conditional_averages(stream(rep, dl), Quantity::dlogprob);
    const double total = std::accumulate(dl.begin(), dl.end(), 0.0);
    EXPECT_NEAR(static_cast<double>(c.n_repetitive) * *c.repetitive + static_cast<double>(c.n_other) * *c.other,
                total, 1e-12);
  }
}

TEST(Pearson, Examples) {
  const std::vector<double> x{1.0, 2.0, 3.0, 4.5}, neg{-1.0, -2.0, -3.0, -4.5};
  EXPECT_NEAR(*pearson(x, x), 1.0, 1e-15);
  EXPECT_NEAR(*pearson(x, neg), -1.0, 1e-15);
  EXPECT_FALSE(pearson(x, std::vector<double>(4, 2.0)).has_value());
  EXPECT_FALSE(pearson(std::vector<double>{1.0}, std::vector<double>{2.0}).has_value());
}

TEST(Pearson, IndependentStreamsNearZero) {
  Rng a(4), b(5);
  std::vector<double> x(10000), y(10000);
  for (auto& v : x) v = a.uniform01();
  for (auto& v : y) v = b.uniform01();
  EXPECT_LT(std::abs(*pearson(x, y)), 0.05);
}
