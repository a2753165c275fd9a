// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "opdlab/corelang.hpp"
#include "opdlab/numfmt.hpp"
#include "opdlab/rng.hpp"

using namespace opdlab;

namespace {

std::vector<double> random_logits(Rng& rng, std::size_t n, double scale = 5.0) {
  std::vector<double> z(n);
  for (auto& x : z) x = scale * (2.0 * rng.uniform01() - 1.0);
  return z;
}

}  // namespace

TEST(Vocab, EosIsLastId) {
  Vocab v(5);
  EXPECT_EQ(v.eos(), 4);
  EXPECT_TRUE(v.contains(0));
  EXPECT_FALSE(v.contains(5));
  EXPECT_FALSE(v.contains(-1));
  EXPECT_EQ(v.name(3), "3");
  EXPECT_THROW(Vocab(1), ArgumentError);
}

TEST(Softmax, UniformFromEqualLogits) {
  const auto d = softmax(std::vector<double>{0, 0, 0});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(d[i], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LogTwoGivesTwoThirds) {
  const auto d = softmax(std::vector<double>{std::log(2.0), 0.0});
  EXPECT_NEAR(d[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(d[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const auto d = softmax(std::vector<double>{1000.0, 0.0});
  EXPECT_NEAR(d[0], 1.0, 1e-15);
  EXPECT_GE(d[1], 0.0);
  EXPECT_LT(d[1], 1e-300);
}

TEST(Softmax, NonFiniteIsRejected) {
  EXPECT_THROW(softmax(std::vector<double>{0.0, std::numeric_limits<double>::infinity()}), InvalidLogitsError);
  EXPECT_THROW(softmax(std::vector<double>{std::nan("")}), InvalidLogitsError);
  EXPECT_THROW(Logits({1.0, std::nan("")}), InvalidLogitsError);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const auto z = random_logits(rng, 2 + rng.below(30));
    const double c = 40.0 * (rng.uniform01() - 0.5);
    auto zc = z;
    for (auto& x : zc) x += c;
    const auto a = softmax(z), b = softmax(zc);
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      EXPECT_NEAR(a[k], b[k], 1e-12);
      sum += a[k];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Softmax, TemperatureDividesLogits) {
  const std::vector<double> z{1.0, 2.0, -0.5};
  const auto a = softmax(z, 0.5);
  const auto b = softmax(std::vector<double>{2.0, 4.0, -1.0});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a[k], b[k], 1e-15);
  EXPECT_THROW(softmax(z, 0.0), ArgumentError);
}

TEST(Distribution, ValidatesMassAndSign) {
  EXPECT_THROW(Distribution({0.5, 0.6}), ArgumentError);
  EXPECT_THROW(Distribution({1.5, -0.5}), ArgumentError);
  EXPECT_NO_THROW(Distribution({0.25, 0.75}));
}

TEST(Distribution, FlooredKeepsMassAndFloor) {
  const auto d = Distribution::one_hot(4, 2).floored();
  double sum = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_GE(d[k], kProbFloor * 0.999);
    sum += d[k];
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(TopK, DescendingOrder) {
  const auto s = topk(Distribution({0.5, 0.3, 0.2}), 2);
  ASSERT_EQ(s.entries.size(), 2u);
  EXPECT_EQ(s.entries[0], (std::pair<TokenId, double>{0, 0.5}));
  EXPECT_EQ(s.entries[1], (std::pair<TokenId, double>{1, 0.3}));
}

TEST(TopK, TiesBreakTowardLowerId) {
  const auto s = topk(Distribution::uniform(4), 2);
  EXPECT_EQ(s.tokens(), (std::vector<TokenId>{0, 1}));
}

TEST(TopK, FullSupportDescending) {
  const auto s = topk(Distribution({0.1, 0.6, 0.3}), 3);
  EXPECT_EQ(s.tokens(), (std::vector<TokenId>{1, 2, 0}));
  EXPECT_TRUE(s.contains(0));
}

TEST(TopK, OutOfRangeK) {
  EXPECT_THROW(topk(Distribution::uniform(3), 0), ArgumentError);
  EXPECT_THROW(topk(Distribution::uniform(3), 4), ArgumentError);
}

TEST(TopK, PropertyOrderedUniqueAndStable) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.below(20);
    // coarse logits produce plenty of ties
    std::vector<double> z(n);
    for (auto& x : z) x = static_cast<double>(rng.below(4));
    const auto d = softmax(z);
    const std::size_t k = 1 + rng.below(n);
    const auto s = topk(d, k);
    ASSERT_EQ(s.entries.size(), k);
    for (std::size_t j = 1; j < k; ++j) {
      const auto& [ta, pa] = s.entries[j - 1];
      const auto& [tb, pb] = s.entries[j];
      EXPECT_TRUE(pa > pb || (pa == pb && ta < tb));
    }
    EXPECT_EQ(topk(d, k).entries, s.entries);
    // every excluded token is no better than the last kept one
    for (std::size_t v = 0; v < n; ++v)
      if (!s.contains(static_cast<TokenId>(v))) EXPECT_LE(d[v], s.entries.back().second);
  }
}

TEST(Entropy, Examples) {
  EXPECT_NEAR(entropy(Distribution({1.0 - 1e-12, 1e-12})), 0.0, 1e-9);
  EXPECT_NEAR(entropy(Distribution({0.5, 0.5})), std::log(2.0), 1e-12);
  EXPECT_NEAR(entropy(Distribution::uniform(4)), std::log(4.0), 1e-12);
}

TEST(Entropy, BoundedByLogVocab) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.below(20);
    const auto h = entropy(softmax(random_logits(rng, n)));
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST(TotalVariation, HalfL1) {
  EXPECT_NEAR(total_variation(Distribution({1, 0}), Distribution({0, 1})), 1.0, 1e-15);
  EXPECT_NEAR(total_variation(Distribution({0.5, 0.5}), Distribution({0.75, 0.25})), 0.25, 1e-15);
}

TEST(SafeLog, FloorsZero) {
  EXPECT_DOUBLE_EQ(safe_log(0.0), std::log(kProbFloor));
  EXPECT_DOUBLE_EQ(safe_log(0.5), std::log(0.5));
}

TEST(NumFmt, ShortestRoundTrip) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double x = std::ldexp(rng.uniform01() - 0.5, static_cast<int>(rng.below(200)) - 100);
    EXPECT_EQ(parse_double(format_double(x)), x);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_THROW(parse_double("1.5x"), std::invalid_argument);
}

TEST(Rng, StreamSeedsAreDistinctAndStable) {
  EXPECT_EQ(stream_seed(1, 2, 3), stream_seed(1, 2, 3));
  EXPECT_NE(stream_seed(1, 2, 3), stream_seed(1, 2, 4));
  EXPECT_NE(stream_seed(1, 2, 3), stream_seed(1, 3, 3));
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, CategoricalSkipsZeroMass) {
  Rng rng(10);
  const std::vector<double> p{0.0, 1.0, 0.0};
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(rng.categorical(p), 1u);
}
