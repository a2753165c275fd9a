// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace opdlab {

using TokenId = std::int32_t;

/// Floor applied inside every logarithm.
inline constexpr double kProbFloor = 1e-12;

struct InvalidLogitsError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Token ids are 0..size-1. The last id is always end-of-sequence.
class Vocab {
 public:
  explicit Vocab(std::size_t size, std::vector<std::string> names = {});

  std::size_t size() const { return size_; }
  TokenId eos() const { return static_cast<TokenId>(size_ - 1); }
  bool contains(TokenId t) const {
    return t >= 0 && static_cast<std::size_t>(t) < size_;
  }
  /// Display name, or the decimal id when no names were given.
  std::string name(TokenId t) const;

  friend bool operator==(const Vocab&, const Vocab&) = default;

 private:
  std::size_t size_;
  std::vector<std::string> names_;
};

/// A normalized probability vector.
class Distribution {
 public:
  Distribution() = default;
  /// Validates non-negativity and unit mass (1e-9).
  explicit Distribution(std::vector<double> probs);

  static Distribution uniform(std::size_t n);
  static Distribution one_hot(std::size_t n, TokenId t);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }

  /// Clamp every entry to at least kProbFloor and renormalize.
  Distribution floored() const;

  friend bool operator==(const Distribution&, const Distribution&) = default;

 private:
  struct Unchecked {};
  Distribution(std::vector<double> probs, Unchecked) : probs_(std::move(probs)) {}
  friend Distribution softmax(std::span<const double>);
  friend Distribution softmax(std::span<const double>, double);

  std::vector<double> probs_;
};

/// Finite logit vector.
class Logits {
 public:
  Logits() = default;
  explicit Logits(std::vector<double> values);
  static Logits zeros(std::size_t n) { return Logits(std::vector<double>(n, 0.0)); }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& mutable_values() { return values_; }

  friend bool operator==(const Logits&, const Logits&) = default;

 private:
  std::vector<double> values_;
};

/// (token, probability) pairs in descending probability, ties by ascending id.
struct TopKSet {
  std::vector<std::pair<TokenId, double>> entries;
  std::size_t k = 0;

  std::vector<TokenId> tokens() const;
  bool contains(TokenId t) const;
};

double safe_log(double p);

/// Max-subtracted softmax. Throws InvalidLogitsError on non-finite input.
Distribution softmax(std::span<const double> logits);
inline Distribution softmax(const Logits& z) { return softmax(z.values()); }
/// softmax(logits / temperature).
Distribution softmax(std::span<const double> logits, double temperature);

/// Throws ArgumentError unless 1 <= k <= dist.size().
TopKSet topk(const Distribution& dist, std::size_t k);

/// Entropy in nats using floored probabilities.
double entropy(const Distribution& dist);

/// Total variation distance.
double total_variation(const Distribution& a, const Distribution& b);

/// Distribution over token ids sorted by descending probability, ties by id.
std::vector<TokenId> rank_order(const Distribution& dist);

}  // namespace opdlab
