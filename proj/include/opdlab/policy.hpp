// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opdlab/corelang.hpp"

namespace opdlab {

/// Padding id for context windows; never a valid token.
inline constexpr TokenId kPadId = -1;

/// (prompt, last-m prefix tokens). Windows are left-padded with kPadId.
struct ContextKey {
  std::int64_t prompt = 0;
  std::vector<TokenId> window;

  friend auto operator<=>(const ContextKey&, const ContextKey&) = default;
  friend bool operator==(const ContextKey&, const ContextKey&) = default;
};

std::string to_string(const ContextKey& key);

/// Sparse per-context gradient (or update) vectors over logits.
using GradMap = std::map<ContextKey, std::vector<double>>;

/// Tabular softmax sequence policy. Unseen contexts carry all-zero logits.
class Policy {
 public:
  explicit Policy(Vocab vocab, std::size_t order = 4);

  const Vocab& vocab() const { return vocab_; }
  std::size_t order() const { return order_; }

  /// Student-side key: the last `order` tokens of `prefix`.
  ContextKey context(std::int64_t prompt, std::span<const TokenId> prefix) const;

  Logits logits_at(const ContextKey& key) const;
  void set_logits(const ContextKey& key, Logits logits);
  const std::map<ContextKey, Logits>& table() const { return table_; }

  friend bool operator==(const Policy&, const Policy&) = default;

 private:
  void check_key(const ContextKey& key) const;

  Vocab vocab_;
  std::size_t order_;
  std::map<ContextKey, Logits> table_;
};

/// Rolled-out response with per-position log-probabilities (nats, temperature 1).
struct Trajectory {
  std::int64_t prompt = 0;
  std::vector<TokenId> tokens;
  std::vector<double> student_logprobs;
  std::optional<std::vector<double>> teacher_logprobs;
  bool truncated = false;

  std::size_t length() const { return tokens.size(); }
  std::span<const TokenId> prefix(std::size_t t) const { return {tokens.data(), t}; }
};

Distribution dist_at(const Policy& policy, const ContextKey& key);

/// d log p(token) / d logits = one_hot(token) - p.
std::vector<double> grad_logprob(const Policy& policy, const ContextKey& key, TokenId token);

/// Autoregressive sampling at `temperature`; deterministic in `seed`.
Trajectory sample_trajectory(const Policy& policy, std::int64_t prompt, std::size_t max_length,
                             std::uint64_t seed, double temperature = 1.0);

/// Argmax decoding, ties toward the lower token id.
Trajectory greedy_trajectory(const Policy& policy, std::int64_t prompt, std::size_t max_length);

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

/// Per-context Adam moments. Contexts absent from a step's gradient are not touched.
struct OptimizerState {
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t steps = 0;
  };
  OptimizerConfig config;
  std::map<ContextKey, Slot> slots;

  explicit OptimizerState(OptimizerConfig cfg = {}) : config(cfg) {}
};

struct UpdateResult {
  Policy policy;
  OptimizerState state;
};

/// Descends along `grads`. Pure: inputs are not modified.
UpdateResult apply_update(const Policy& policy, const GradMap& grads, OptimizerState state,
                          double learning_rate);
/// Same update applied to `policy` and `state` directly; used by the single trainer writer.
void apply_update_in_place(Policy& policy, const GradMap& grads, OptimizerState& state, double learning_rate);

/// Accumulates `scale * g` into `into[key]`.
void accumulate(GradMap& into, const ContextKey& key, std::span<const double> g, double scale = 1.0);
void accumulate(GradMap& into, const GradMap& from, double scale = 1.0);
double grad_norm(const GradMap& grads);

/// Versioned text table; doubles are written in shortest round-trip form.
void save_policy(const Policy& policy, std::ostream& out);
Policy load_policy(std::istream& in);
void save_policy_file(const Policy& policy, const std::string& path);
Policy load_policy_file(const std::string& path);

}  // namespace opdlab
