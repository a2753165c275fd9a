// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "opdlab/corelang.hpp"
#include "opdlab/rng.hpp"

namespace opdlab {

/// Reserved ids sit at the top of the vocabulary:
/// [symbols..., pi_marker, answer_start, rule, eos].
struct TaskLayout {
  std::size_t symbols = 16;

  static constexpr std::size_t kReserved = 4;
  static TaskLayout from_vocab(const Vocab& vocab);

  std::size_t vocab_size() const { return symbols + kReserved; }
  Vocab vocab() const { return Vocab(vocab_size()); }
  TokenId pi_marker() const { return static_cast<TokenId>(symbols); }
  TokenId answer_start() const { return static_cast<TokenId>(symbols + 1); }
  TokenId rule_token() const { return static_cast<TokenId>(symbols + 2); }
  TokenId eos() const { return static_cast<TokenId>(symbols + 3); }
};

enum class PiKind { none, shared_rule, instance_answer, instance_response };
std::string_view to_string(PiKind kind);
PiKind parse_pi_kind(std::string_view name);

/// Tokens shown only to the teacher, in front of its context window.
struct PrivilegedInfo {
  PiKind kind = PiKind::none;
  std::vector<TokenId> tokens;

  friend bool operator==(const PrivilegedInfo&, const PrivilegedInfo&) = default;
};

struct TaskInstance {
  std::size_t instance_id = 0;
  /// What the student conditions on. Several instances may share one prompt.
  std::int64_t prompt_id = 0;
  std::vector<TokenId> input;
  std::vector<TokenId> target;
};

enum class FamilyKind { shared_rule, instance_answer };
std::string_view to_string(FamilyKind kind);

struct FamilySpec {
  FamilyKind kind = FamilyKind::shared_rule;
  std::size_t symbols = 16;
  std::uint64_t seed = 1;
  // shared-rule
  std::size_t num_prompts = 64;
  std::size_t min_input_length = 3;
  std::size_t max_input_length = 6;
  std::string rule = "shift";  // identity | shift | random | explicit
  std::int64_t shift = 1;
  std::vector<TokenId> permutation;  // rule == explicit
  // instance-answer
  std::size_t num_questions = 4;
  std::size_t num_answers = 4;

  nlohmann::json to_json() const;
};

FamilySpec parse_family_spec(const nlohmann::json& j, const std::string& path = "");
FamilySpec load_family_spec(const std::string& path);

/// Finite, immutable set of task instances.
class TaskFamily {
 public:
  explicit TaskFamily(FamilySpec spec);

  const FamilySpec& spec() const { return spec_; }
  const TaskLayout& layout() const { return layout_; }
  Vocab vocab() const { return layout_.vocab(); }
  const std::vector<TaskInstance>& instances() const { return instances_; }
  /// Symbol permutation (shared-rule) or the answer alphabet (instance-answer).
  const std::vector<TokenId>& rule() const { return rule_; }

  std::vector<std::int64_t> prompt_ids() const;
  PrivilegedInfo privileged_info(const TaskInstance& inst, PiKind kind) const;

  /// Instances consistent with the visible prompt and (unless empty) the PI.
  std::vector<const TaskInstance*> candidates(std::int64_t prompt_id,
                                              const PrivilegedInfo& pi) const;

  /// [answer_start, target..., eos]
  std::vector<TokenId> canonical_response(const TaskInstance& inst) const;

 private:
  FamilySpec spec_;
  TaskLayout layout_;
  std::vector<TokenId> rule_;
  std::vector<TaskInstance> instances_;
};

/// Uniform draw from the family's instances.
const TaskInstance& sample_instance(const TaskFamily& family, Rng& rng);

/// 1 iff the tokens between the first answer_start and the following eos equal the target.
int reward(const TaskLayout& layout, const TaskInstance& inst, std::span<const TokenId> response);

/// The token a perfect solver emits after `prefix`: answer_start until one has been
/// emitted, then the remaining target, then eos (also once the answer has diverged).
TokenId oracle_next_token(const TaskLayout& layout, std::span<const TokenId> target,
                          std::span<const TokenId> prefix);

}  // namespace opdlab
