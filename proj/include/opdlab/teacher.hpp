// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "opdlab/corelang.hpp"
#include "opdlab/policy.hpp"
#include "opdlab/tasks.hpp"

namespace opdlab {

struct ConstructionError : std::logic_error {
  using std::logic_error::logic_error;
};

struct FrozenTeacher {
  Policy snapshot;
};

struct EmaTeacher {
  Policy shadow;
  double alpha = 0.9;
};

/// Reads the live student table.
struct SelfTeacher {};

/// Analytic teacher: a temperature softmax over "is this the correct next token"
/// scores, mixed uniformly over the instances consistent with prompt and PI.
struct OracleTeacher {
  std::shared_ptr<const TaskFamily> family;
  double temperature = 0.2;
};

struct Teacher {
  std::variant<FrozenTeacher, EmaTeacher, SelfTeacher, OracleTeacher> construction;

  static Teacher frozen(Policy snapshot);
  static Teacher ema(Policy initial, double alpha);
  static Teacher self_ref();
  static Teacher oracle(std::shared_ptr<const TaskFamily> family, double temperature);

  std::string kind() const;
};

/// Teacher-side key. With PI the window reads [pi..., marker, last (m-|pi|-1) prefix
/// tokens]; when m < |pi| + 1 the PI does not fit and the student key is returned.
ContextKey teacher_context(const Policy& policy, std::int64_t prompt, const PrivilegedInfo& pi,
                           std::span<const TokenId> prefix);

/// pi_T(. | prompt, prefix, PI). `student` backs SelfTeacher and may be null otherwise.
Distribution teacher_dist(const Teacher& teacher, const Policy* student, std::int64_t prompt,
                          const PrivilegedInfo& pi, std::span<const TokenId> prefix);

/// theta_bar <- alpha * theta_bar + (1 - alpha) * theta, per context, in logit space.
Teacher ema_update(const Teacher& teacher, const Policy& student);

/// Normalized weighted geometric mean: p*(y) ~ exp(sum_i w_i log p_i(y)).
Distribution consensus_optimum(const std::vector<Distribution>& teachers,
                               const std::vector<double>& weights);

/// Policy-backed teachers write the policy table format; oracles write JSON.
void save_teacher(const Teacher& teacher, const std::string& path);
Teacher load_teacher(const std::string& path);

}  // namespace opdlab
