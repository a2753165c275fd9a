// SPDX-License-Identifier: Apache-2.0
#include "opdlab/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "opdlab/config.hpp"

namespace opdlab {

Teacher Teacher::frozen(Policy snapshot) { return Teacher{FrozenTeacher{std::move(snapshot)}}; }

Teacher Teacher::ema(Policy initial, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConstructionError("ema alpha must lie in [0, 1)");
  return Teacher{EmaTeacher{std::move(initial), alpha}};
}

Teacher Teacher::self_ref() { return Teacher{SelfTeacher{}}; }

Teacher Teacher::oracle(std::shared_ptr<const TaskFamily> family, double temperature) {
  if (!family) throw ConstructionError("oracle teacher needs a task family");
  if (!(temperature > 0.0)) throw ConstructionError("oracle temperature must be positive");
  return Teacher{OracleTeacher{std::move(family), temperature}};
}

std::string Teacher::kind() const {
  static const char* names[] = {"frozen", "ema", "self", "oracle"};
  return names[construction.index()];
}

ContextKey teacher_context(const Policy& policy, std::int64_t prompt, const PrivilegedInfo& pi,
                           std::span<const TokenId> prefix) {
  const std::size_t m = policy.order();
  const std::size_t k = pi.tokens.size();
  if (k == 0 || m < k + 1) return policy.context(prompt, prefix);
  const auto layout = TaskLayout::from_vocab(policy.vocab());
  ContextKey key{prompt, std::vector<TokenId>(m, kPadId)};
  std::copy(pi.tokens.begin(), pi.tokens.end(), key.window.begin());
  key.window[k] = layout.pi_marker();
  const std::size_t slots = m - k - 1;
  const std::size_t n = std::min(slots, prefix.size());
  for (std::size_t i = 0; i < n; ++i) key.window[m - n + i] = prefix[prefix.size() - n + i];
  return key;
}

namespace {

Distribution oracle_dist(const OracleTeacher& o, std::int64_t prompt, const PrivilegedInfo& pi,
                         std::span<const TokenId> prefix) {
  const auto& layout = o.family->layout();
  const std::size_t n = layout.vocab_size();
  const auto cands = o.family->candidates(prompt, pi);
  if (cands.empty()) return Distribution::uniform(n);
  // softmax of a one-hot score at temperature tau, written to avoid overflow.
  const double off = std::exp(-1.0 / o.temperature);
  const double z = 1.0 + static_cast<double>(n - 1) * off;
  const double p_hit = 1.0 / z, p_miss = off / z;
  std::vector<double> mix(n, 0.0);
  const double w = 1.0 / static_cast<double>(cands.size());
  for (const TaskInstance* inst : cands) {
    const TokenId next = oracle_next_token(layout, inst->target, prefix);
    for (std::size_t v = 0; v < n; ++v) mix[v] += w * p_miss;
    mix[static_cast<std::size_t>(next)] += w * (p_hit - p_miss);
  }
  double sum = 0.0;
  for (double x : mix) sum += x;
  for (double& x : mix) x /= sum;
  return Distribution(std::move(mix)).floored();
}

}  // namespace

Distribution teacher_dist(const Teacher& teacher, const Policy* student, std::int64_t prompt,
                          const PrivilegedInfo& pi, std::span<const TokenId> prefix) {
  return std::visit(
      [&](const auto& c) -> Distribution {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, FrozenTeacher>) {
          return dist_at(c.snapshot, teacher_context(c.snapshot, prompt, pi, prefix));
        } else if constexpr (std::is_same_v<T, EmaTeacher>) {
          return dist_at(c.shadow, teacher_context(c.shadow, prompt, pi, prefix));
        } else if constexpr (std::is_same_v<T, SelfTeacher>) {
          if (!student) throw ConstructionError("self teacher evaluated without a student");
          return dist_at(*student, teacher_context(*student, prompt, pi, prefix));
        } else {
          return oracle_dist(c, prompt, pi, prefix);
        }
      },
      teacher.construction);
}

Teacher ema_update(const Teacher& teacher, const Policy& student) {
  const auto* ema = std::get_if<EmaTeacher>(&teacher.construction);
  if (!ema) throw ConstructionError("ema_update called on a " + teacher.kind() + " teacher");
  if (ema->shadow.vocab() != student.vocab() || ema->shadow.order() != student.order())
    throw ArgumentError("ema_update: teacher and student shapes differ");
  std::set<ContextKey> keys;
  for (const auto& [k, z] : ema->shadow.table()) keys.insert(k);
  for (const auto& [k, z] : student.table()) keys.insert(k);
  Policy next(ema->shadow.vocab(), ema->shadow.order());
  const double a = ema->alpha;
  for (const auto& key : keys) {
    const Logits t = ema->shadow.logits_at(key);
    const Logits s = student.logits_at(key);
    std::vector<double> z(t.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * t[i] + (1.0 - a) * s[i];
    next.set_logits(key, Logits(std::move(z)));
  }
  return Teacher{EmaTeacher{std::move(next), a}};
}

Distribution consensus_optimum(const std::vector<Distribution>& teachers,
                               const std::vector<double>& weights) {
  if (teachers.empty() || teachers.size() != weights.size())
    throw ArgumentError("consensus_optimum: need one weight per teacher");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ArgumentError("consensus_optimum: negative weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw ArgumentError("consensus_optimum: weights must sum to 1");
  const std::size_t n = teachers.front().size();
  std::vector<double> logmix(n, 0.0);
  for (std::size_t i = 0; i < teachers.size(); ++i) {
    if (teachers[i].size() != n) throw ArgumentError("consensus_optimum: size mismatch");
    for (std::size_t v = 0; v < n; ++v) logmix[v] += weights[i] * safe_log(teachers[i][v]);
  }
  return softmax(logmix);
}

void save_teacher(const Teacher& teacher, const std::string& path) {
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, FrozenTeacher>) {
          save_policy_file(c.snapshot, path);
        } else if constexpr (std::is_same_v<T, EmaTeacher>) {
          save_policy_file(c.shadow, path);
        } else if constexpr (std::is_same_v<T, SelfTeacher>) {
          throw ConstructionError("a self teacher has no snapshot of its own");
        } else {
          nlohmann::json j;
          j["teacher"] = "oracle";
          j["temperature"] = c.temperature;
          j["family"] = c.family->spec().to_json();
          std::ofstream out(path);
          if (!out) throw std::runtime_error("cannot write " + path);
          out << j.dump(2) << '\n';
        }
      },
      teacher.construction);
}

Teacher load_teacher(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  if (in.peek() == '{') {
    const auto j = read_json_file(path);
    ConfigNode node(j, "");
    if (node.string("teacher") != "oracle") node.fail("teacher", "expected 'oracle'");
    const double temperature = node.number("temperature");
    auto family = std::make_shared<const TaskFamily>(parse_family_spec(j.at("family"), "/family"));
    node.child("family");
    node.finish();
    return Teacher::oracle(std::move(family), temperature);
  }
  return Teacher::frozen(load_policy(in));
}

}  // namespace opdlab
