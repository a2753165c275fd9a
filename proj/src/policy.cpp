// SPDX-License-Identifier: Apache-2.0
#include "opdlab/policy.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "opdlab/numfmt.hpp"
#include "opdlab/rng.hpp"

namespace opdlab {

std::string to_string(const ContextKey& key) {
  std::string s = "p" + std::to_string(key.prompt) + "[";
  for (std::size_t i = 0; i < key.window.size(); ++i) {
    if (i) s += ' ';
    s += key.window[i] == kPadId ? "_" : std::to_string(key.window[i]);
  }
  return s + "]";
}

Policy::Policy(Vocab vocab, std::size_t order) : vocab_(std::move(vocab)), order_(order) {
  if (order_ < 1) throw ArgumentError("context order must be positive");
}

ContextKey Policy::context(std::int64_t prompt, std::span<const TokenId> prefix) const {
  ContextKey key{prompt, std::vector<TokenId>(order_, kPadId)};
  const std::size_t n = std::min(order_, prefix.size());
  for (std::size_t i = 0; i < n; ++i)
    key.window[order_ - n + i] = prefix[prefix.size() - n + i];
  return key;
}

void Policy::check_key(const ContextKey& key) const {
  if (key.window.size() != order_) throw ArgumentError("context window length != order");
  for (TokenId t : key.window)
    if (t != kPadId && !vocab_.contains(t)) throw ArgumentError("context token out of range");
}

Logits Policy::logits_at(const ContextKey& key) const {
  auto it = table_.find(key);
  if (it == table_.end()) {
    check_key(key);  // stored keys were checked on insert
    return Logits::zeros(vocab_.size());
  }
  return it->second;
}

void Policy::set_logits(const ContextKey& key, Logits logits) {
  check_key(key);
  if (logits.size() != vocab_.size()) throw ArgumentError("logit vector size != vocab size");
  table_.insert_or_assign(key, std::move(logits));
}

Distribution dist_at(const Policy& policy, const ContextKey& key) {
  auto it = policy.table().find(key);
  if (it == policy.table().end()) {
    (void)policy.logits_at(key);  // validates the key
    return Distribution::uniform(policy.vocab().size());
  }
  return softmax(it->second);
}

std::vector<double> grad_logprob(const Policy& policy, const ContextKey& key, TokenId token) {
  if (!policy.vocab().contains(token)) throw ArgumentError("grad_logprob: token out of range");
  const Distribution p = dist_at(policy, key);
  std::vector<double> g(p.size());
  for (std::size_t v = 0; v < g.size(); ++v) g[v] = -p[v];
  g[static_cast<std::size_t>(token)] += 1.0;
  return g;
}

namespace {

template <class Pick>
Trajectory rollout(const Policy& policy, std::int64_t prompt, std::size_t max_length, Pick pick) {
  if (max_length < 1) throw ArgumentError("max_length must be at least 1");
  Trajectory traj;
  traj.prompt = prompt;
  const TokenId eos = policy.vocab().eos();
  traj.truncated = true;
  while (traj.tokens.size() < max_length) {
    const ContextKey key = policy.context(prompt, traj.tokens);
    const Logits z = policy.logits_at(key);
    const Distribution p = softmax(z);
    const TokenId tok = pick(z, p);
    traj.tokens.push_back(tok);
    traj.student_logprobs.push_back(safe_log(p[static_cast<std::size_t>(tok)]));
    if (tok == eos) {
      traj.truncated = false;
      break;
    }
  }
  return traj;
}

}  // namespace

Trajectory sample_trajectory(const Policy& policy, std::int64_t prompt, std::size_t max_length,
                             std::uint64_t seed, double temperature) {
  Rng rng(seed);
  return rollout(policy, prompt, max_length, [&](const Logits& z, const Distribution& p) {
    if (temperature == 1.0) return static_cast<TokenId>(rng.categorical(p.probs()));
    const Distribution pt = softmax(z.values(), temperature);
    return static_cast<TokenId>(rng.categorical(pt.probs()));
  });
}

Trajectory greedy_trajectory(const Policy& policy, std::int64_t prompt, std::size_t max_length) {
  return rollout(policy, prompt, max_length, [](const Logits&, const Distribution& p) {
    return rank_order(p).front();
  });
}

void accumulate(GradMap& into, const ContextKey& key, std::span<const double> g, double scale) {
  auto [it, inserted] = into.try_emplace(key, g.size(), 0.0);
  auto& dst = it->second;
  if (dst.size() != g.size()) throw ArgumentError("accumulate: gradient size mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
}

void accumulate(GradMap& into, const GradMap& from, double scale) {
  for (const auto& [key, g] : from) accumulate(into, key, g, scale);
}

double grad_norm(const GradMap& grads) {
  double s = 0.0;
  for (const auto& [key, g] : grads)
    for (double x : g) s += x * x;
  return std::sqrt(s);
}

void apply_update_in_place(Policy& next, const GradMap& grads, OptimizerState& state, double learning_rate) {
  const std::size_t n = next.vocab().size();
  // validate everything first so a bad gradient leaves both untouched
  for (const auto& [key, g] : grads)
    if (g.size() != n) throw ArgumentError("apply_update: gradient size != vocab size");
  for (const auto& [key, g] : grads) {
    Logits z = next.logits_at(key);
    auto& zv = z.mutable_values();
    if (state.config.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < n; ++i) zv[i] -= learning_rate * g[i];
    } else {
      auto& slot = state.slots[key];
      if (slot.m.empty()) {
        slot.m.assign(n, 0.0);
        slot.v.assign(n, 0.0);
      }
      ++slot.steps;
      const double b1 = state.config.beta1, b2 = state.config.beta2;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(slot.steps));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(slot.steps));
      for (std::size_t i = 0; i < n; ++i) {
        slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g[i];
        slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g[i] * g[i];
        const double mhat = slot.m[i] / c1;
        const double vhat = slot.v[i] / c2;
        zv[i] -= learning_rate * mhat / (std::sqrt(vhat) + state.config.eps);
      }
    }
    next.set_logits(key, Logits(std::move(zv)));
  }
}

UpdateResult apply_update(const Policy& policy, const GradMap& grads, OptimizerState state,
                          double learning_rate) {
  Policy next = policy;
  apply_update_in_place(next, grads, state, learning_rate);
  return {std::move(next), std::move(state)};
}

namespace {
constexpr const char* kPolicyMagic = "opdlab-policy";
constexpr int kPolicyVersion = 1;

std::string expect_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw ArgumentError(std::string("policy file: missing ") + what);
  return line;
}
}  // namespace

void save_policy(const Policy& policy, std::ostream& out) {
  out << kPolicyMagic << ' ' << kPolicyVersion << '\n';
  out << "vocab " << policy.vocab().size() << '\n';
  out << "order " << policy.order() << '\n';
  out << "entries " << policy.table().size() << '\n';
  for (const auto& [key, z] : policy.table()) {
    out << key.prompt;
    for (TokenId t : key.window) out << ' ' << t;
    out << " :";
    for (double v : z.values()) out << ' ' << format_double(v);
    out << '\n';
  }
}

Policy load_policy(std::istream& in) {
  std::string magic;
  int version = 0;
  {
    std::istringstream hdr(expect_line(in, "header"));
    hdr >> magic >> version;
    if (magic != kPolicyMagic) throw ArgumentError("policy file: bad magic '" + magic + "'");
    if (version != kPolicyVersion)
      throw ArgumentError("policy file: unsupported version " + std::to_string(version));
  }
  auto field = [&](const char* name) {
    std::istringstream s(expect_line(in, name));
    std::string got;
    std::size_t value = 0;
    s >> got >> value;
    if (got != name || !s) throw ArgumentError(std::string("policy file: expected '") + name + "'");
    return value;
  };
  const std::size_t vocab = field("vocab");
  const std::size_t order = field("order");
  const std::size_t entries = field("entries");
  Policy policy(Vocab(vocab), order);
  for (std::size_t e = 0; e < entries; ++e) {
    std::istringstream row(expect_line(in, "entry"));
    ContextKey key;
    row >> key.prompt;
    key.window.resize(order);
    for (auto& t : key.window) row >> t;
    std::string colon;
    row >> colon;
    if (!row || colon != ":") throw ArgumentError("policy file: malformed entry " + std::to_string(e));
    std::vector<double> z;
    std::string tok;
    while (row >> tok) z.push_back(parse_double(tok));
    policy.set_logits(key, Logits(std::move(z)));
  }
  return policy;
}

void save_policy_file(const Policy& policy, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  save_policy(policy, out);
}

Policy load_policy_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return load_policy(in);
}

}  // namespace opdlab
