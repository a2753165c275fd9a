// SPDX-License-Identifier: Apache-2.0
#include "opdlab/tasks.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "opdlab/config.hpp"

namespace opdlab {

TaskLayout TaskLayout::from_vocab(const Vocab& vocab) {
  if (vocab.size() <= kReserved) throw ArgumentError("vocab too small for the task layout");
  return TaskLayout{vocab.size() - kReserved};
}

std::string_view to_string(PiKind kind) {
  switch (kind) {
    case PiKind::none: return "none";
    case PiKind::shared_rule: return "shared-rule";
    case PiKind::instance_answer: return "instance-answer";
    case PiKind::instance_response: return "instance-response";
  }
  return "?";
}

PiKind parse_pi_kind(std::string_view name) {
  for (auto k : {PiKind::none, PiKind::shared_rule, PiKind::instance_answer, PiKind::instance_response})
    if (to_string(k) == name) return k;
  throw ArgumentError("unknown PI kind '" + std::string(name) + "'");
}

std::string_view to_string(FamilyKind kind) {
  return kind == FamilyKind::shared_rule ? "shared-rule" : "instance-answer";
}

nlohmann::json FamilySpec::to_json() const {
  nlohmann::json j;
  j["kind"] = std::string(to_string(kind));
  j["symbols"] = symbols;
  j["seed"] = seed;
  if (kind == FamilyKind::shared_rule) {
    j["num_prompts"] = num_prompts;
    j["min_input_length"] = min_input_length;
    j["max_input_length"] = max_input_length;
    j["rule"] = rule;
    if (rule == "shift") j["shift"] = shift;
    if (rule == "explicit") j["permutation"] = permutation;
  } else {
    j["num_questions"] = num_questions;
    j["num_answers"] = num_answers;
  }
  return j;
}

FamilySpec parse_family_spec(const nlohmann::json& j, const std::string& path) {
  ConfigNode node(j, path);
  FamilySpec s;
  const std::string kind = node.string("kind");
  if (kind == "shared-rule") s.kind = FamilyKind::shared_rule;
  else if (kind == "instance-answer") s.kind = FamilyKind::instance_answer;
  else node.fail("kind", "expected 'shared-rule' or 'instance-answer', got '" + kind + "'");

  auto positive = [&](const char* key, std::int64_t fallback) {
    const auto v = node.integer(key, fallback);
    if (v < 1) node.fail(key, "must be positive");
    return static_cast<std::size_t>(v);
  };
  s.symbols = positive("symbols", 16);
  if (s.symbols < 2) node.fail("symbols", "need at least 2 symbols");
  s.seed = static_cast<std::uint64_t>(node.integer("seed", 1));
  if (s.kind == FamilyKind::shared_rule) {
    s.num_prompts = positive("num_prompts", 64);
    s.min_input_length = positive("min_input_length", 3);
    s.max_input_length = positive("max_input_length", 6);
    if (s.max_input_length < s.min_input_length)
      node.fail("max_input_length", "must be >= min_input_length");
    s.rule = node.string("rule", "shift");
    if (s.rule == "shift") {
      s.shift = node.integer("shift", 1);
    } else if (s.rule == "explicit") {
      for (auto v : node.integer_list("permutation")) s.permutation.push_back(static_cast<TokenId>(v));
      auto sorted = s.permutation;
      std::sort(sorted.begin(), sorted.end());
      std::vector<TokenId> iota(s.symbols);
      std::iota(iota.begin(), iota.end(), 0);
      if (sorted != iota) node.fail("permutation", "must be a permutation of 0..symbols-1");
    } else if (s.rule != "identity" && s.rule != "random") {
      node.fail("rule", "expected identity, shift, random or explicit");
    }
  } else {
    s.num_questions = positive("num_questions", 4);
    s.num_answers = positive("num_answers", 4);
    if (s.num_questions > s.symbols) node.fail("num_questions", "exceeds the symbol count");
    if (s.num_answers > s.symbols) node.fail("num_answers", "exceeds the symbol count");
  }
  node.finish();
  return s;
}

FamilySpec load_family_spec(const std::string& path) { return parse_family_spec(read_json_file(path)); }

namespace {

std::vector<TokenId> shuffled_symbols(std::size_t n, Rng& rng) {
  std::vector<TokenId> v(n);
  std::iota(v.begin(), v.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return v;
}

}  // namespace

TaskFamily::TaskFamily(FamilySpec spec) : spec_(std::move(spec)), layout_{spec_.symbols} {
  Rng rng(stream_seed(spec_.seed, 0x7a5c));
  if (spec_.kind == FamilyKind::shared_rule) {
    const auto s = static_cast<std::int64_t>(spec_.symbols);
    rule_.resize(spec_.symbols);
    if (spec_.rule == "identity") {
      std::iota(rule_.begin(), rule_.end(), 0);
    } else if (spec_.rule == "shift") {
      for (std::int64_t a = 0; a < s; ++a)
        rule_[static_cast<std::size_t>(a)] = static_cast<TokenId>(((a + spec_.shift) % s + s) % s);
    } else if (spec_.rule == "random") {
      rule_ = shuffled_symbols(spec_.symbols, rng);
    } else if (spec_.rule == "explicit") {
      rule_ = spec_.permutation;
    } else {
      throw ArgumentError("unknown rule '" + spec_.rule + "'");
    }

    std::set<std::vector<TokenId>> seen;
    const std::size_t span = spec_.max_input_length - spec_.min_input_length + 1;
    std::size_t attempts = 0;
    while (instances_.size() < spec_.num_prompts) {
      if (++attempts > 1000 * spec_.num_prompts)
        throw ArgumentError("cannot draw enough distinct shared-rule inputs");
      const std::size_t len = spec_.min_input_length + rng.below(span);
      std::vector<TokenId> input(len);
      for (auto& t : input) t = static_cast<TokenId>(rng.below(spec_.symbols));
      if (!seen.insert(input).second) continue;
      TaskInstance inst;
      inst.instance_id = instances_.size();
      inst.prompt_id = static_cast<std::int64_t>(inst.instance_id);
      inst.input = input;
      for (TokenId t : input) inst.target.push_back(rule_[static_cast<std::size_t>(t)]);
      instances_.push_back(std::move(inst));
    }
  } else {
    const auto questions = shuffled_symbols(spec_.symbols, rng);
    const auto alphabet = shuffled_symbols(spec_.symbols, rng);
    rule_.assign(alphabet.begin(), alphabet.begin() + static_cast<std::ptrdiff_t>(spec_.num_answers));
    // Every question sees each answer exactly once: the marginal is uniform.
    for (std::size_t i = 0; i < spec_.num_questions * spec_.num_answers; ++i) {
      const std::size_t q = i % spec_.num_questions;
      const std::size_t j = i / spec_.num_questions;
      TaskInstance inst;
      inst.instance_id = i;
      inst.prompt_id = static_cast<std::int64_t>(q);
      inst.input = {questions[q]};
      inst.target = {rule_[(j + q) % spec_.num_answers]};
      instances_.push_back(std::move(inst));
    }
  }
}

std::vector<std::int64_t> TaskFamily::prompt_ids() const {
  std::set<std::int64_t> ids;
  for (const auto& inst : instances_) ids.insert(inst.prompt_id);
  return {ids.begin(), ids.end()};
}

PrivilegedInfo TaskFamily::privileged_info(const TaskInstance& inst, PiKind kind) const {
  PrivilegedInfo pi{kind, {}};
  switch (kind) {
    case PiKind::none: break;
    case PiKind::shared_rule: pi.tokens = {layout_.rule_token()}; break;
    case PiKind::instance_answer: pi.tokens = inst.target; break;
    case PiKind::instance_response:
      pi.tokens.push_back(layout_.answer_start());
      pi.tokens.insert(pi.tokens.end(), inst.target.begin(), inst.target.end());
      break;
  }
  return pi;
}

std::vector<const TaskInstance*> TaskFamily::candidates(std::int64_t prompt_id,
                                                        const PrivilegedInfo& pi) const {
  std::vector<const TaskInstance*> by_prompt, by_pi;
  for (const auto& inst : instances_) {
    if (inst.prompt_id != prompt_id) continue;
    by_prompt.push_back(&inst);
    if (pi.kind != PiKind::none && privileged_info(inst, pi.kind) == pi) by_pi.push_back(&inst);
  }
  return by_pi.empty() ? by_prompt : by_pi;
}

std::vector<TokenId> TaskFamily::canonical_response(const TaskInstance& inst) const {
  std::vector<TokenId> r{layout_.answer_start()};
  r.insert(r.end(), inst.target.begin(), inst.target.end());
  r.push_back(layout_.eos());
  return r;
}

const TaskInstance& sample_instance(const TaskFamily& family, Rng& rng) {
  return family.instances()[rng.below(family.instances().size())];
}

int reward(const TaskLayout& layout, const TaskInstance& inst, std::span<const TokenId> response) {
  auto start = std::find(response.begin(), response.end(), layout.answer_start());
  if (start == response.end()) return 0;
  auto end = std::find(start + 1, response.end(), layout.eos());
  if (end == response.end()) return 0;
  return std::equal(start + 1, end, inst.target.begin(), inst.target.end()) ? 1 : 0;
}

TokenId oracle_next_token(const TaskLayout& layout, std::span<const TokenId> target,
                          std::span<const TokenId> prefix) {
  auto start = std::find(prefix.begin(), prefix.end(), layout.answer_start());
  if (start == prefix.end()) return layout.answer_start();
  const auto emitted = static_cast<std::size_t>(prefix.end() - (start + 1));
  if (emitted < target.size() && std::equal(start + 1, prefix.end(), target.begin()))
    return target[emitted];
  return layout.eos();
}

}  // namespace opdlab
