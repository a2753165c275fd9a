// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "opdlab/config.hpp"
#include "opdlab/trainer.hpp"

namespace opdlab {

namespace {

std::size_t positive(const ConfigNode& n, const char* key, std::int64_t fallback) {
  const auto v = n.integer(key, fallback);
  if (v < 1) n.fail(key, "must be a positive integer");
  return static_cast<std::size_t>(v);
}

std::size_t non_negative(const ConfigNode& n, const char* key, std::int64_t fallback) {
  const auto v = n.integer(key, fallback);
  if (v < 0) n.fail(key, "must be non-negative");
  return static_cast<std::size_t>(v);
}

double positive_number(const ConfigNode& n, const char* key, double fallback) {
  const double v = n.number(key, fallback);
  if (!(v > 0.0) || !std::isfinite(v)) n.fail(key, "must be a positive number");
  return v;
}

// Runs a name parser and reports failures at the key path.
template <class F>
auto parse_name(const ConfigNode& n, const char* key, const std::string& fallback, F parse) {
  const auto s = n.string(key, fallback);
  try {
    return parse(s);
  } catch (const std::invalid_argument& e) {
    n.fail(key, e.what());
  }
}

}  // namespace

TrainConfig parse_train_config(const nlohmann::json& j) {
  ConfigNode root(j, "");
  TrainConfig c;
  c.name = root.string("name", c.name);
  c.seed = static_cast<std::uint64_t>(root.integer("seed", 1));
  c.mode = parse_name(root, "mode", "opd", [](const std::string& s) {
    for (auto m : {TrainMode::opd, TrainMode::opsd, TrainMode::rlvr, TrainMode::sft, TrainMode::combined})
      if (to_string(m) == s) return m;
    throw std::invalid_argument("unknown mode '" + s + "' (opd, opsd, rlvr, sft, combined)");
  });
  c.parallel = root.boolean("parallel", true);

  {
    root.child("task");  // marks the key; the family parser validates its own keys
    try {
      c.family = parse_family_spec(j.at("task"), "/task");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("/task", e.what());
    }
  }
  if (auto p = root.optional_child("policy")) {
    c.context_order = positive(*p, "context_order", 4);
    p->finish();
  }

  if (auto o = root.optional_child("objective")) {
    c.objective.kind = parse_name(*o, "kind", "reverse_kl_topk_stopgrad", [](const std::string& s) {
      return objectives::parse_objective_kind(s);
    });
    c.objective.selector.mode = parse_name(*o, "support", "teacher", [](const std::string& s) {
      return objectives::parse_support_mode(s);
    });
    c.objective.selector.k = non_negative(*o, "top_k", 20);
    c.objective.jsd_beta = o->number("jsd_beta", 0.5);
    if (!(c.objective.jsd_beta > 0.0 && c.objective.jsd_beta < 1.0)) o->fail("jsd_beta", "must lie in (0, 1)");
    c.include_minus_one = o->boolean("include_minus_one", false);
    const std::size_t vocab = c.family.symbols + TaskLayout::kReserved;
    if (c.objective.selector.mode != objectives::SupportMode::full &&
        (c.objective.selector.k < 1 || c.objective.selector.k > vocab))
      o->fail("top_k", "must lie in 1.." + std::to_string(vocab) + " for this vocabulary");
    o->finish();
  }

  if (auto o = root.optional_child("optimizer")) {
    const auto kind = o->string("kind", "adam");
    if (kind == "adam") c.optimizer.kind = OptimizerKind::adam;
    else if (kind == "sgd") c.optimizer.kind = OptimizerKind::sgd;
    else o->fail("kind", "expected 'adam' or 'sgd'");
    c.learning_rate = positive_number(*o, "learning_rate", c.learning_rate);
    c.optimizer.beta1 = o->number("adam_beta1", 0.9);
    c.optimizer.beta2 = o->number("adam_beta2", 0.98);
    c.optimizer.eps = positive_number(*o, "adam_eps", 1e-8);
    if (!(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0)) o->fail("adam_beta1", "must lie in [0, 1)");
    if (!(c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0)) o->fail("adam_beta2", "must lie in [0, 1)");
    o->finish();
  }

  if (auto r = root.optional_child("rollout")) {
    c.batch_size = positive(*r, "prompts_per_batch", 16);
    c.samples_per_prompt = positive(*r, "samples_per_prompt", 1);
    c.max_length = positive(*r, "max_response_length", 12);
    c.temperature = positive_number(*r, "temperature", 1.0);
    r->finish();
  }

  if (auto t = root.optional_child("training")) {
    c.steps = non_negative(*t, "steps", 100);
    c.eval_every = non_negative(*t, "eval_every", 50);
    c.lambda = t->number("lambda", 0.0);
    if (!(c.lambda >= 0.0)) t->fail("lambda", "must be non-negative");
    t->finish();
  }

  if (auto t = root.optional_child("teacher")) {
    auto& tc = c.teacher;
    tc.construction = t->string("construction", "oracle");
    static const char* kinds[] = {"oracle", "frozen", "ema", "self", "snapshot", "rlvr"};
    if (std::find_if(std::begin(kinds), std::end(kinds), [&](const char* k) { return tc.construction == k; }) ==
        std::end(kinds))
      t->fail("construction", "expected oracle, frozen, ema, self, snapshot or rlvr");
    tc.temperature = positive_number(*t, "temperature", 0.2);
    tc.ema_alpha = t->number("ema_alpha", 0.9);
    if (!(tc.ema_alpha >= 0.0 && tc.ema_alpha < 1.0)) t->fail("ema_alpha", "must lie in [0, 1)");
    tc.snapshot = t->string("snapshot", "");
    if (tc.construction == "snapshot" && tc.snapshot.empty()) t->fail("snapshot", "required for a snapshot teacher");
    tc.pi_kind = parse_name(*t, "pi_kind", "none", [](const std::string& s) { return parse_pi_kind(s); });
    tc.rlvr_warmup_sft_steps = non_negative(*t, "rlvr_warmup_sft_steps", 0);
    tc.rlvr_steps = non_negative(*t, "rlvr_steps", 0);
    tc.rlvr_learning_rate = positive_number(*t, "rlvr_learning_rate", 0.05);
    tc.rlvr_samples_per_prompt = positive(*t, "rlvr_samples_per_prompt", 8);
    if (tc.construction == "rlvr" && tc.rlvr_samples_per_prompt < 2)
      t->fail("rlvr_samples_per_prompt", "must be at least 2");
    t->finish();
  }

  if (auto s = root.optional_child("sft")) {
    c.sft.steps = non_negative(*s, "steps", 0);
    c.sft.learning_rate = positive_number(*s, "learning_rate", 0.05);
    c.sft.traces_per_instance = positive(*s, "traces_per_instance", 4);
    c.sft.temperature = positive_number(*s, "temperature", 1.0);
    s->finish();
  }

  if (auto m = root.optional_child("metrics")) {
    c.overlap_k = non_negative(*m, "overlap_k", 0);
    c.ngram = positive(*m, "ngram", 3);
    m->finish();
  }
  root.finish();

  if (c.mode == TrainMode::opsd && c.teacher.pi_kind == PiKind::none)
    throw ConfigError("/teacher/pi_kind", "opsd needs privileged information");
  if (c.mode == TrainMode::rlvr && c.samples_per_prompt < 2)
    throw ConfigError("/rollout/samples_per_prompt", "rlvr needs at least 2 samples per prompt");
  if (c.mode == TrainMode::combined && c.objective.kind != objectives::ObjectiveKind::sampled_token)
    throw ConfigError("/objective/kind", "combined mode uses the sampled_token advantage");
  return c;
}

TrainConfig load_train_config(const std::string& path) { return parse_train_config(read_json_file(path)); }

}  // namespace opdlab
