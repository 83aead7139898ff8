#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "mact/common.hpp"
#include "mact/grpo.hpp"
#include "mact/policy.hpp"
#include "mact/tasks.hpp"

namespace mact {

// Flat experiment configuration. Key names for the optimization block copy
// the RL hyperparameter table verbatim (clip_ratio_low, rollout_batch_size,
// n, filter_max_num_gen_batches, ...) so defaults can be diffed against it
// directly.
struct RunConfig {
  // Optimization
  double clip_ratio_low = 0.2;
  double clip_ratio_high = 0.28;
  int rollout_batch_size = 64;   // task groups sampled per step
  int global_batch_size = 32;    // filtered groups consumed per update
  int n = 8;                     // rollouts per prompt (G)
  double temperature = 1.0;      // training-time sampling temperature
  int filter_max_num_gen_batches = 20;
  std::string filter_metric = "acc";
  double max_grad_norm = 1.0;
  double lr = 1e-3;

  // Two-stage schedule
  int stage1_steps = 700;
  int stage2_steps = 300;
  double penalty_coeff = 0.1;
  std::string anneal = "linear";  // "linear" | "step_drop"
  int anneal_duration = 0;        // 0 -> stage2_steps
  std::string variant = "dps_anneal";  // "dapo" | "dps" | "dps_anneal" | "custom"

  // Task family
  int k_min = 2;
  int k_max = 4;
  int feature_dim = 3;
  int feature_max = 9;
  int alphabet_size = 6;

  // Policy
  int embed_dim = 32;
  int max_len = 8;

  // Evaluation
  double eval_temperature = 0.6;
  double eval_top_p = 0.7;
  int eval_attempts = 16;
  int eval_tasks = 200;
  int eval_interval = 100;

  // Reproducibility
  std::uint64_t seed = 1;

  FamilyConfig family() const {
    FamilyConfig f;
    f.k_min = k_min;
    f.k_max = k_max;
    f.feature_dim = feature_dim;
    f.feature_max = feature_max;
    f.alphabet_size = alphabet_size;
    return f;
  }

  ClipConfig clip() const { return ClipConfig{clip_ratio_low, clip_ratio_high}; }

  OptimizerConfig optimizer() const {
    OptimizerConfig o;
    o.lr = lr;
    o.max_grad_norm = max_grad_norm;
    return o;
  }

  void validate() const {
    clip().validate();
    family().validate();
    if (rollout_batch_size < 1)
      throw ConfigError("rollout_batch_size must be >= 1");
    if (global_batch_size < 1)
      throw ConfigError("global_batch_size must be >= 1");
    if (global_batch_size > rollout_batch_size)
      throw ConfigError("global_batch_size cannot exceed rollout_batch_size");
    if (n < 2) throw ConfigError("n (group size) must be >= 2");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (filter_max_num_gen_batches < 1)
      throw ConfigError("filter_max_num_gen_batches must be >= 1");
    if (filter_metric != "acc")
      throw ConfigError("filter_metric: only \"acc\" is supported");
    if (max_grad_norm < 0.0) throw ConfigError("max_grad_norm must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (stage1_steps < 0 || stage2_steps < 0)
      throw ConfigError("stage steps must be >= 0");
    if (penalty_coeff < 0.0) throw ConfigError("penalty_coeff must be >= 0");
    if (anneal != "linear" && anneal != "step_drop")
      throw ConfigError("anneal must be \"linear\" or \"step_drop\"");
    if (anneal_duration < 0) throw ConfigError("anneal_duration must be >= 0");
    if (variant != "dapo" && variant != "dps" && variant != "dps_anneal" &&
        variant != "custom")
      throw ConfigError("variant must be dapo, dps, dps_anneal, or custom");
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    if (max_len < 2) throw ConfigError("max_len must be >= 2");
    if (!(eval_temperature > 0.0))
      throw ConfigError("eval_temperature must be > 0");
    if (!(eval_top_p > 0.0) || eval_top_p > 1.0)
      throw ConfigError("eval_top_p must be in (0, 1]");
    if (eval_attempts < 16)
      throw ConfigError("eval_attempts must be >= 16 (pass@16 is reported)");
    if (eval_tasks < 1) throw ConfigError("eval_tasks must be >= 1");
    if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  }

  // Rewrites the stage fields for a named variant, preserving the total
  // step budget so ablations stay step-for-step comparable:
  //   dapo       one stage of plain DAPO (penalty off from step one)
  //   dps        one stage of DPS (penalty never anneals)
  //   dps_anneal the two-stage regime with a linear stage-2 decay
  void apply_variant() {
    const int total = stage1_steps + stage2_steps;
    if (variant == "dapo") {
      stage1_steps = 0;
      stage2_steps = total;
      anneal = "step_drop";
    } else if (variant == "dps") {
      stage1_steps = total;
      stage2_steps = 0;
    } else if (variant == "dps_anneal") {
      anneal = "linear";
    }  // "custom": leave the stage fields alone
  }
};

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["clip_ratio_low"] = c.clip_ratio_low;
  j["clip_ratio_high"] = c.clip_ratio_high;
  j["rollout_batch_size"] = c.rollout_batch_size;
  j["global_batch_size"] = c.global_batch_size;
  j["n"] = c.n;
  j["temperature"] = c.temperature;
  j["filter_max_num_gen_batches"] = c.filter_max_num_gen_batches;
  j["filter_metric"] = c.filter_metric;
  j["max_grad_norm"] = c.max_grad_norm;
  j["lr"] = c.lr;
  j["stage1_steps"] = c.stage1_steps;
  j["stage2_steps"] = c.stage2_steps;
  j["penalty_coeff"] = c.penalty_coeff;
  j["anneal"] = c.anneal;
  j["anneal_duration"] = c.anneal_duration;
  j["variant"] = c.variant;
  j["k_min"] = c.k_min;
  j["k_max"] = c.k_max;
  j["feature_dim"] = c.feature_dim;
  j["feature_max"] = c.feature_max;
  j["alphabet_size"] = c.alphabet_size;
  j["embed_dim"] = c.embed_dim;
  j["max_len"] = c.max_len;
  j["eval_temperature"] = c.eval_temperature;
  j["eval_top_p"] = c.eval_top_p;
  j["eval_attempts"] = c.eval_attempts;
  j["eval_tasks"] = c.eval_tasks;
  j["eval_interval"] = c.eval_interval;
  j["seed"] = c.seed;
  return j;
}

// Parses a config object; unknown keys are rejected so typos cannot
// silently fall back to defaults.
inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  static const std::set<std::string> known = {
      "clip_ratio_low", "clip_ratio_high", "rollout_batch_size",
      "global_batch_size", "n", "temperature", "filter_max_num_gen_batches",
      "filter_metric", "max_grad_norm", "lr", "stage1_steps", "stage2_steps",
      "penalty_coeff", "anneal", "anneal_duration", "variant", "k_min",
      "k_max", "feature_dim", "feature_max", "alphabet_size", "embed_dim",
      "max_len", "eval_temperature", "eval_top_p", "eval_attempts",
      "eval_tasks", "eval_interval", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown config key: " + it.key());

  RunConfig c;
  try {
    detail::read_key(j, "clip_ratio_low", c.clip_ratio_low);
    detail::read_key(j, "clip_ratio_high", c.clip_ratio_high);
    detail::read_key(j, "rollout_batch_size", c.rollout_batch_size);
    detail::read_key(j, "global_batch_size", c.global_batch_size);
    detail::read_key(j, "n", c.n);
    detail::read_key(j, "temperature", c.temperature);
    detail::read_key(j, "filter_max_num_gen_batches",
                     c.filter_max_num_gen_batches);
    detail::read_key(j, "filter_metric", c.filter_metric);
    detail::read_key(j, "max_grad_norm", c.max_grad_norm);
    detail::read_key(j, "lr", c.lr);
    detail::read_key(j, "stage1_steps", c.stage1_steps);
    detail::read_key(j, "stage2_steps", c.stage2_steps);
    detail::read_key(j, "penalty_coeff", c.penalty_coeff);
    detail::read_key(j, "anneal", c.anneal);
    detail::read_key(j, "anneal_duration", c.anneal_duration);
    detail::read_key(j, "variant", c.variant);
    detail::read_key(j, "k_min", c.k_min);
    detail::read_key(j, "k_max", c.k_max);
    detail::read_key(j, "feature_dim", c.feature_dim);
    detail::read_key(j, "feature_max", c.feature_max);
    detail::read_key(j, "alphabet_size", c.alphabet_size);
    detail::read_key(j, "embed_dim", c.embed_dim);
    detail::read_key(j, "max_len", c.max_len);
    detail::read_key(j, "eval_temperature", c.eval_temperature);
    detail::read_key(j, "eval_top_p", c.eval_top_p);
    detail::read_key(j, "eval_attempts", c.eval_attempts);
    detail::read_key(j, "eval_tasks", c.eval_tasks);
    detail::read_key(j, "eval_interval", c.eval_interval);
    detail::read_key(j, "seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace mact
