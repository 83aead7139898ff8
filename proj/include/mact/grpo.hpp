#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mact/common.hpp"

namespace mact {

// One sampled response in macro-token form, with the per-token
// log-probabilities recorded by the behavior policy at sampling time.
// logp_new and advantages are filled in at update time and must stay the
// same length as token_ids.
struct Rollout {
  std::vector<int> token_ids;
  std::vector<double> logp_old;
  std::vector<double> logp_new;
  std::vector<double> advantages;
  double reward_combined = 0.0;
  int reward_acc = 0;
  int reward_format = 0;
  double temperature = 1.0;  // sampling temperature logp_old was recorded at
  bool parsed = true;
};

struct RolloutGroup {
  std::uint64_t task_id = 0;
  std::vector<Rollout> rollouts;

  int acc_sum() const {
    int s = 0;
    for (const Rollout& r : rollouts) s += r.reward_acc;
    return s;
  }
};

// Clip-higher configuration: eps_high may exceed eps_low so upward moves on
// positive-advantage tokens clip later than downward moves.
struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.28;

  void validate() const {
    if (!(eps_low > 0.0) || !(eps_low <= eps_high))
      throw ConfigError("clip config requires 0 < eps_low <= eps_high");
  }
};

// r = pi_theta(token) / pi_old(token), computed from log-probabilities.
inline double token_ratio(double logp_new, double logp_old) {
  double r = std::exp(logp_new - logp_old);
  if (!std::isfinite(r))
    throw NumericalError("token_ratio: non-finite ratio");
  return r;
}

// Group-standardized advantages: (R_i - mean) / std with the population
// standard deviation. A zero-variance group has no learning signal and
// comes back as nullopt rather than being silently epsilon-floored; the
// dynamic-sampling filter should have removed such groups, and flooring
// here would hide filter bugs.
inline std::optional<std::vector<double>> group_advantages(
    const std::vector<double>& rewards) {
  const std::size_t g = rewards.size();
  if (g < 2) throw DomainError("group_advantages: need G >= 2");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(g);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(g);
  double sd = std::sqrt(var);
  if (sd < 1e-8) return std::nullopt;
  std::vector<double> out;
  out.reserve(g);
  for (double r : rewards) out.push_back((r - mean) / sd);
  return out;
}

struct SurrogateResult {
  double objective = 0.0;
  double loss = 0.0;  // -objective, for minimizers
  std::vector<std::vector<double>> per_token_terms;
  double clip_fraction = 0.0;  // share of tokens where the clip bound bit
};

// Token-level clipped surrogate over one group:
//
//   J = (1 / sum_i |o_i|) * sum_i sum_t
//         min( r_{i,t} * A_i,  clip(r_{i,t}, 1 - eps_low, 1 + eps_high) * A_i )
//
// Every token of rollout i carries the same outcome-level advantage A_i.
// A token counts as clipped when the min actually selects the constant
// branch: ratio above 1 + eps_high with positive advantage, or below
// 1 - eps_low with negative advantage.
inline SurrogateResult dapo_surrogate(const RolloutGroup& group,
                                      const ClipConfig& clip) {
  clip.validate();
  SurrogateResult res;
  std::size_t total_tokens = 0;
  std::size_t clipped = 0;
  double sum = 0.0;

  res.per_token_terms.reserve(group.rollouts.size());
  for (const Rollout& r : group.rollouts) {
    if (r.logp_new.size() != r.token_ids.size() ||
        r.advantages.size() != r.token_ids.size() ||
        r.logp_old.size() != r.token_ids.size())
      throw DomainError("dapo_surrogate: per-token arrays out of sync");
    std::vector<double> terms;
    terms.reserve(r.token_ids.size());
    for (std::size_t t = 0; t < r.token_ids.size(); ++t) {
      const double ratio = token_ratio(r.logp_new[t], r.logp_old[t]);
      const double adv = r.advantages[t];
      const double clipped_ratio =
          std::clamp(ratio, 1.0 - clip.eps_low, 1.0 + clip.eps_high);
      const double raw = ratio * adv;
      const double capped = clipped_ratio * adv;
      const double term = std::min(raw, capped);
      if (!std::isfinite(term))
        throw NumericalError("dapo_surrogate: non-finite term");
      if (capped < raw) ++clipped;
      terms.push_back(term);
      sum += term;
      ++total_tokens;
    }
    res.per_token_terms.push_back(std::move(terms));
  }

  if (total_tokens == 0) throw DomainError("dapo_surrogate: empty group");
  res.objective = sum / static_cast<double>(total_tokens);
  res.loss = -res.objective;
  res.clip_fraction =
      static_cast<double>(clipped) / static_cast<double>(total_tokens);
  return res;
}

// ---------------------------------------------------------------------------
// Dynamic sampling

// A group is informative only when its accuracy outcomes are mixed:
// 0 < sum_i acc_i < G. All-correct and all-wrong groups carry no
// group-relative signal and are discarded.
inline bool group_is_informative(const RolloutGroup& group) {
  const int s = group.acc_sum();
  return s > 0 && s < static_cast<int>(group.rollouts.size());
}

struct FilterResult {
  std::vector<RolloutGroup> groups;
  bool exhausted = false;  // hit max_gen_batches before target_count
  int batches_consumed = 0;
  int groups_seen = 0;
  int groups_dropped = 0;
};

// Consumes batches from `next_batch` until target_count informative groups
// are retained or max_gen_batches batches were drawn. The accuracy reward
// is the filtering criterion, not the combined reward. When the budget runs
// out the partial set is returned with exhausted = true and the caller
// decides whether to proceed.
inline FilterResult dynamic_sample_filter(
    const std::function<std::vector<RolloutGroup>()>& next_batch,
    int target_count, int max_gen_batches) {
  if (target_count < 1)
    throw DomainError("dynamic_sample_filter: target_count >= 1");
  if (max_gen_batches < 1)
    throw DomainError("dynamic_sample_filter: max_gen_batches >= 1");

  FilterResult res;
  while (static_cast<int>(res.groups.size()) < target_count &&
         res.batches_consumed < max_gen_batches) {
    std::vector<RolloutGroup> batch = next_batch();
    ++res.batches_consumed;
    for (RolloutGroup& g : batch) {
      ++res.groups_seen;
      if (static_cast<int>(res.groups.size()) < target_count &&
          group_is_informative(g)) {
        res.groups.push_back(std::move(g));
      } else {
        ++res.groups_dropped;
      }
    }
  }
  res.exhausted = static_cast<int>(res.groups.size()) < target_count;
  return res;
}

}  // namespace mact
