#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "mact/common.hpp"
#include "mact/grpo.hpp"
#include "mact/rng.hpp"
#include "mact/tasks.hpp"
#include "mact/trajectory.hpp"

namespace mact {

// Trainable weights of the linear-softmax policy, flattened row-major as
// vocab x state_dim.
struct PolicyParameters {
  std::vector<double> w;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 1.0;
};

// A rollout group paired with the task it was sampled for; the policy needs
// the task to rebuild states when replaying a rollout.
struct TaskGroup {
  TaskInstance task;
  RolloutGroup group;
};

struct GradientResult {
  std::vector<double> grad;  // d objective / d weights (ascent direction)
  double objective = 0.0;
  double clip_fraction = 0.0;
};

// Autoregressive macro-token policy.
//
// Sequences are content-free: one token per meta-action opener, then, after
// the Answer opener, exactly one answer token. The vocabulary is
//   [0..4]                the five openers (ActionKind order)
//   [5..5+A-1]            the answer alphabet
//   [5+A]                 an end-of-sequence slot
// Each position is a masked softmax: opener positions only admit the five
// openers, the position after the Answer opener only admits answer tokens.
// The end slot is part of the logits but never in a support set; sampling
// terminates structurally on the answer token. Masked entries report
// log-probability -inf, so the distribution still sums to one over the full
// vocabulary.
//
// State features are the concatenation of a fixed random projection of the
// task's symbolic features, a one-hot of the previous token (with a
// dedicated begin slot), and the normalized step index. The projection is
// frozen at construction; only the linear map on top of it trains.
class PolicyModel {
 public:
  PolicyModel(FamilyConfig family, int embed_dim, std::uint64_t embed_seed,
              int max_len)
      : family_(std::move(family)),
        embed_dim_(embed_dim),
        max_len_(max_len) {
    family_.validate();
    if (embed_dim_ < 1) throw ConfigError("embed_dim must be >= 1");
    if (max_len_ < 1) throw ConfigError("max_len must be >= 1");
    raw_dim_ = 6 + 2 * family_.k_max + family_.k_max * family_.feature_dim;
    Rng rng(embed_seed, /*stream=*/0xe3bedull);
    projection_.resize(static_cast<std::size_t>(embed_dim_) * raw_dim_);
    const double scale = 1.0 / std::sqrt(static_cast<double>(raw_dim_));
    for (double& p : projection_) p = rng.normal() * scale;
  }

  const FamilyConfig& family() const { return family_; }
  int max_len() const { return max_len_; }
  int vocab_size() const { return 5 + family_.alphabet_size + 1; }
  int state_dim() const { return embed_dim_ + vocab_size() + 1 + 1; }
  int param_count() const { return vocab_size() * state_dim(); }

  static constexpr int kBegin = -1;  // previous-token sentinel
  int answer_token_id(int i) const { return 5 + i; }
  int end_token_id() const { return 5 + family_.alphabet_size; }
  bool is_opener(int tok) const { return tok >= 0 && tok < 5; }
  bool is_answer_token(int tok) const {
    return tok >= 5 && tok < end_token_id();
  }

  PolicyParameters init_params() const {
    return PolicyParameters{std::vector<double>(
        static_cast<std::size_t>(param_count()), 0.0)};
  }

  PolicyParameters init_params(Rng& rng, double scale) const {
    PolicyParameters p = init_params();
    for (double& w : p.w) w = rng.normal() * scale;
    return p;
  }

  // Fixed task embedding: normalized symbolic features through the frozen
  // random projection. Panel sums and maxes get their own slots so that
  // answer structure stays linearly reachable.
  std::vector<double> embed(const TaskInstance& task) const {
    std::vector<double> raw(static_cast<std::size_t>(raw_dim_), 0.0);
    const double fmax = static_cast<double>(family_.feature_max);
    const double smax = fmax * family_.feature_dim;
    std::size_t i = 0;
    raw[i++] = 1.0;
    raw[i++] = task.panels.size() >= 2 ? 1.0 : 0.0;
    raw[i++] = static_cast<double>(task.panels.size()) / family_.k_max;
    raw[i + static_cast<std::size_t>(task.question_kind)] = 1.0;
    i += 3;
    for (int j = 0; j < family_.k_max; ++j)
      raw[i++] = j < static_cast<int>(task.panels.size())
                     ? detail::panel_sum(task.panels[j]) / smax
                     : 0.0;
    for (int j = 0; j < family_.k_max; ++j)
      raw[i++] = j < static_cast<int>(task.panels.size())
                     ? detail::panel_max(task.panels[j]) / fmax
                     : 0.0;
    for (int j = 0; j < family_.k_max; ++j)
      for (int d = 0; d < family_.feature_dim; ++d)
        raw[i++] = (j < static_cast<int>(task.panels.size()) &&
                    d < static_cast<int>(task.panels[j].size()))
                       ? task.panels[j][d] / fmax
                       : 0.0;

    std::vector<double> e(static_cast<std::size_t>(embed_dim_), 0.0);
    for (int r = 0; r < embed_dim_; ++r) {
      double acc = 0.0;
      for (int c = 0; c < raw_dim_; ++c)
        acc += projection_[static_cast<std::size_t>(r) * raw_dim_ + c] *
               raw[c];
      e[r] = acc;
    }
    return e;
  }

  std::vector<double> state_features(const std::vector<double>& task_embed,
                                     int prev_token, int step) const {
    std::vector<double> s(static_cast<std::size_t>(state_dim()), 0.0);
    std::copy(task_embed.begin(), task_embed.end(), s.begin());
    const std::size_t prev_base = static_cast<std::size_t>(embed_dim_);
    s[prev_base + static_cast<std::size_t>(prev_token + 1)] = 1.0;
    s.back() = static_cast<double>(step) / max_len_;
    return s;
  }

  // Support set for the position following `prev_token`.
  std::vector<int> allowed_tokens(int prev_token) const {
    if (prev_token == static_cast<int>(ActionKind::Answer)) {
      std::vector<int> v(static_cast<std::size_t>(family_.alphabet_size));
      std::iota(v.begin(), v.end(), 5);
      return v;
    }
    return {0, 1, 2, 3, 4};
  }

  // Log-probabilities over the full vocabulary at one position; masked
  // entries are -inf. Temperature scales the logits before normalization.
  std::vector<double> step_logprobs(const PolicyParameters& params,
                                    const std::vector<double>& state,
                                    const std::vector<int>& allowed,
                                    double temperature = 1.0) const {
    if (!(temperature > 0.0))
      throw DomainError("temperature must be positive");
    const int dim = state_dim();
    std::vector<double> logp(static_cast<std::size_t>(vocab_size()),
                             -std::numeric_limits<double>::infinity());
    double zmax = -std::numeric_limits<double>::infinity();
    for (int v : allowed) {
      double z = 0.0;
      const double* row = params.w.data() + static_cast<std::size_t>(v) * dim;
      for (int d = 0; d < dim; ++d) z += row[d] * state[d];
      logp[v] = z / temperature;
      zmax = std::max(zmax, logp[v]);
    }
    double sum = 0.0;
    for (int v : allowed) sum += std::exp(logp[v] - zmax);
    const double lse = zmax + std::log(sum);
    for (int v : allowed) logp[v] -= lse;
    return logp;
  }

  struct SampleStats {
    double entropy_sum = 0.0;  // at temperature 1, over all sampled steps
    int steps = 0;
  };

  // Samples G rollouts for one task. The recorded logp_old is the exact
  // log-probability of the distribution actually sampled from (temperature-
  // and top-p-adjusted), so ratios against it are well defined. A rollout
  // that hits max_len before its answer token is truncated and will not
  // parse.
  std::vector<Rollout> sample_rollouts(const PolicyParameters& params,
                                       const TaskInstance& task, int g,
                                       double temperature, Rng& rng,
                                       double top_p = 1.0,
                                       SampleStats* stats = nullptr) const {
    if (g < 1) throw DomainError("sample_rollouts: G must be >= 1");
    const std::vector<double> task_embed = embed(task);
    std::vector<Rollout> out;
    out.reserve(static_cast<std::size_t>(g));
    for (int i = 0; i < g; ++i) {
      Rollout r;
      int prev = kBegin;
      for (int step = 0; step < max_len_; ++step) {
        const std::vector<int> allowed = allowed_tokens(prev);
        const std::vector<double> state =
            state_features(task_embed, prev, step);
        std::vector<double> logp =
            step_logprobs(params, state, allowed, temperature);
        if (stats) {
          const std::vector<double> base =
              temperature == 1.0 ? logp
                                 : step_logprobs(params, state, allowed);
          stats->entropy_sum += entropy_of(base, allowed);
          stats->steps += 1;
        }
        if (top_p < 1.0) truncate_top_p(logp, allowed, top_p);
        std::vector<double> probs(allowed.size());
        for (std::size_t a = 0; a < allowed.size(); ++a)
          probs[a] = std::exp(logp[allowed[a]]);
        const int tok = allowed[rng.categorical(probs)];
        r.token_ids.push_back(tok);
        r.logp_old.push_back(logp[tok]);
        prev = tok;
        if (is_answer_token(tok)) break;
      }
      r.temperature = temperature;
      r.parsed = !r.token_ids.empty() && is_answer_token(r.token_ids.back());
      out.push_back(std::move(r));
    }
    return out;
  }

  // Exact log-probabilities of a recorded rollout under `params` at
  // temperature 1. This is the pi_theta side of the likelihood ratio.
  std::vector<double> logprob_under(const PolicyParameters& params,
                                    const TaskInstance& task,
                                    const std::vector<int>& tokens) const {
    const std::vector<double> task_embed = embed(task);
    std::vector<double> out;
    out.reserve(tokens.size());
    int prev = kBegin;
    for (std::size_t step = 0; step < tokens.size(); ++step) {
      const std::vector<int> allowed = allowed_tokens(prev);
      const std::vector<double> state =
          state_features(task_embed, prev, static_cast<int>(step));
      const std::vector<double> logp = step_logprobs(params, state, allowed);
      const int tok = tokens[step];
      if (tok < 0 || tok >= vocab_size() || !std::isfinite(logp[tok]))
        throw DomainError("logprob_under: token outside the step's support");
      out.push_back(logp[tok]);
      prev = tok;
    }
    return out;
  }

  // Mean per-token entropy (nats, temperature 1) along recorded rollouts.
  SampleStats entropy_along(const PolicyParameters& params,
                            const TaskInstance& task,
                            const std::vector<int>& tokens) const {
    const std::vector<double> task_embed = embed(task);
    SampleStats st;
    int prev = kBegin;
    for (std::size_t step = 0; step < tokens.size(); ++step) {
      const std::vector<int> allowed = allowed_tokens(prev);
      const std::vector<double> state =
          state_features(task_embed, prev, static_cast<int>(step));
      st.entropy_sum +=
          entropy_of(step_logprobs(params, state, allowed), allowed);
      st.steps += 1;
      prev = tokens[step];
    }
    return st;
  }

  // Mean next-token entropy over freshly sampled rollouts for a task sample.
  double policy_entropy(const PolicyParameters& params,
                        std::span<const TaskInstance> tasks, int g,
                        double temperature, Rng& rng) const {
    if (tasks.empty()) throw DomainError("policy_entropy: empty task sample");
    SampleStats st;
    for (const TaskInstance& t : tasks)
      sample_rollouts(params, t, g, temperature, rng, 1.0, &st);
    return st.steps ? st.entropy_sum / st.steps : 0.0;
  }

  // Analytic gradient of the batch surrogate objective
  //   (1/B) sum_g (1/T_g) sum_{i,t} min(r A, clip(r) A)
  // with respect to the weights. Fills logp_new on every rollout as a side
  // effect. Tokens where the min selects the clip bound contribute zero
  // gradient; elsewhere the contribution is A * r * dlogp/dW.
  GradientResult surrogate_gradient(const PolicyParameters& params,
                                    std::vector<TaskGroup>& groups,
                                    const ClipConfig& clip) const {
    clip.validate();
    if (groups.empty()) throw DomainError("surrogate_gradient: no groups");
    GradientResult res;
    res.grad.assign(params.w.size(), 0.0);
    const int dim = state_dim();
    const double inv_batch = 1.0 / static_cast<double>(groups.size());
    long total_tokens = 0;
    long clipped_tokens = 0;

    for (TaskGroup& tg : groups) {
      const std::vector<double> task_embed = embed(tg.task);
      std::size_t group_tokens = 0;
      for (const Rollout& r : tg.group.rollouts)
        group_tokens += r.token_ids.size();
      if (group_tokens == 0)
        throw DomainError("surrogate_gradient: empty group");
      const double inv_tokens =
          inv_batch / static_cast<double>(group_tokens);

      double group_sum = 0.0;
      for (Rollout& r : tg.group.rollouts) {
        if (r.advantages.size() != r.token_ids.size() ||
            r.logp_old.size() != r.token_ids.size())
          throw DomainError("surrogate_gradient: per-token arrays out of sync");
        r.logp_new.resize(r.token_ids.size());
        int prev = kBegin;
        for (std::size_t step = 0; step < r.token_ids.size(); ++step) {
          const std::vector<int> allowed = allowed_tokens(prev);
          const std::vector<double> state =
              state_features(task_embed, prev, static_cast<int>(step));
          const std::vector<double> logp =
              step_logprobs(params, state, allowed);
          const int tok = r.token_ids[step];
          if (!std::isfinite(logp[tok]))
            throw DomainError("surrogate_gradient: token outside support");
          r.logp_new[step] = logp[tok];

          const double ratio = token_ratio(logp[tok], r.logp_old[step]);
          const double adv = r.advantages[step];
          const double capped =
              std::clamp(ratio, 1.0 - clip.eps_low, 1.0 + clip.eps_high) * adv;
          const double raw = ratio * adv;
          ++total_tokens;
          if (capped < raw) {
            // Clip bound active: constant branch, no gradient.
            ++clipped_tokens;
            group_sum += capped;
          } else {
            group_sum += raw;
            const double coeff = inv_tokens * adv * ratio;
            for (int v : allowed) {
              const double p = std::exp(logp[v]);
              const double indicator = (v == tok) ? 1.0 : 0.0;
              const double c = coeff * (indicator - p);
              double* grow =
                  res.grad.data() + static_cast<std::size_t>(v) * dim;
              for (int d = 0; d < dim; ++d) grow[d] += c * state[d];
            }
          }
          prev = tok;
        }
      }
      res.objective += group_sum * inv_tokens;
    }

    for (double gv : res.grad)
      if (!std::isfinite(gv))
        throw NumericalError("surrogate_gradient: non-finite gradient");
    res.clip_fraction = total_tokens
                            ? static_cast<double>(clipped_tokens) /
                                  static_cast<double>(total_tokens)
                            : 0.0;
    return res;
  }

 private:
  static double entropy_of(const std::vector<double>& logp,
                           const std::vector<int>& allowed) {
    double h = 0.0;
    for (int v : allowed) {
      const double p = std::exp(logp[v]);
      if (p > 0.0) h -= p * logp[v];
    }
    return h;
  }

  // Nucleus truncation: keep the smallest prefix of the descending
  // distribution with mass >= top_p, renormalize, zero the rest. Ties break
  // on token id so the kept set is deterministic.
  static void truncate_top_p(std::vector<double>& logp,
                             const std::vector<int>& allowed, double top_p) {
    std::vector<int> order(allowed);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (logp[a] != logp[b]) return logp[a] > logp[b];
      return a < b;
    });
    double mass = 0.0;
    std::size_t keep = order.size();
    for (std::size_t i = 0; i < order.size(); ++i) {
      mass += std::exp(logp[order[i]]);
      if (mass >= top_p) {
        keep = i + 1;
        break;
      }
    }
    const double log_mass = std::log(mass);
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i < keep)
        logp[order[i]] -= log_mass;
      else
        logp[order[i]] = -std::numeric_limits<double>::infinity();
    }
  }

  FamilyConfig family_;
  int embed_dim_;
  int max_len_;
  int raw_dim_;
  std::vector<double> projection_;
};

// Renders a macro rollout as a tagged trajectory. Contents are canonical
// placeholders; only the structure and the answer carry information.
// Returns nullopt for truncated rollouts (no terminal answer token).
inline std::optional<Trajectory> rollout_to_trajectory(
    const PolicyModel& model, const std::vector<int>& tokens) {
  if (tokens.empty() || !model.is_answer_token(tokens.back()))
    return std::nullopt;
  Trajectory traj;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    const int tok = tokens[i];
    if (!model.is_opener(tok)) return std::nullopt;
    Segment seg;
    seg.kind = static_cast<ActionKind>(tok);
    switch (seg.kind) {
      case ActionKind::Global: seg.content = "overall structure"; break;
      case ActionKind::Focus: seg.content = "panel details"; break;
      case ActionKind::Hint: seg.content = "error-prone aspects"; break;
      case ActionKind::Think: seg.content = "internal reasoning"; break;
      case ActionKind::Answer: seg.content = "pending"; break;
    }
    traj.segments.push_back(std::move(seg));
  }
  if (traj.segments.empty() ||
      traj.segments.back().kind != ActionKind::Answer)
    return std::nullopt;
  traj.segments.back().content =
      model.family().answer_token(tokens.back() - 5);
  return traj;
}

// One Adam ascent step with global gradient-norm clipping. `grad` is the
// objective gradient; parameters move uphill.
inline void apply_update(PolicyParameters& params,
                         std::vector<double> grad, AdamState& state,
                         const OptimizerConfig& opt) {
  if (grad.size() != params.w.size())
    throw DomainError("apply_update: gradient shape mismatch");
  if (state.m.empty()) {
    state.m.assign(params.w.size(), 0.0);
    state.v.assign(params.w.size(), 0.0);
  }
  if (state.m.size() != params.w.size())
    throw DomainError("apply_update: optimizer state shape mismatch");

  if (opt.max_grad_norm > 0.0) {
    double norm_sq = 0.0;
    for (double g : grad) norm_sq += g * g;
    const double norm = std::sqrt(norm_sq);
    if (norm > opt.max_grad_norm) {
      const double scale = opt.max_grad_norm / norm;
      for (double& g : grad) g *= scale;
    }
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.w.size(); ++i) {
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * grad[i];
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params.w[i] += opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
}

}  // namespace mact
