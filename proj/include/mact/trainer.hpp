#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mact/common.hpp"
#include "mact/config.hpp"
#include "mact/evaluation.hpp"
#include "mact/grpo.hpp"
#include "mact/policy.hpp"
#include "mact/reward.hpp"
#include "mact/rng.hpp"
#include "mact/tasks.hpp"
#include "mact/trajectory.hpp"

namespace mact {

enum class AnnealKind { StepDrop, LinearDecay };

// Two-stage schedule: `stage1_steps` of diversity-preserving shaping at a
// constant penalty coefficient, then `stage2_steps` of exploitation where
// the coefficient either drops to zero immediately (StepDrop) or decays
// linearly to zero across the anneal window (LinearDecay).
struct StageSchedule {
  int stage1_steps = 700;
  int stage2_steps = 300;
  double penalty_coeff_stage1 = 0.1;
  AnnealKind anneal = AnnealKind::LinearDecay;
  int anneal_duration = 300;
  int rollout_batch = 64;
  int update_batch = 32;
  int group_size = 8;
  double temperature = 1.0;
  int max_gen_batches = 20;

  static StageSchedule from_config(const RunConfig& cfg) {
    StageSchedule s;
    s.stage1_steps = cfg.stage1_steps;
    s.stage2_steps = cfg.stage2_steps;
    s.penalty_coeff_stage1 = cfg.penalty_coeff;
    s.anneal = cfg.anneal == "step_drop" ? AnnealKind::StepDrop
                                         : AnnealKind::LinearDecay;
    s.anneal_duration =
        cfg.anneal_duration > 0 ? cfg.anneal_duration : cfg.stage2_steps;
    s.rollout_batch = cfg.rollout_batch_size;
    s.update_batch = cfg.global_batch_size;
    s.group_size = cfg.n;
    s.temperature = cfg.temperature;
    s.max_gen_batches = cfg.filter_max_num_gen_batches;
    return s;
  }

  void validate() const {
    if (stage1_steps < 0 || stage2_steps < 0)
      throw ConfigError("schedule: stage steps must be >= 0");
    if (group_size < 2) throw ConfigError("schedule: G must be >= 2");
    if (update_batch < 1 || rollout_batch < 1)
      throw ConfigError("schedule: batch sizes must be >= 1");
    if (penalty_coeff_stage1 < 0)
      throw ConfigError("schedule: penalty coefficient must be >= 0");
    if (stage2_steps > 0 && anneal == AnnealKind::LinearDecay &&
        anneal_duration < 1)
      throw ConfigError("schedule: anneal_duration must be >= 1");
  }

  int total_steps() const { return stage1_steps + stage2_steps; }
  int stage_of(int step) const { return step < stage1_steps ? 1 : 2; }

  // Effective penalty coefficient at an absolute step index. Stage 2 is
  // non-increasing and reaches zero by the end of the anneal window.
  double coeff_at(int step) const {
    if (step < stage1_steps) return penalty_coeff_stage1;
    if (anneal == AnnealKind::StepDrop) return 0.0;
    const int s = step - stage1_steps;
    const double remain =
        1.0 - static_cast<double>(s + 1) / static_cast<double>(anneal_duration);
    return penalty_coeff_stage1 * std::max(0.0, remain);
  }
};

// One row of the per-step metrics log.
struct StepMetrics {
  int step = 0;
  int stage = 1;
  double penalty_coeff = 0.0;
  double reward_mean = 0.0;   // over every rollout sampled this step
  double acc_mean = 0.0;
  double format_mean = 0.0;
  double entropy = 0.0;       // mean per-token policy entropy (temp 1)
  int distinct_patterns = 0;
  int distinct_correct_patterns = 0;
  double clip_fraction = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;     // pre-clip L2 norm
  int batches_sampled = 0;
  int groups_kept = 0;
  int groups_degenerate = 0;  // kept by the acc filter, uniform combined reward
  int update_skipped = 0;

  static const char* csv_header() {
    return "step,stage,penalty_coeff,reward_mean,acc_mean,format_mean,"
           "entropy,distinct_patterns,distinct_correct_patterns,"
           "clip_fraction,objective,grad_norm,batches_sampled,groups_kept,"
           "groups_degenerate,update_skipped";
  }

  std::string csv_row() const {
    std::string r;
    r += std::to_string(step);
    r += "," + std::to_string(stage);
    r += "," + fmt_g(penalty_coeff);
    r += "," + fmt_g(reward_mean);
    r += "," + fmt_g(acc_mean);
    r += "," + fmt_g(format_mean);
    r += "," + fmt_g(entropy);
    r += "," + std::to_string(distinct_patterns);
    r += "," + std::to_string(distinct_correct_patterns);
    r += "," + fmt_g(clip_fraction);
    r += "," + fmt_g(objective);
    r += "," + fmt_g(grad_norm);
    r += "," + std::to_string(batches_sampled);
    r += "," + std::to_string(groups_kept);
    r += "," + std::to_string(groups_degenerate);
    r += "," + std::to_string(update_skipped);
    return r;
  }
};

// One row of the evaluation log.
struct EvalRow {
  int step = 0;
  EvalReport report;

  static const char* csv_header() {
    return "step,pass1,pass2,pass4,pass8,pass16,mean_acc,mean_entropy,"
           "distinct_correct_patterns";
  }

  std::string csv_row() const {
    std::string r = std::to_string(step);
    for (int k : {1, 2, 4, 8, 16}) r += "," + fmt_g(report.pass_at.at(k));
    r += "," + fmt_g(report.mean_acc);
    r += "," + fmt_g(report.mean_entropy);
    r += "," + std::to_string(report.distinct_correct_patterns);
    return r;
  }
};

// Drives the update loop. The behavior snapshot is refreshed exactly once
// per step, so updates are on-policy-per-step: ratios are 1 at update time
// and the clip region only matters for the math's correctness, not its
// trajectory. All randomness flows through streams derived from the config
// seed, making runs bit-reproducible.
class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg)
      : cfg_(cfg),
        schedule_(StageSchedule::from_config(cfg)),
        model_(cfg.family(), cfg.embed_dim, mix64(cfg.seed, 0xE3Bull),
               cfg.max_len),
        params_(model_.init_params()),
        behavior_(params_),
        task_rng_(cfg.seed, 0x7A5Cull),
        sample_rng_(cfg.seed, 0x5A3Dull) {
    cfg_.validate();
    schedule_.validate();
    eval_tasks_ = make_eval_tasks(cfg_);
  }

  const PolicyModel& model() const { return model_; }
  const StageSchedule& schedule() const { return schedule_; }
  const PolicyParameters& params() const { return params_; }
  const std::vector<TaskInstance>& eval_tasks() const { return eval_tasks_; }

  // One full update step at absolute index `step`.
  StepMetrics run_step(int step) {
    StepMetrics m;
    m.step = step;
    m.stage = schedule_.stage_of(step);
    m.penalty_coeff = schedule_.coeff_at(step);

    behavior_ = params_;  // the once-per-step snapshot refresh

    ScoreConfig score_cfg;
    score_cfg.penalty_coeff = m.penalty_coeff;

    // Step-wide aggregates over every sampled rollout, pre-filter.
    PolicyModel::SampleStats entropy_stats;
    double reward_sum = 0.0;
    long acc_sum = 0;
    long format_sum = 0;
    long rollouts_seen = 0;
    std::set<std::string> patterns_seen;
    std::set<std::string> correct_patterns_seen;
    std::map<std::uint64_t, TaskInstance> task_by_id;

    const auto next_batch = [&]() {
      std::vector<RolloutGroup> batch;
      batch.reserve(static_cast<std::size_t>(schedule_.rollout_batch));
      for (int i = 0; i < schedule_.rollout_batch; ++i) {
        const std::uint64_t task_seed = task_rng_.next_u64();
        TaskInstance task = generate_task(task_seed, cfg_.family());

        RolloutGroup group;
        group.task_id = task_seed;
        group.rollouts = model_.sample_rollouts(
            behavior_, task, schedule_.group_size, schedule_.temperature,
            sample_rng_, 1.0, &entropy_stats);

        std::vector<ScoredRollout> scored;
        scored.reserve(group.rollouts.size());
        for (const Rollout& r : group.rollouts)
          scored.push_back(ScoredRollout{
              rollout_to_trajectory(model_, r.token_ids),
              static_cast<int>(r.token_ids.size())});
        const std::vector<RewardBreakdown> rewards = score_group(
            scored, task.gold_answer, task.modality(), score_cfg);

        for (std::size_t j = 0; j < group.rollouts.size(); ++j) {
          Rollout& r = group.rollouts[j];
          r.reward_combined = rewards[j].combined;
          r.reward_acc = rewards[j].r_acc;
          r.reward_format = rewards[j].r_format;
          reward_sum += rewards[j].combined;
          acc_sum += rewards[j].r_acc;
          format_sum += rewards[j].r_format;
          ++rollouts_seen;
          const std::string pat = pattern_or_sentinel(scored[j]).str();
          patterns_seen.insert(pat);
          if (rewards[j].r_acc) correct_patterns_seen.insert(pat);
        }
        task_by_id.emplace(task_seed, std::move(task));
        batch.push_back(std::move(group));
      }
      return batch;
    };

    FilterResult filtered = dynamic_sample_filter(
        next_batch, schedule_.update_batch, schedule_.max_gen_batches);

    m.batches_sampled = filtered.batches_consumed;
    m.groups_kept = static_cast<int>(filtered.groups.size());
    if (rollouts_seen) {
      m.reward_mean = reward_sum / static_cast<double>(rollouts_seen);
      m.acc_mean = static_cast<double>(acc_sum) /
                   static_cast<double>(rollouts_seen);
      m.format_mean = static_cast<double>(format_sum) /
                      static_cast<double>(rollouts_seen);
    }
    m.entropy = entropy_stats.steps
                    ? entropy_stats.entropy_sum / entropy_stats.steps
                    : 0.0;
    m.distinct_patterns = static_cast<int>(patterns_seen.size());
    m.distinct_correct_patterns =
        static_cast<int>(correct_patterns_seen.size());

    // Exhausted-filter policy: proceed with a partial batch only when at
    // least half the target survived; otherwise skip this update.
    const bool proceed =
        !filtered.exhausted ||
        2 * static_cast<int>(filtered.groups.size()) >= schedule_.update_batch;
    if (!proceed || filtered.groups.empty()) {
      m.update_skipped = 1;
      return m;
    }

    // Standardize combined rewards within each group; drop groups whose
    // combined rewards are uniform even though accuracies were mixed (the
    // format term can collapse the spread).
    std::vector<TaskGroup> update_groups;
    update_groups.reserve(filtered.groups.size());
    for (RolloutGroup& g : filtered.groups) {
      std::vector<double> rewards;
      rewards.reserve(g.rollouts.size());
      for (const Rollout& r : g.rollouts) rewards.push_back(r.reward_combined);
      std::optional<std::vector<double>> adv = group_advantages(rewards);
      if (!adv) {
        ++m.groups_degenerate;
        continue;
      }
      for (std::size_t i = 0; i < g.rollouts.size(); ++i)
        g.rollouts[i].advantages.assign(g.rollouts[i].token_ids.size(),
                                        (*adv)[i]);
      update_groups.push_back(
          TaskGroup{task_by_id.at(g.task_id), std::move(g)});
    }
    if (update_groups.empty()) {
      m.update_skipped = 1;
      return m;
    }

    GradientResult grad =
        model_.surrogate_gradient(params_, update_groups, cfg_.clip());
    double norm_sq = 0.0;
    for (double gv : grad.grad) norm_sq += gv * gv;
    m.grad_norm = std::sqrt(norm_sq);
    m.objective = grad.objective;
    m.clip_fraction = grad.clip_fraction;

    apply_update(params_, std::move(grad.grad), opt_state_, cfg_.optimizer());
    return m;
  }

  // Evaluation checkpoint: fixed task set, decoding at the eval temperature
  // and top-p, rng derived from (seed, step) so checkpoints are independent
  // of training-stream consumption.
  EvalRow run_eval(int step) {
    Rng rng(mix64(cfg_.seed, static_cast<std::uint64_t>(step)), 0xEA11ull);
    const EvalOutcome outcome = evaluate_policy(
        model_, params_, eval_tasks_, cfg_.eval_attempts,
        cfg_.eval_temperature, cfg_.eval_top_p, rng);
    static const int ks[] = {1, 2, 4, 8, 16};
    EvalRow row;
    row.step = step;
    row.report = make_report(outcome, ks);
    return row;
  }

 private:
  static std::vector<TaskInstance> make_eval_tasks(const RunConfig& cfg) {
    Rng rng(cfg.seed, 0xEA57ull);
    std::vector<TaskInstance> tasks;
    tasks.reserve(static_cast<std::size_t>(cfg.eval_tasks));
    for (int i = 0; i < cfg.eval_tasks; ++i)
      tasks.push_back(generate_task(rng.next_u64(), cfg.family()));
    return tasks;
  }

  RunConfig cfg_;
  StageSchedule schedule_;
  PolicyModel model_;
  PolicyParameters params_;
  PolicyParameters behavior_;
  AdamState opt_state_;
  Rng task_rng_;
  Rng sample_rng_;
  std::vector<TaskInstance> eval_tasks_;
};

struct TrainResult {
  PolicyParameters params;
  EvalReport final_eval;
  std::string out_dir;
};

namespace detail {

inline void require_writable(std::ofstream& out, const std::string& path) {
  if (!out) throw IoError("cannot open for writing: " + path);
}

inline nlohmann::json params_to_json(const PolicyModel& model,
                                     const PolicyParameters& params) {
  nlohmann::json j;
  j["vocab_size"] = model.vocab_size();
  j["state_dim"] = model.state_dim();
  j["max_len"] = model.max_len();
  j["alphabet_size"] = model.family().alphabet_size;
  j["weights"] = params.w;
  return j;
}

}  // namespace detail

// Runs the configured variant end to end and writes the run artifacts:
// metrics.csv (one row per step), eval.csv (one row per checkpoint), the
// four derived curve files, final_params.json, samples.jsonl, and
// manifest.json. Deterministic: identical config and seed produce
// byte-identical metrics and eval logs.
inline TrainResult run_experiment(
    const RunConfig& cfg_in, const std::string& out_dir,
    const std::map<std::string, std::string>& metadata = {}) {
  RunConfig cfg = cfg_in;
  cfg.apply_variant();
  cfg.validate();

  std::filesystem::create_directories(out_dir);
  const std::string metrics_path = out_dir + "/metrics.csv";
  const std::string eval_path = out_dir + "/eval.csv";

  Trainer trainer(cfg);
  const StageSchedule& schedule = trainer.schedule();

  std::ofstream metrics(metrics_path, std::ios::trunc | std::ios::binary);
  detail::require_writable(metrics, metrics_path);
  metrics << "# per-step training metrics; means are over every rollout "
             "sampled in the step\n";
  metrics << StepMetrics::csv_header() << "\n";

  std::ofstream evals(eval_path, std::ios::trunc | std::ios::binary);
  detail::require_writable(evals, eval_path);
  evals << "# evaluation checkpoints: empirical pass@k over the fixed eval "
           "task set\n";
  evals << EvalRow::csv_header() << "\n";

  EvalReport final_eval;
  bool have_eval = false;
  const int total = schedule.total_steps();
  for (int step = 0; step < total; ++step) {
    const StepMetrics m = trainer.run_step(step);
    metrics << m.csv_row() << "\n";
    if (!metrics) throw IoError("write failed: " + metrics_path);
    const bool checkpoint =
        (step + 1) % cfg.eval_interval == 0 || step == total - 1;
    if (checkpoint) {
      const EvalRow row = trainer.run_eval(step);
      evals << row.csv_row() << "\n";
      if (!evals) throw IoError("write failed: " + eval_path);
      final_eval = row.report;
      have_eval = true;
    }
  }
  if (!have_eval) {  // zero-step run: still record the initial policy
    const EvalRow row = trainer.run_eval(0);
    evals << row.csv_row() << "\n";
    final_eval = row.report;
  }
  metrics.close();
  evals.close();

  // Derived curves, consumed as text for byte-stability.
  const auto read_text = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
  };
  emit_curves(read_text(metrics_path), read_text(eval_path), out_dir);

  // Final parameters.
  {
    const std::string path = out_dir + "/final_params.json";
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    detail::require_writable(out, path);
    out << detail::params_to_json(trainer.model(), trainer.params()).dump(2)
        << "\n";
  }

  // A few rendered rollouts from the final policy for eyeballing.
  {
    const std::string path = out_dir + "/samples.jsonl";
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    detail::require_writable(out, path);
    Rng rng(cfg.seed, 0x5A3E5ull);
    const int sample_tasks =
        std::min<int>(4, static_cast<int>(trainer.eval_tasks().size()));
    for (int i = 0; i < sample_tasks; ++i) {
      const TaskInstance& task = trainer.eval_tasks()[i];
      const std::vector<Rollout> rollouts = trainer.model().sample_rollouts(
          trainer.params(), task, cfg.n, 1.0, rng);
      for (const Rollout& r : rollouts) {
        nlohmann::json j;
        j["task_id"] = task.task_id;
        j["gold_answer"] = task.gold_answer;
        const std::optional<Trajectory> traj =
            rollout_to_trajectory(trainer.model(), r.token_ids);
        if (traj) {
          j["trajectory"] = render(*traj);
          j["pattern"] = extract_pattern(*traj).str();
          j["acc"] = verify_answer(traj->answer_payload(), task.gold_answer,
                                   VerifyMode::ExactMatch)
                         ? 1
                         : 0;
          j["format"] =
              validate_format(*traj, task.modality()).valid ? 1 : 0;
        } else {
          j["trajectory"] = nullptr;
          j["pattern"] = "";
          j["acc"] = 0;
          j["format"] = 0;
        }
        out << j.dump() << "\n";
      }
    }
  }

  // Manifest: effective config, seed, and caller-supplied metadata.
  {
    const std::string path = out_dir + "/manifest.json";
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    detail::require_writable(out, path);
    nlohmann::json j;
    j["config"] = config_to_json(cfg);
    j["config_as_given"] = config_to_json(cfg_in);
    j["total_steps"] = schedule.total_steps();
    j["artifacts"] = {"metrics.csv", "eval.csv", "entropy.csv", "reward.csv",
                      "diversity.csv", "passk.csv", "final_params.json",
                      "samples.jsonl"};
    for (const auto& [k, v] : metadata) j["meta"][k] = v;
    out << j.dump(2) << "\n";
  }

  return TrainResult{trainer.params(), final_eval, out_dir};
}

}  // namespace mact
