#pragma once

#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mact/common.hpp"
#include "mact/config.hpp"
#include "mact/evaluation.hpp"
#include "mact/http_oracle.hpp"
#include "mact/trainer.hpp"
#include "mact/tree_store.hpp"

namespace mact {

// Stable exit-code contract for scripting: 0 success, 2 config error,
// 3 numerical error, 4 I/O (including oracle transport) error.
inline int run_guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const OracleError& e) {
    std::cerr << "oracle error: " << e.what() << "\n";
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

namespace detail {

inline RunConfig load_or_default(const std::string& config_path) {
  return config_path.empty() ? RunConfig{} : load_config(config_path);
}

inline std::string read_git_rev() {
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(
      popen("git rev-parse --short HEAD 2>/dev/null", "r"), pclose);
  if (!pipe) return "unknown";
  char buf[64] = {0};
  if (!fgets(buf, sizeof buf, pipe.get())) return "unknown";
  std::string rev(buf);
  while (!rev.empty() && (rev.back() == '\n' || rev.back() == '\r'))
    rev.pop_back();
  return rev.empty() ? "unknown" : rev;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
}

}  // namespace detail

// Fixed eval task set for a config; shared by training checkpoints and the
// standalone eval command so their numbers are comparable.
inline std::vector<TaskInstance> make_eval_task_set(const RunConfig& cfg) {
  Rng rng(cfg.seed, 0xEA57ull);
  std::vector<TaskInstance> tasks;
  tasks.reserve(static_cast<std::size_t>(cfg.eval_tasks));
  for (int i = 0; i < cfg.eval_tasks; ++i)
    tasks.push_back(generate_task(rng.next_u64(), cfg.family()));
  return tasks;
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(const std::string& config_path,
                     const std::string& variant_override,
                     std::optional<std::uint64_t> seed_override,
                     const std::string& out_dir) {
  RunConfig cfg = detail::load_or_default(config_path);
  if (!variant_override.empty()) cfg.variant = variant_override;
  if (seed_override) cfg.seed = *seed_override;

  std::map<std::string, std::string> metadata;
  metadata["git_rev"] = detail::read_git_rev();

  const TrainResult result = run_experiment(cfg, out_dir, metadata);
  std::cout << "variant " << cfg.variant << ", seed " << cfg.seed << ", "
            << (cfg.stage1_steps + cfg.stage2_steps) << " steps planned\n";
  std::cout << "final pass@1 " << fmt_g(result.final_eval.pass_at.at(1))
            << ", pass@16 " << fmt_g(result.final_eval.pass_at.at(16))
            << ", mean acc " << fmt_g(result.final_eval.mean_acc)
            << ", entropy " << fmt_g(result.final_eval.mean_entropy)
            << ", distinct correct patterns "
            << result.final_eval.distinct_correct_patterns << "\n";
  std::cout << "artifacts in " << result.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// forge

struct ForgeCliOptions {
  std::string oracle = "mock";  // "mock" | "http"
  std::string endpoint;         // http oracle base URL
  int num_tasks = 500;
  double student_accuracy = 0.3;
  double teacher_accuracy = 0.8;
};

inline int cmd_forge_run(const std::string& config_path,
                         const ForgeCliOptions& opts,
                         const std::string& out_dir) {
  RunConfig cfg = detail::load_or_default(config_path);
  cfg.validate();

  ForgeConfig fc;
  fc.num_tasks = opts.num_tasks;
  fc.seed = cfg.seed;
  fc.family = cfg.family();
  if (fc.num_tasks < 1) throw ConfigError("forge: --tasks must be >= 1");

  std::unique_ptr<Oracle> student;
  std::unique_ptr<Oracle> teacher;
  if (opts.oracle == "mock") {
    student = std::make_unique<MockStudent>(
        mix64(cfg.seed, 0x57ull), opts.student_accuracy, cfg.alphabet_size);
    teacher = std::make_unique<MockTeacher>(
        mix64(cfg.seed, 0x7Eull), opts.teacher_accuracy, cfg.alphabet_size);
  } else if (opts.oracle == "http") {
    if (opts.endpoint.empty())
      throw ConfigError("forge: --endpoint required with --oracle http");
    student = std::make_unique<HttpModel>(opts.endpoint);
    teacher = std::make_unique<HttpModel>(opts.endpoint);
  } else {
    throw ConfigError("forge: --oracle must be mock or http");
  }

  const ForgeResult result = run_forge(*student, *teacher, fc);

  std::filesystem::create_directories(out_dir);
  persist_records(result.records, out_dir + "/records.jsonl");
  persist_tree_store(result.store, out_dir + "/trees.jsonl");
  {
    const std::string path = out_dir + "/stats.json";
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    nlohmann::json j;
    j["tasks_total"] = result.stats.tasks_total;
    j["cold_start"] = result.stats.cold_start;
    j["rl"] = result.stats.rl_total();
    j["rl_teacher_fail"] = result.stats.rl_teacher_fail;
    j["rl_no_alternative"] = result.stats.rl_no_alternative;
    j["unprocessed"] = result.stats.unprocessed;
    j["step3_attempts"] = result.stats.step3_attempts;
    j["stored_trajectories"] = result.store.total_trajectories();
    out << j.dump(2) << "\n";
  }

  std::cout << "tasks " << result.stats.tasks_total << ": cold_start "
            << result.stats.cold_start << ", rl " << result.stats.rl_total()
            << " (teacher_fail " << result.stats.rl_teacher_fail
            << ", no_alternative " << result.stats.rl_no_alternative
            << "), unprocessed " << result.stats.unprocessed << "\n";
  std::cout << "stored trajectories " << result.store.total_trajectories()
            << " across " << result.store.trees.size() << " trees\n";
  std::cout << "artifacts in " << out_dir << "\n";
  return 0;
}

inline int cmd_forge_export(const std::string& run_dir) {
  const LoadedRecords loaded = load_records(run_dir + "/records.jsonl");
  const std::string cold_path = run_dir + "/cold_start.jsonl";
  const std::string rl_path = run_dir + "/rl.jsonl";
  std::ofstream cold(cold_path, std::ios::trunc | std::ios::binary);
  if (!cold) throw IoError("cannot open for writing: " + cold_path);
  std::ofstream rl(rl_path, std::ios::trunc | std::ios::binary);
  if (!rl) throw IoError("cannot open for writing: " + rl_path);

  int n_cold = 0;
  int n_rl = 0;
  for (const DatasetRecord& rec : loaded.records) {
    if (rec.split == Split::ColdStart) {
      nlohmann::json j;
      j["task"] = task_to_json(rec.task);
      j["trajectories"] = {render(rec.trajectories[0]),
                           render(rec.trajectories[1])};
      j["provenance"] = rec.provenance;
      cold << j.dump() << "\n";
      ++n_cold;
    } else {
      nlohmann::json j;
      j["task"] = task_to_json(rec.task);
      rl << j.dump() << "\n";
      ++n_rl;
    }
  }
  std::cout << "exported " << n_cold << " cold-start and " << n_rl
            << " rl records";
  if (loaded.corrupt_records)
    std::cout << " (skipped " << loaded.corrupt_records << " corrupt)";
  std::cout << "\n";
  return 0;
}

inline int cmd_forge_stats(const std::string& run_dir) {
  const LoadedRecords loaded = load_records(run_dir + "/records.jsonl");
  const LoadedTreeStore trees = load_tree_store(run_dir + "/trees.jsonl");

  int n_cold = 0;
  int n_rl = 0;
  for (const DatasetRecord& rec : loaded.records)
    (rec.split == Split::ColdStart ? n_cold : n_rl) += 1;

  std::cout << "records " << loaded.records.size() << ": cold_start "
            << n_cold << ", rl " << n_rl << ", corrupt skipped "
            << loaded.corrupt_records << "\n";
  for (const auto& [kind, tree] : trees.store.trees) {
    std::cout << "tree " << question_kind_name(kind) << ": "
              << tree.size() << " trajectories, "
              << tree.patterns().size() << " patterns\n";
    for (const ActionPattern& pat : tree.patterns()) {
      int uses = 0;
      if (const auto* stored = tree.find(pat))
        for (const StoredTrajectory& st : *stored) uses += st.uses;
      std::cout << "  " << pat.str() << " x"
                << (tree.find(pat) ? tree.find(pat)->size() : 0)
                << " (retrievals " << uses << ")\n";
    }
  }
  if (trees.corrupt_records)
    std::cout << "tree file: skipped " << trees.corrupt_records
              << " corrupt lines\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

inline int cmd_eval(const std::string& run_dir, int passk, bool unbiased) {
  if (passk < 1) throw ConfigError("eval: --passk must be >= 1");
  const nlohmann::json manifest =
      detail::load_json_file(run_dir + "/manifest.json");
  if (!manifest.contains("config"))
    throw ConfigError("manifest.json has no config block");
  const RunConfig cfg = config_from_json(manifest.at("config"));

  const nlohmann::json pj =
      detail::load_json_file(run_dir + "/final_params.json");
  PolicyModel model(cfg.family(), cfg.embed_dim, mix64(cfg.seed, 0xE3Bull),
                    cfg.max_len);
  PolicyParameters params;
  try {
    params.w = pj.at("weights").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("final_params.json: ") + e.what());
  }
  if (static_cast<int>(params.w.size()) != model.param_count())
    throw ConfigError("final_params.json weight shape does not match config");

  const std::vector<TaskInstance> tasks = make_eval_task_set(cfg);
  Rng rng(mix64(cfg.seed, 0xFEEDull), 0xEA11ull);
  const EvalOutcome outcome =
      evaluate_policy(model, params, tasks, passk, cfg.eval_temperature,
                      cfg.eval_top_p, rng);

  std::cout << "eval over " << tasks.size() << " tasks, " << passk
            << " attempts each (temperature " << fmt_g(cfg.eval_temperature)
            << ", top-p " << fmt_g(cfg.eval_top_p) << ")\n";
  for (int k : {1, 2, 4, 8, 16}) {
    if (k > passk) continue;
    std::cout << "pass@" << k << " " << fmt_g(pass_at_k(outcome.attempt_matrix, k));
    if (unbiased)
      std::cout << " (unbiased "
                << fmt_g(pass_at_k(outcome.attempt_matrix, k, true)) << ")";
    std::cout << "\n";
  }
  if (passk != 1 && passk != 2 && passk != 4 && passk != 8 && passk != 16) {
    std::cout << "pass@" << passk << " "
              << fmt_g(pass_at_k(outcome.attempt_matrix, passk));
    if (unbiased)
      std::cout << " (unbiased "
                << fmt_g(pass_at_k(outcome.attempt_matrix, passk, true))
                << ")";
    std::cout << "\n";
  }
  static const int ks[] = {1};
  const EvalReport report = make_report(outcome, ks);
  std::cout << "mean acc " << fmt_g(report.mean_acc) << ", entropy "
            << fmt_g(report.mean_entropy) << ", distinct correct patterns "
            << report.distinct_correct_patterns << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// check

inline int cmd_check(const std::string& config_path) {
  RunConfig cfg = detail::load_or_default(config_path);
  cfg.validate();
  RunConfig effective = cfg;
  effective.apply_variant();

  std::cout << "config ok\n";
  std::cout << "optimization: clip " << fmt_g(cfg.clip_ratio_low) << "/"
            << fmt_g(cfg.clip_ratio_high) << ", rollout_batch_size "
            << cfg.rollout_batch_size << ", global_batch_size "
            << cfg.global_batch_size << ", n " << cfg.n << ", temperature "
            << fmt_g(cfg.temperature) << "\n";
  std::cout << "filter: max_num_gen_batches " << cfg.filter_max_num_gen_batches
            << ", metric " << cfg.filter_metric << "\n";
  std::cout << "optimizer: lr " << fmt_g(cfg.lr) << ", max_grad_norm "
            << fmt_g(cfg.max_grad_norm) << "\n";
  std::cout << "schedule: variant " << cfg.variant << " -> stage1 "
            << effective.stage1_steps << ", stage2 " << effective.stage2_steps
            << ", penalty_coeff " << fmt_g(cfg.penalty_coeff) << ", anneal "
            << effective.anneal << "\n";
  std::cout << "family: k " << cfg.k_min << ".." << cfg.k_max
            << ", feature_dim " << cfg.feature_dim << ", feature_max "
            << cfg.feature_max << ", alphabet " << cfg.alphabet_size << "\n";
  std::cout << "policy: embed_dim " << cfg.embed_dim << ", max_len "
            << cfg.max_len << "\n";
  std::cout << "eval: temperature " << fmt_g(cfg.eval_temperature)
            << ", top_p " << fmt_g(cfg.eval_top_p) << ", attempts "
            << cfg.eval_attempts << ", tasks " << cfg.eval_tasks
            << ", interval " << cfg.eval_interval << "\n";
  std::cout << "seed: " << cfg.seed << "\n";
  return 0;
}

}  // namespace mact
