#include <cstdint>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mact/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"meta-action trajectory RL engine"};
  app.require_subcommand(1);

  // train
  std::string train_config;
  std::string train_variant;
  std::optional<std::uint64_t> train_seed;
  std::string train_out = "runs/latest";
  CLI::App* train = app.add_subcommand(
      "train", "run the two-stage RL experiment and write run artifacts");
  train->add_option("--config", train_config, "JSON config file");
  train->add_option("--variant", train_variant,
                    "dapo | dps | dps_anneal | custom (overrides config)");
  train->add_option("--seed", train_seed, "seed override");
  train->add_option("--out", train_out, "output directory");

  // forge
  CLI::App* forge = app.add_subcommand(
      "forge", "retrieval-based tree sampling pipeline");
  forge->require_subcommand(1);

  std::string forge_config;
  std::string forge_out = "forge/latest";
  mact::ForgeCliOptions forge_opts;
  CLI::App* forge_run =
      forge->add_subcommand("run", "run steps 1-3 over generated tasks");
  forge_run->add_option("--config", forge_config, "JSON config file");
  forge_run->add_option("--oracle", forge_opts.oracle, "mock | http");
  forge_run->add_option("--endpoint", forge_opts.endpoint,
                        "base URL for --oracle http");
  forge_run->add_option("--tasks", forge_opts.num_tasks, "number of tasks");
  forge_run->add_option("--student-accuracy", forge_opts.student_accuracy,
                        "mock student answer accuracy");
  forge_run->add_option("--teacher-accuracy", forge_opts.teacher_accuracy,
                        "mock teacher answer accuracy");
  forge_run->add_option("--out", forge_out, "output directory");

  std::string forge_dir = "forge/latest";
  CLI::App* forge_export = forge->add_subcommand(
      "export", "write cold_start.jsonl / rl.jsonl from a forge run");
  forge_export->add_option("--dir", forge_dir, "forge run directory");

  std::string stats_dir = "forge/latest";
  CLI::App* forge_stats =
      forge->add_subcommand("stats", "print split and tree statistics");
  forge_stats->add_option("--dir", stats_dir, "forge run directory");

  // eval
  std::string eval_dir;
  int eval_passk = 16;
  bool eval_unbiased = false;
  CLI::App* eval =
      app.add_subcommand("eval", "re-evaluate a finished training run");
  eval->add_option("--dir", eval_dir, "training run directory")->required();
  eval->add_option("--passk", eval_passk, "attempts per task (reports pass@k)");
  eval->add_flag("--unbiased", eval_unbiased,
                 "also print the combinatorial unbiased estimator");

  // check
  std::string check_config;
  CLI::App* check = app.add_subcommand(
      "check", "validate a config and print effective hyperparameters");
  check->add_option("--config", check_config, "JSON config file");

  CLI11_PARSE(app, argc, argv);

  return mact::run_guarded([&]() -> int {
    if (train->parsed())
      return mact::cmd_train(train_config, train_variant, train_seed,
                             train_out);
    if (forge->parsed()) {
      if (forge_run->parsed())
        return mact::cmd_forge_run(forge_config, forge_opts, forge_out);
      if (forge_export->parsed()) return mact::cmd_forge_export(forge_dir);
      if (forge_stats->parsed()) return mact::cmd_forge_stats(stats_dir);
    }
    if (eval->parsed())
      return mact::cmd_eval(eval_dir, eval_passk, eval_unbiased);
    if (check->parsed()) return mact::cmd_check(check_config);
    return 1;
  });
}
