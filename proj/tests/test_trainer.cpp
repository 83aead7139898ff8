#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mact/trainer.hpp"

using namespace mact;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Data rows of a CSV (comments and header skipped), split into cells.
std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  bool header_skipped = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_skipped) {
      header_skipped = true;
      continue;
    }
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        cells.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    cells.push_back(cur);
    rows.push_back(std::move(cells));
  }
  return rows;
}

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.variant = "custom";
  cfg.stage1_steps = 2;
  cfg.stage2_steps = 4;
  cfg.anneal = "linear";
  cfg.anneal_duration = 0;  // falls back to stage2_steps
  cfg.rollout_batch_size = 8;
  cfg.global_batch_size = 4;
  cfg.n = 4;
  cfg.eval_tasks = 8;
  cfg.eval_attempts = 16;
  cfg.eval_interval = 3;
  cfg.embed_dim = 8;
  cfg.max_len = 6;
  cfg.seed = 3;
  return cfg;
}

std::string fresh_dir(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "mact_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

// Column indices in metrics.csv.
constexpr int kColPenalty = 2;
constexpr int kColClip = 9;
constexpr int kColObjective = 10;
constexpr int kColGradNorm = 11;
constexpr int kColSkipped = 15;

}  // namespace

TEST_CASE("stage schedule maps from config") {
  RunConfig cfg;  // defaults: 700 + 300, coeff 0.1, linear
  StageSchedule s = StageSchedule::from_config(cfg);
  CHECK(s.stage1_steps == 700);
  CHECK(s.stage2_steps == 300);
  CHECK(s.penalty_coeff_stage1 == 0.1);
  CHECK(s.anneal == AnnealKind::LinearDecay);
  CHECK(s.anneal_duration == 300);  // defaulted to stage2_steps
  CHECK(s.rollout_batch == 64);
  CHECK(s.update_batch == 32);
  CHECK(s.group_size == 8);
  CHECK(s.temperature == 1.0);
  CHECK(s.max_gen_batches == 20);
  CHECK(s.total_steps() == 1000);

  cfg.anneal = "step_drop";
  cfg.anneal_duration = 50;
  StageSchedule s2 = StageSchedule::from_config(cfg);
  CHECK(s2.anneal == AnnealKind::StepDrop);
  CHECK(s2.anneal_duration == 50);
}

TEST_CASE("coeff_at: constant in stage 1, annealed in stage 2") {
  StageSchedule s;  // 700/300, coeff 0.1, linear over 300
  SECTION("stage 1 is flat") {
    CHECK(s.coeff_at(0) == 0.1);
    CHECK(s.coeff_at(350) == 0.1);
    CHECK(s.coeff_at(699) == 0.1);
    CHECK(s.stage_of(699) == 1);
    CHECK(s.stage_of(700) == 2);
  }
  SECTION("linear decay hits zero exactly at the end of the window") {
    CHECK(std::abs(s.coeff_at(700) - 0.1 * (1.0 - 1.0 / 300)) < 1e-15);
    CHECK(std::abs(s.coeff_at(850) - 0.1 * (1.0 - 151.0 / 300)) < 1e-15);
    CHECK(s.coeff_at(999) == 0.0);
  }
  SECTION("the whole schedule is non-increasing and non-negative") {
    double prev = s.coeff_at(0);
    for (int step = 1; step < s.total_steps(); ++step) {
      double cur = s.coeff_at(step);
      CHECK(cur <= prev + 1e-15);
      CHECK(cur >= 0.0);
      prev = cur;
    }
  }
  SECTION("step drop zeroes stage 2 immediately") {
    StageSchedule d = s;
    d.anneal = AnnealKind::StepDrop;
    CHECK(d.coeff_at(699) == 0.1);
    CHECK(d.coeff_at(700) == 0.0);
    CHECK(d.coeff_at(999) == 0.0);
  }
  SECTION("short anneal windows clamp at zero for the rest of stage 2") {
    StageSchedule w = s;
    w.anneal_duration = 10;
    CHECK(w.coeff_at(709) == 0.0);  // end of the window
    CHECK(w.coeff_at(710) == 0.0);  // clamped beyond it
    CHECK(w.coeff_at(700) > 0.0);
  }
  SECTION("validation") {
    StageSchedule bad = s;
    bad.group_size = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    StageSchedule bad2 = s;
    bad2.anneal_duration = 0;
    CHECK_THROWS_AS(bad2.validate(), ConfigError);
    StageSchedule ok = s;
    ok.stage2_steps = 0;
    ok.anneal_duration = 0;
    CHECK_NOTHROW(ok.validate());
  }
}

TEST_CASE("csv rows render through the stable float formatter") {
  StepMetrics m;
  m.step = 3;
  m.stage = 2;
  m.penalty_coeff = 0.075;
  m.reward_mean = 0.5;
  m.clip_fraction = 0.0;
  std::string row = m.csv_row();
  CHECK(row.rfind("3,2,0.075,0.5,", 0) == 0);
  // Header and row have the same number of columns.
  auto count = [](const std::string& s) {
    return std::count(s.begin(), s.end(), ',');
  };
  CHECK(count(row) == count(StepMetrics::csv_header()));

  EvalRow e;
  e.step = 9;
  for (int k : {1, 2, 4, 8, 16}) e.report.pass_at[k] = 0.25;
  CHECK(count(e.csv_row()) == count(EvalRow::csv_header()));
}

TEST_CASE("trainer wiring: run_step metrics and on-policy invariants") {
  RunConfig cfg = tiny_config();
  Trainer trainer(cfg);
  CHECK(trainer.eval_tasks().size() == 8);
  CHECK(trainer.model().param_count() ==
        static_cast<int>(trainer.params().w.size()));

  StepMetrics m = trainer.run_step(0);
  CHECK(m.step == 0);
  CHECK(m.stage == 1);
  CHECK(m.penalty_coeff == 0.1);
  CHECK(m.batches_sampled >= 1);
  CHECK(m.reward_mean >= 0.0);
  CHECK(m.reward_mean <= 1.0);
  CHECK(m.acc_mean >= 0.0);
  CHECK(m.acc_mean <= 1.0);
  CHECK(m.entropy > 0.0);
  CHECK(m.entropy < std::log(6.0) + 1e-9);
  CHECK(m.distinct_patterns >= 1);
  if (m.update_skipped == 0) {
    CHECK(m.groups_kept > 0);
    // Sampling and updating happen at the same parameters, so every ratio
    // is exactly 1 and nothing clips; the objective reduces to a
    // token-weighted mean of standardized advantages, bounded by sqrt(G-1).
    CHECK(m.clip_fraction == 0.0);
    CHECK(std::abs(m.objective) < std::sqrt(3.0) + 1e-9);
    CHECK(m.grad_norm > 0.0);
  }
}

TEST_CASE("evaluation checkpoints are isolated from the training stream") {
  RunConfig cfg = tiny_config();
  Trainer a(cfg);
  Trainer b(cfg);
  StepMetrics a0 = a.run_step(0);
  // Interleave evals in b only; the next training step must not notice.
  StepMetrics b0 = b.run_step(0);
  EvalRow be = b.run_eval(0);
  EvalRow be2 = b.run_eval(0);
  StepMetrics a1 = a.run_step(1);
  StepMetrics b1 = b.run_step(1);
  CHECK(a0.csv_row() == b0.csv_row());
  CHECK(a1.csv_row() == b1.csv_row());

  // At fixed parameters the checkpoint itself replays exactly.
  CHECK(be.csv_row() == be2.csv_row());
}

TEST_CASE("run_experiment produces the full artifact set deterministically") {
  RunConfig cfg = tiny_config();
  const std::string dir_a = fresh_dir("trainer_run_a");
  const std::string dir_b = fresh_dir("trainer_run_b");
  TrainResult ra = run_experiment(cfg, dir_a, {{"note", "unit"}});
  TrainResult rb = run_experiment(cfg, dir_b, {{"note", "unit"}});

  SECTION("metrics and eval logs are byte-identical across runs") {
    CHECK(slurp(dir_a + "/metrics.csv") == slurp(dir_b + "/metrics.csv"));
    CHECK(slurp(dir_a + "/eval.csv") == slurp(dir_b + "/eval.csv"));
    CHECK(slurp(dir_a + "/final_params.json") ==
          slurp(dir_b + "/final_params.json"));
    CHECK(slurp(dir_a + "/samples.jsonl") == slurp(dir_b + "/samples.jsonl"));
    CHECK(slurp(dir_a + "/manifest.json") == slurp(dir_b + "/manifest.json"));
  }
  SECTION("every artifact exists") {
    for (const char* f :
         {"metrics.csv", "eval.csv", "entropy.csv", "reward.csv",
          "diversity.csv", "passk.csv", "final_params.json", "samples.jsonl",
          "manifest.json"})
      CHECK(std::filesystem::exists(dir_a + "/" + f));
  }
  SECTION("metrics log has one row per step with the annealed penalty") {
    auto rows = csv_rows(slurp(dir_a + "/metrics.csv"));
    REQUIRE(rows.size() == 6);
    CHECK(rows[0][kColPenalty] == "0.1");
    CHECK(rows[1][kColPenalty] == "0.1");
    CHECK(rows[2][kColPenalty] == "0.075");
    CHECK(rows[3][kColPenalty] == "0.05");
    CHECK(rows[4][kColPenalty] == "0.025");
    CHECK(rows[5][kColPenalty] == "0");
    int updates = 0;
    for (const auto& row : rows) {
      REQUIRE(row.size() == 16);
      if (row[kColSkipped] == "0") {
        ++updates;
        // On-policy rows: ratios are exactly 1, so clipping never fires and
        // the objective stays within the standardized-advantage envelope.
        CHECK(row[kColClip] == "0");
        CHECK(std::abs(std::atof(row[kColObjective].c_str())) < 2.0);
        CHECK(std::atof(row[kColGradNorm].c_str()) > 0.0);
      }
    }
    CHECK(updates >= 4);  // the filter should rarely starve this family
  }
  SECTION("eval checkpoints land on the schedule") {
    auto rows = csv_rows(slurp(dir_a + "/eval.csv"));
    REQUIRE(rows.size() == 2);  // steps 2 and 5 (5 is also the final step)
    CHECK(rows[0][0] == "2");
    CHECK(rows[1][0] == "5");
    REQUIRE(rows[0].size() == 9);
  }
  SECTION("final params json matches the model shape") {
    nlohmann::json j = nlohmann::json::parse(slurp(dir_a +
                                                   "/final_params.json"));
    CHECK(j.at("vocab_size") == 12);
    CHECK(j.at("state_dim") == 22);  // embed 8 + vocab 12 + prev-sentinel + step
    CHECK(j.at("max_len") == 6);
    CHECK(j.at("alphabet_size") == 6);
    CHECK(j.at("weights").size() == 12u * 22u);
    CHECK(ra.params.w.size() == 12u * 22u);
    CHECK(ra.params.w == rb.params.w);
  }
  SECTION("samples are valid json lines with the advertised fields") {
    std::istringstream in(slurp(dir_a + "/samples.jsonl"));
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ++n;
      nlohmann::json j = nlohmann::json::parse(line);
      CHECK(j.contains("task_id"));
      CHECK(j.contains("gold_answer"));
      CHECK(j.contains("trajectory"));
      CHECK(j.contains("pattern"));
      CHECK(j.contains("acc"));
      CHECK(j.contains("format"));
    }
    CHECK(n == 16);  // min(4, eval_tasks) tasks x n rollouts
  }
  SECTION("manifest records effective and as-given configs") {
    nlohmann::json j = nlohmann::json::parse(slurp(dir_a + "/manifest.json"));
    CHECK(j.at("total_steps") == 6);
    CHECK(j.at("config").at("variant") == "custom");
    CHECK(j.at("config").at("stage1_steps") == 2);
    CHECK(j.at("config_as_given").at("stage1_steps") == 2);
    CHECK(j.at("meta").at("note") == "unit");
    CHECK(j.at("artifacts").size() == 8);
  }
  SECTION("the final eval report is populated") {
    CHECK(ra.final_eval.pass_at.count(1) == 1);
    CHECK(ra.final_eval.pass_at.count(16) == 1);
    CHECK(ra.final_eval.mean_acc >= 0.0);
    CHECK(ra.final_eval.mean_acc <= 1.0);
  }
}

TEST_CASE("variant application changes the effective schedule in manifests") {
  RunConfig cfg = tiny_config();
  cfg.variant = "dapo";
  const std::string dir = fresh_dir("trainer_run_dapo");
  run_experiment(cfg, dir);
  nlohmann::json j = nlohmann::json::parse(slurp(dir + "/manifest.json"));
  CHECK(j.at("config").at("stage1_steps") == 0);
  CHECK(j.at("config").at("stage2_steps") == 6);
  CHECK(j.at("config").at("anneal") == "step_drop");
  CHECK(j.at("config_as_given").at("stage1_steps") == 2);
  auto rows = csv_rows(slurp(dir + "/metrics.csv"));
  REQUIRE(rows.size() == 6);
  for (const auto& row : rows) CHECK(row[kColPenalty] == "0");
}

TEST_CASE("zero-step runs still evaluate the initial policy") {
  RunConfig cfg = tiny_config();
  cfg.stage1_steps = 0;
  cfg.stage2_steps = 0;
  const std::string dir = fresh_dir("trainer_run_zero");
  TrainResult res = run_experiment(cfg, dir);
  CHECK(csv_rows(slurp(dir + "/metrics.csv")).empty());
  auto evals = csv_rows(slurp(dir + "/eval.csv"));
  REQUIRE(evals.size() == 1);
  CHECK(evals[0][0] == "0");
  for (double w : res.params.w) CHECK(w == 0.0);  // untouched initialization
  CHECK(res.final_eval.pass_at.count(16) == 1);
}

TEST_CASE("trainer rejects invalid configurations up front") {
  RunConfig cfg = tiny_config();
  cfg.n = 1;
  CHECK_THROWS_AS(Trainer(cfg), ConfigError);
  RunConfig cfg2 = tiny_config();
  cfg2.global_batch_size = 99;
  CHECK_THROWS_AS(Trainer(cfg2), ConfigError);
}
