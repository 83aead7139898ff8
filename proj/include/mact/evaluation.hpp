#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mact/common.hpp"
#include "mact/policy.hpp"
#include "mact/reward.hpp"
#include "mact/tasks.hpp"
#include "mact/trajectory.hpp"

namespace mact {

struct InsufficientAttempts : DomainError {
  using DomainError::DomainError;
};

// ---------------------------------------------------------------------------
// Pass@K

// Empirical pass@k: the fraction of tasks whose first k attempts contain at
// least one success. With `unbiased` set, uses the combinatorial estimator
// 1 - C(n-c, k)/C(n, k) per task instead (n attempts, c successes).
inline double pass_at_k(const std::vector<std::vector<bool>>& per_task,
                        int k, bool unbiased = false) {
  if (k < 1) throw DomainError("pass_at_k: k must be >= 1");
  if (per_task.empty()) throw DomainError("pass_at_k: no tasks");
  for (const auto& attempts : per_task)
    if (static_cast<int>(attempts.size()) < k)
      throw InsufficientAttempts("pass_at_k: task has fewer than k attempts");

  double total = 0.0;
  for (const auto& attempts : per_task) {
    if (!unbiased) {
      bool hit = false;
      for (int i = 0; i < k; ++i) hit = hit || attempts[i];
      total += hit ? 1.0 : 0.0;
    } else {
      const int n = static_cast<int>(attempts.size());
      int c = 0;
      for (bool b : attempts) c += b ? 1 : 0;
      if (n - c < k) {
        total += 1.0;  // every k-subset contains a success
      } else {
        double miss = 1.0;
        for (int i = 0; i < k; ++i)
          miss *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
        total += 1.0 - miss;
      }
    }
  }
  return total / static_cast<double>(per_task.size());
}

// ---------------------------------------------------------------------------
// Diversity

struct EvalAttempt {
  ActionPattern pattern;  // empty for unparseable rollouts
  bool correct = false;
};

// Pattern histogram over attempts; keys are compact pattern strings so the
// map iterates deterministically.
inline std::map<std::string, int> diversity_histogram(
    std::span<const EvalAttempt> attempts, bool correct_only) {
  std::map<std::string, int> hist;
  for (const EvalAttempt& a : attempts) {
    if (correct_only && !a.correct) continue;
    hist[a.pattern.str()] += 1;
  }
  return hist;
}

// ---------------------------------------------------------------------------
// Policy evaluation

struct EvalOutcome {
  std::vector<std::vector<bool>> attempt_matrix;  // tasks x attempts
  std::vector<EvalAttempt> attempts;              // flattened, task-major
  double mean_entropy = 0.0;  // temperature-1 entropy along eval rollouts
};

struct EvalReport {
  std::map<int, double> pass_at;  // k -> empirical pass@k
  double mean_acc = 0.0;          // fraction of correct attempts overall
  double mean_entropy = 0.0;
  int distinct_correct_patterns = 0;
};

// Samples `attempts` rollouts per task at eval decoding settings and scores
// answer correctness against the gold label. Correctness ignores format
// validity: only the final answer is judged, matching the pass@k protocol.
inline EvalOutcome evaluate_policy(const PolicyModel& model,
                                   const PolicyParameters& params,
                                   std::span<const TaskInstance> tasks,
                                   int attempts, double temperature,
                                   double top_p, Rng& rng) {
  if (tasks.empty()) throw DomainError("evaluate_policy: no tasks");
  if (attempts < 1) throw DomainError("evaluate_policy: attempts must be >= 1");
  EvalOutcome out;
  PolicyModel::SampleStats stats;
  for (const TaskInstance& task : tasks) {
    std::vector<Rollout> rollouts = model.sample_rollouts(
        params, task, attempts, temperature, rng, top_p, &stats);
    std::vector<bool> row;
    row.reserve(rollouts.size());
    for (const Rollout& r : rollouts) {
      EvalAttempt attempt;
      std::optional<Trajectory> traj =
          rollout_to_trajectory(model, r.token_ids);
      if (traj) {
        attempt.pattern = extract_pattern(*traj);
        attempt.correct = verify_answer(traj->answer_payload(),
                                        task.gold_answer,
                                        VerifyMode::ExactMatch);
      }
      row.push_back(attempt.correct);
      out.attempts.push_back(std::move(attempt));
    }
    out.attempt_matrix.push_back(std::move(row));
  }
  out.mean_entropy = stats.steps ? stats.entropy_sum / stats.steps : 0.0;
  return out;
}

inline EvalReport make_report(const EvalOutcome& outcome,
                              std::span<const int> ks) {
  EvalReport rep;
  for (int k : ks) rep.pass_at[k] = pass_at_k(outcome.attempt_matrix, k);
  long correct = 0;
  for (const EvalAttempt& a : outcome.attempts) correct += a.correct ? 1 : 0;
  rep.mean_acc = outcome.attempts.empty()
                     ? 0.0
                     : static_cast<double>(correct) /
                           static_cast<double>(outcome.attempts.size());
  rep.mean_entropy = outcome.mean_entropy;
  rep.distinct_correct_patterns = static_cast<int>(
      diversity_histogram(outcome.attempts, /*correct_only=*/true).size());
  return rep;
}

// ---------------------------------------------------------------------------
// CSV helpers

// Fixed float formatting for every CSV the project writes; byte-stable
// across runs because it never depends on locale or stream state.
inline std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

// Selects named columns from CSV text (comment lines start with '#') and
// re-emits them verbatim under a documenting header. Pure string
// processing: no value is ever parsed or re-formatted, so output bytes are
// a function of input bytes alone.
inline std::string project_csv(const std::string& csv_text,
                               const std::vector<std::string>& columns,
                               const std::string& comment) {
  std::istringstream in(csv_text);
  std::string line;
  std::vector<int> indices;
  std::ostringstream out;
  out << "# " << comment << "\n";
  bool header_done = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (!header_done) {
      for (const std::string& want : columns) {
        auto it = std::find(cells.begin(), cells.end(), want);
        if (it == cells.end())
          throw DomainError("emit_curves: missing column " + want);
        indices.push_back(static_cast<int>(it - cells.begin()));
      }
      header_done = true;
    }
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (i) out << ",";
      out << (indices[i] < static_cast<int>(cells.size())
                  ? cells[indices[i]]
                  : "");
    }
    out << "\n";
  }
  if (!header_done) throw DomainError("emit_curves: empty log");
  return out.str();
}

inline void write_text_file(const std::string& path,
                            const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

// Extracts the four plot-ready curves from the training logs. `metrics_csv`
// is the per-step log, `eval_csv` the per-checkpoint log; both are consumed
// as text, making the outputs byte-stable for identical inputs. Returns the
// written paths.
inline std::vector<std::string> emit_curves(const std::string& metrics_csv,
                                            const std::string& eval_csv,
                                            const std::string& out_dir) {
  const std::string sep = "/";
  std::vector<std::string> written;
  struct Slice {
    const char* file;
    const std::string* source;
    std::vector<std::string> columns;
    const char* comment;
  };
  const Slice slices[] = {
      {"entropy.csv", &metrics_csv, {"step", "entropy"},
       "columns: step, mean per-token policy entropy (nats); one row per "
       "training step"},
      {"reward.csv", &metrics_csv, {"step", "reward_mean", "acc_mean"},
       "columns: step, mean combined reward, mean accuracy over the step's "
       "rollouts; one row per training step"},
      {"diversity.csv", &metrics_csv,
       {"step", "distinct_patterns", "distinct_correct_patterns"},
       "columns: step, distinct action patterns over the step's rollouts "
       "(all / correct only); one row per training step"},
      {"passk.csv", &eval_csv,
       {"step", "pass1", "pass2", "pass4", "pass8", "pass16"},
       "columns: step, empirical pass@{1,2,4,8,16}; one row per evaluation "
       "checkpoint"},
  };
  for (const Slice& s : slices) {
    const std::string path = out_dir + sep + s.file;
    detail::write_text_file(
        path, detail::project_csv(*s.source, s.columns, s.comment));
    written.push_back(path);
  }
  return written;
}

}  // namespace mact
