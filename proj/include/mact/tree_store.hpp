#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mact/common.hpp"
#include "mact/reward.hpp"
#include "mact/rng.hpp"
#include "mact/tasks.hpp"
#include "mact/trajectory.hpp"

namespace mact {

// Raised when an oracle, asked to follow a guide pattern, returns a
// trajectory with a different pattern even after retries.
struct PatternViolation : OracleError {
  using OracleError::OracleError;
};

// ---------------------------------------------------------------------------
// Pattern similarity

inline int levenshtein(const std::vector<ActionKind>& a,
                       const std::vector<ActionKind>& b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<int> prev(m + 1);
  std::vector<int> cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

// 1 - edit_distance / max(len); 1 for identical patterns, 0 for fully
// disjoint patterns of equal length.
inline double pattern_similarity(const ActionPattern& a,
                                 const ActionPattern& b) {
  const std::size_t longest = std::max(a.symbols.size(), b.symbols.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a.symbols, b.symbols)) /
                   static_cast<double>(longest);
}

// ---------------------------------------------------------------------------
// Trajectory tree

struct StoredTrajectory {
  Trajectory traj;
  std::string rendered;  // dedup key
  int uses = 0;
};

// Prefix tree keyed by action symbols. Terminal payloads sit on the node
// reached by the full pattern; identical rendered trajectories are stored
// once. Every stored path must end with the Answer symbol.
class TrajectoryTree {
 public:
  bool insert(const Trajectory& traj, int uses = 0) {
    const ActionPattern pat = extract_pattern(traj);
    if (pat.empty() || pat.symbols.back() != ActionKind::Answer)
      throw DomainError("tree insert: pattern must end with Answer");
    Node* node = &root_;
    for (ActionKind k : pat.symbols) {
      auto& child = node->children[k];
      if (!child) child = std::make_unique<Node>();
      node = child.get();
    }
    std::string rendered = render(traj);
    for (const StoredTrajectory& st : node->stored)
      if (st.rendered == rendered) return false;
    node->stored.push_back(StoredTrajectory{traj, std::move(rendered), uses});
    ++size_;
    return true;
  }

  const std::vector<StoredTrajectory>* find(const ActionPattern& pat) const {
    const Node* node = walk(pat);
    return node && !node->stored.empty() ? &node->stored : nullptr;
  }

  // Counts one retrieval use against every record under the pattern's node.
  void bump_use(const ActionPattern& pat) {
    Node* node = const_cast<Node*>(walk(pat));
    if (!node) return;
    for (StoredTrajectory& st : node->stored) ++st.uses;
  }

  // All patterns with at least one stored trajectory, in canonical order
  // (shorter first, then lexicographic).
  std::vector<ActionPattern> patterns() const {
    std::vector<ActionPattern> out;
    ActionPattern path;
    collect(&root_, path, out);
    std::sort(out.begin(), out.end(), pattern_less);
    return out;
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const ActionPattern& pat : patterns())
      for (const StoredTrajectory& st : *find(pat)) fn(pat, st);
  }

  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

 private:
  struct Node {
    std::map<ActionKind, std::unique_ptr<Node>> children;
    std::vector<StoredTrajectory> stored;
  };

  const Node* walk(const ActionPattern& pat) const {
    const Node* node = &root_;
    for (ActionKind k : pat.symbols) {
      auto it = node->children.find(k);
      if (it == node->children.end()) return nullptr;
      node = it->second.get();
    }
    return node;
  }

  void collect(const Node* node, ActionPattern& path,
               std::vector<ActionPattern>& out) const {
    if (!node->stored.empty()) out.push_back(path);
    for (const auto& [kind, child] : node->children) {
      path.symbols.push_back(kind);
      collect(child.get(), path, out);
      path.symbols.pop_back();
    }
  }

  Node root_;
  std::size_t size_ = 0;
};

// One tree per question kind.
struct TreeStore {
  std::map<QuestionKind, TrajectoryTree> trees;

  TrajectoryTree& tree_for(QuestionKind k) { return trees[k]; }
  const TrajectoryTree* tree_for(QuestionKind k) const {
    auto it = trees.find(k);
    return it == trees.end() ? nullptr : &it->second;
  }
  std::size_t total_trajectories() const {
    std::size_t n = 0;
    for (const auto& [k, t] : trees) n += t.size();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Oracles

class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual const char* name() const = 0;
  // Produces tagged trajectory text for the task. When `guide` is set the
  // output is expected to follow that action pattern exactly.
  virtual std::string generate(const TaskInstance& task,
                               const std::optional<ActionPattern>& guide) = 0;
};

namespace detail {

// Deterministic uniform draw in [0,1) from hashed identifiers; pure, so
// oracle behavior is independent of call order.
inline double hash01(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return static_cast<double>(mix64(mix64(a, b), c) >> 11) * 0x1.0p-53;
}

inline std::string segment_content(ActionKind kind, const TaskInstance& task,
                                   std::size_t position,
                                   const std::string& answer) {
  switch (kind) {
    case ActionKind::Global:
      return "survey all " + std::to_string(task.panels.size()) + " panels";
    case ActionKind::Focus:
      return "panel " +
             std::to_string(mix64(task.task_id, position) %
                            std::max<std::size_t>(task.panels.size(), 1));
    case ActionKind::Hint:
      return "ties break toward the first panel";
    case ActionKind::Think:
      return std::string("work through the ") +
             question_kind_name(task.question_kind) + " question";
    case ActionKind::Answer:
      return answer;
  }
  return "";
}

inline Trajectory make_mock_trajectory(const ActionPattern& pattern,
                                       const TaskInstance& task,
                                       const std::string& answer) {
  Trajectory traj;
  for (std::size_t i = 0; i < pattern.symbols.size(); ++i) {
    Segment seg;
    seg.kind = pattern.symbols[i];
    seg.content = segment_content(seg.kind, task, i, answer);
    traj.segments.push_back(std::move(seg));
  }
  return traj;
}

inline std::string wrong_letter(const TaskInstance& task, int alphabet_size,
                                std::uint64_t salt) {
  const int gold = task.gold_answer.empty() ? 0 : task.gold_answer[0] - 'A';
  const int offset =
      1 + static_cast<int>(mix64(task.task_id, salt) %
                           static_cast<std::uint64_t>(alphabet_size - 1));
  return std::string(1, static_cast<char>('A' + (gold + offset) %
                                                    alphabet_size));
}

}  // namespace detail

// Deterministic stand-in for the smaller model: picks a pattern from a fixed
// pool by task hash and answers correctly with the configured probability.
// Pure in (seed, task), so repeated calls agree.
class MockStudent : public Oracle {
 public:
  explicit MockStudent(std::uint64_t seed, double accuracy = 0.3,
                       int alphabet_size = 6)
      : seed_(seed), accuracy_(accuracy), alphabet_size_(alphabet_size) {
    const char* pool[] = {"TA",   "GTA",   "GFTA", "GHTA",
                          "FTA",  "GFHTA", "HTA",  "GFFTA"};
    for (const char* p : pool) pool_.push_back(*ActionPattern::from_str(p));
  }

  const char* name() const override { return "mock-student"; }

  std::string generate(const TaskInstance& task,
                       const std::optional<ActionPattern>& guide) override {
    const ActionPattern& pattern =
        guide ? *guide
              : pool_[mix64(seed_, mix64(task.task_id, 0x51)) % pool_.size()];
    const bool correct =
        detail::hash01(seed_, task.task_id, 0x52) < accuracy_;
    const std::string answer =
        correct ? task.gold_answer
                : detail::wrong_letter(task, alphabet_size_, seed_ ^ 0x52);
    return render(detail::make_mock_trajectory(pattern, task, answer));
  }

 private:
  std::uint64_t seed_;
  double accuracy_;
  int alphabet_size_;
  std::vector<ActionPattern> pool_;
};

// Deterministic stand-in for the stronger model: reproduces the guide
// pattern exactly and answers correctly with the configured probability.
// The correctness draw varies with the guide pattern, so retrieval attempts
// across candidate patterns are independent coin flips.
class MockTeacher : public Oracle {
 public:
  explicit MockTeacher(std::uint64_t seed, double accuracy = 0.8,
                       int alphabet_size = 6)
      : seed_(seed), accuracy_(accuracy), alphabet_size_(alphabet_size) {}

  const char* name() const override { return "mock-teacher"; }

  std::string generate(const TaskInstance& task,
                       const std::optional<ActionPattern>& guide) override {
    static const ActionPattern fallback = *ActionPattern::from_str("TA");
    const ActionPattern& pattern = guide ? *guide : fallback;
    const std::uint64_t pat_hash = hash_str(pattern.str());
    const bool correct =
        detail::hash01(seed_, mix64(task.task_id, pat_hash), 0x53) <
        accuracy_;
    const std::string answer =
        correct ? task.gold_answer
                : detail::wrong_letter(task, alphabet_size_,
                                       seed_ ^ pat_hash);
    return render(detail::make_mock_trajectory(pattern, task, answer));
  }

 private:
  std::uint64_t seed_;
  double accuracy_;
  int alphabet_size_;
};

// ---------------------------------------------------------------------------
// Pipeline steps

// Asks the oracle for a trajectory and parses it; when `guide` is set, the
// output's pattern must match it exactly. Unparseable or pattern-violating
// outputs are re-requested up to `budget` attempts total.
inline Trajectory generate_checked(Oracle& oracle, const TaskInstance& task,
                                   const std::optional<ActionPattern>& guide,
                                   int budget = 3) {
  if (budget < 1) throw DomainError("generate_checked: budget must be >= 1");
  std::string last_problem;
  for (int attempt = 0; attempt < budget; ++attempt) {
    const std::string text = oracle.generate(task, guide);
    ParseResult parsed = parse_trajectory(text);
    if (!parsed.ok()) {
      last_problem = std::string("unparseable output: ") +
                     parse_error_name(parsed.error().code);
      continue;
    }
    if (guide && !(extract_pattern(parsed.value()) == *guide)) {
      last_problem = "pattern mismatch: wanted " + guide->str() + ", got " +
                     extract_pattern(parsed.value()).str();
      continue;
    }
    return std::move(parsed.value());
  }
  if (guide && last_problem.rfind("pattern mismatch", 0) == 0)
    throw PatternViolation(std::string(oracle.name()) + ": " + last_problem);
  throw OracleError(std::string(oracle.name()) + ": " + last_problem);
}

// Step 1: the student attempts the task freely; kept regardless of
// correctness.
inline Trajectory step1_student_attempt(Oracle& student,
                                        const TaskInstance& task,
                                        int budget = 3) {
  return generate_checked(student, task, std::nullopt, budget);
}

// Step 2: the teacher re-solves the task constrained to the student's
// pattern; correctness is judged by the answer verifier.
inline std::pair<Trajectory, bool> step2_teacher_refine(
    Oracle& teacher, const TaskInstance& task, const Trajectory& student_traj,
    int budget = 3) {
  const ActionPattern guide = extract_pattern(student_traj);
  Trajectory traj = generate_checked(teacher, task, guide, budget);
  const bool correct =
      verify_answer(traj.answer_payload(), task.gold_answer,
                    VerifyMode::ExactMatch);
  return {std::move(traj), correct};
}

struct Step3Result {
  std::optional<Trajectory> found;
  std::vector<ActionPattern> tried;  // candidate order actually attempted
};

// Candidate patterns for retrieval: everything in the tree except patterns
// identical to the base, sorted most-dissimilar first; ties break shorter
// first, then lexicographically.
inline std::vector<ActionPattern> step3_candidates(const TrajectoryTree& tree,
                                                   const ActionPattern& base) {
  std::vector<ActionPattern> c = tree.patterns();
  std::erase_if(c, [&](const ActionPattern& p) { return p == base; });
  std::stable_sort(c.begin(), c.end(),
                   [&](const ActionPattern& a, const ActionPattern& b) {
                     const double sa = pattern_similarity(a, base);
                     const double sb = pattern_similarity(b, base);
                     if (sa != sb) return sa < sb;
                     return pattern_less(a, b);
                   });
  return c;
}

// Step 3: walk candidates from most dissimilar to most similar, asking the
// teacher for a solution constrained to each; the first verified-correct
// trajectory wins. Candidates the teacher cannot pattern-match are skipped.
inline Step3Result step3_retrieve_alternative(TrajectoryTree& tree,
                                              const TaskInstance& task,
                                              const Trajectory& base,
                                              Oracle& teacher,
                                              int budget = 3) {
  const ActionPattern base_pat = extract_pattern(base);
  Step3Result result;
  for (const ActionPattern& cand : step3_candidates(tree, base_pat)) {
    result.tried.push_back(cand);
    Trajectory traj;
    try {
      traj = generate_checked(teacher, task, cand, budget);
    } catch (const PatternViolation&) {
      continue;
    }
    if (verify_answer(traj.answer_payload(), task.gold_answer,
                      VerifyMode::ExactMatch)) {
      tree.bump_use(cand);
      result.found = std::move(traj);
      return result;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Dataset records and routing

enum class Split { ColdStart, RL };

inline const char* split_name(Split s) {
  return s == Split::ColdStart ? "cold_start" : "rl";
}

struct DatasetRecord {
  TaskInstance task;
  Split split = Split::RL;
  std::vector<Trajectory> trajectories;  // exactly 2 for ColdStart, 0 for RL
  std::vector<std::string> provenance;   // one entry per trajectory
};

// Split rule: the teacher must solve the task under the student's pattern
// AND retrieval must supply a second, pattern-distinct correct trajectory;
// otherwise the instance is reserved for RL.
inline DatasetRecord route_record(const TaskInstance& task,
                                  const std::pair<Trajectory, bool>& step2,
                                  const Step3Result& step3) {
  DatasetRecord rec;
  rec.task = task;
  if (step2.second && step3.found) {
    rec.split = Split::ColdStart;
    rec.trajectories = {step2.first, *step3.found};
    rec.provenance = {"step2-teacher", "step3-retrieval"};
  } else {
    rec.split = Split::RL;
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Forge pipeline

struct ForgeConfig {
  int num_tasks = 500;
  std::uint64_t seed = 1;
  FamilyConfig family;
  int pattern_budget = 3;  // re-request budget for guided generation
  int retry_rounds = 1;    // extra passes over tasks hit by oracle errors
};

struct ForgeStats {
  int tasks_total = 0;
  int cold_start = 0;
  int rl_teacher_fail = 0;
  int rl_no_alternative = 0;
  int unprocessed = 0;
  int step3_attempts = 0;

  int rl_total() const { return rl_teacher_fail + rl_no_alternative; }
};

struct ForgeResult {
  std::vector<DatasetRecord> records;  // task order, processed tasks only
  TreeStore store;
  ForgeStats stats;
  std::vector<std::uint64_t> unprocessed_ids;
};

// Runs the full pipeline: phase A performs Steps 1-2 for every task and
// populates the per-kind trees from each correct Step-2 trajectory; phase B
// then runs Step-3 retrieval and routing. Trees start empty and retrieval
// only begins once all Step-2 results are in.
inline ForgeResult run_forge(Oracle& student, Oracle& teacher,
                             const ForgeConfig& cfg) {
  cfg.family.validate();
  if (cfg.num_tasks < 1) throw ConfigError("forge: num_tasks must be >= 1");

  ForgeResult out;
  out.stats.tasks_total = cfg.num_tasks;

  Rng task_rng(cfg.seed, 0xF0);
  std::vector<TaskInstance> tasks;
  tasks.reserve(static_cast<std::size_t>(cfg.num_tasks));
  for (int i = 0; i < cfg.num_tasks; ++i)
    tasks.push_back(generate_task(task_rng.next_u64(), cfg.family));

  struct Step2Slot {
    bool processed = false;
    Trajectory traj;
    bool correct = false;
  };
  std::vector<Step2Slot> step2(tasks.size());

  // Phase A: student attempt + teacher refinement; correct refinements seed
  // the trees.
  for (int round = 0; round <= cfg.retry_rounds; ++round) {
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (step2[i].processed) continue;
      try {
        Trajectory student_traj =
            step1_student_attempt(student, tasks[i], cfg.pattern_budget);
        auto [traj, correct] = step2_teacher_refine(
            teacher, tasks[i], student_traj, cfg.pattern_budget);
        step2[i] = {true, std::move(traj), correct};
      } catch (const OracleError&) {
        // Unprocessed this round; retried next round, reported if it never
        // succeeds.
      }
    }
  }
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!step2[i].processed) continue;
    if (!step2[i].correct) continue;
    const ActionPattern pat = extract_pattern(step2[i].traj);
    if (!pat.empty() && pat.symbols.back() == ActionKind::Answer)
      out.store.tree_for(tasks[i].question_kind).insert(step2[i].traj);
  }

  // Phase B: retrieval + routing.
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!step2[i].processed) {
      out.stats.unprocessed += 1;
      out.unprocessed_ids.push_back(tasks[i].task_id);
      continue;
    }
    Step3Result step3;
    if (step2[i].correct) {
      try {
        step3 = step3_retrieve_alternative(
            out.store.tree_for(tasks[i].question_kind), tasks[i],
            step2[i].traj, teacher, cfg.pattern_budget);
      } catch (const OracleError&) {
        out.stats.unprocessed += 1;
        out.unprocessed_ids.push_back(tasks[i].task_id);
        continue;
      }
      out.stats.step3_attempts += static_cast<int>(step3.tried.size());
    }
    DatasetRecord rec =
        route_record(tasks[i], {step2[i].traj, step2[i].correct}, step3);
    if (rec.split == Split::ColdStart)
      out.stats.cold_start += 1;
    else if (!step2[i].correct)
      out.stats.rl_teacher_fail += 1;
    else
      out.stats.rl_no_alternative += 1;
    out.records.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence (JSON lines)

inline nlohmann::json task_to_json(const TaskInstance& task) {
  nlohmann::json j;
  j["task_id"] = task.task_id;
  j["panels"] = task.panels;
  j["question_kind"] = question_kind_name(task.question_kind);
  j["gold_answer"] = task.gold_answer;
  if (task.key_panel)
    j["key_panel"] = *task.key_panel;
  else
    j["key_panel"] = nullptr;
  return j;
}

inline TaskInstance task_from_json(const nlohmann::json& j) {
  TaskInstance t;
  t.task_id = j.at("task_id").get<std::uint64_t>();
  t.panels = j.at("panels").get<std::vector<Panel>>();
  const std::string kind = j.at("question_kind").get<std::string>();
  if (kind == "aggregate")
    t.question_kind = QuestionKind::Aggregate;
  else if (kind == "compare")
    t.question_kind = QuestionKind::Compare;
  else if (kind == "locate")
    t.question_kind = QuestionKind::Locate;
  else
    throw DomainError("unknown question_kind: " + kind);
  t.gold_answer = j.at("gold_answer").get<std::string>();
  if (j.contains("key_panel") && !j.at("key_panel").is_null())
    t.key_panel = j.at("key_panel").get<int>();
  return t;
}

inline void persist_tree_store(const TreeStore& store,
                               const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& [kind, tree] : store.trees) {
    tree.for_each([&](const ActionPattern&, const StoredTrajectory& st) {
      nlohmann::json j;
      j["question_kind"] = question_kind_name(kind);
      j["trajectory"] = st.rendered;
      j["uses"] = st.uses;
      out << j.dump() << "\n";
    });
  }
  if (!out) throw IoError("write failed: " + path);
}

struct LoadedTreeStore {
  TreeStore store;
  int corrupt_records = 0;
};

// Rebuilds the store from JSON lines; malformed lines are skipped and
// counted rather than aborting the load.
inline LoadedTreeStore load_tree_store(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  LoadedTreeStore out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      const std::string kind_name = j.at("question_kind").get<std::string>();
      QuestionKind kind;
      if (kind_name == "aggregate")
        kind = QuestionKind::Aggregate;
      else if (kind_name == "compare")
        kind = QuestionKind::Compare;
      else if (kind_name == "locate")
        kind = QuestionKind::Locate;
      else
        throw DomainError("unknown question_kind");
      ParseResult parsed =
          parse_trajectory(j.at("trajectory").get<std::string>());
      if (!parsed.ok()) throw DomainError("unparseable trajectory");
      out.store.tree_for(kind).insert(parsed.value(),
                                      j.value("uses", 0));
    } catch (const std::exception&) {
      out.corrupt_records += 1;
    }
  }
  return out;
}

inline nlohmann::json record_to_json(const DatasetRecord& rec) {
  nlohmann::json j;
  j["task"] = task_to_json(rec.task);
  j["split"] = split_name(rec.split);
  nlohmann::json trajs = nlohmann::json::array();
  for (const Trajectory& t : rec.trajectories) trajs.push_back(render(t));
  j["trajectories"] = std::move(trajs);
  j["provenance"] = rec.provenance;
  return j;
}

inline std::optional<DatasetRecord> record_from_json(const nlohmann::json& j) {
  DatasetRecord rec;
  rec.task = task_from_json(j.at("task"));
  const std::string split = j.at("split").get<std::string>();
  if (split == "cold_start")
    rec.split = Split::ColdStart;
  else if (split == "rl")
    rec.split = Split::RL;
  else
    return std::nullopt;
  for (const auto& t : j.at("trajectories")) {
    ParseResult parsed = parse_trajectory(t.get<std::string>());
    if (!parsed.ok()) return std::nullopt;
    rec.trajectories.push_back(std::move(parsed.value()));
  }
  rec.provenance = j.value("provenance", std::vector<std::string>{});
  if (rec.split == Split::ColdStart && rec.trajectories.size() != 2)
    return std::nullopt;
  if (rec.split == Split::RL && !rec.trajectories.empty())
    return std::nullopt;
  return rec;
}

inline void persist_records(const std::vector<DatasetRecord>& records,
                            const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const DatasetRecord& rec : records) out << record_to_json(rec).dump()
                                               << "\n";
  if (!out) throw IoError("write failed: " + path);
}

struct LoadedRecords {
  std::vector<DatasetRecord> records;
  int corrupt_records = 0;
};

inline LoadedRecords load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  LoadedRecords out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      std::optional<DatasetRecord> rec =
          record_from_json(nlohmann::json::parse(line));
      if (rec)
        out.records.push_back(std::move(*rec));
      else
        out.corrupt_records += 1;
    } catch (const std::exception&) {
      out.corrupt_records += 1;
    }
  }
  return out;
}

}  // namespace mact
