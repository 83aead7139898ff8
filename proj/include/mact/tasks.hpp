#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mact/common.hpp"
#include "mact/rng.hpp"
#include "mact/trajectory.hpp"

namespace mact {

enum class QuestionKind : std::uint8_t { Aggregate, Compare, Locate };

inline const char* question_kind_name(QuestionKind k) {
  switch (k) {
    case QuestionKind::Aggregate: return "aggregate";
    case QuestionKind::Compare: return "compare";
    case QuestionKind::Locate: return "locate";
  }
  return "?";
}

// A symbolic panel: a short vector of small integer features. Panels stand
// in for images; everything downstream only ever looks at these numbers.
using Panel = std::vector<int>;

struct TaskInstance {
  std::uint64_t task_id = 0;
  std::vector<Panel> panels;
  QuestionKind question_kind = QuestionKind::Aggregate;
  std::string gold_answer;
  std::optional<int> key_panel;

  Modality modality() const {
    return panels.size() >= 2 ? Modality::MultiPanel : Modality::SinglePanel;
  }
};

struct FamilyConfig {
  int k_min = 2;            // panels per task, inclusive range
  int k_max = 4;
  int feature_dim = 3;      // features per panel
  int feature_max = 9;      // features drawn uniformly from [0, feature_max]
  int alphabet_size = 6;    // answers are the first `alphabet_size` letters
  std::vector<QuestionKind> kinds = {QuestionKind::Aggregate,
                                     QuestionKind::Compare,
                                     QuestionKind::Locate};

  void validate() const {
    if (alphabet_size < 2 || alphabet_size > 26)
      throw ConfigError("alphabet_size must be in [2, 26]");
    if (k_min < 1 || k_max < k_min)
      throw ConfigError("need 1 <= k_min <= k_max");
    if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
    if (feature_max < 1) throw ConfigError("feature_max must be >= 1");
    if (kinds.empty()) throw ConfigError("no question kinds enabled");
  }

  std::string answer_token(int idx) const {
    return std::string(1, static_cast<char>('A' + idx % alphabet_size));
  }
};

namespace detail {

inline int panel_sum(const Panel& p) {
  return std::accumulate(p.begin(), p.end(), 0);
}

inline int panel_max(const Panel& p) {
  int m = p.empty() ? 0 : p[0];
  for (int v : p) m = std::max(m, v);
  return m;
}

}  // namespace detail

// Gold answers, recomputable from the panels alone:
//   Aggregate: letter[(sum of all features) mod alphabet]     key_panel: none
//   Compare:   letter[argmax_j panel_sum(j) mod alphabet]     key_panel: argmax
//   Locate:    letter[argmax_j panel_max(j) mod alphabet]     key_panel: argmax
// Ties break toward the lowest panel index.
inline std::pair<std::string, std::optional<int>> solve_task(
    const std::vector<Panel>& panels, QuestionKind kind,
    const FamilyConfig& cfg) {
  switch (kind) {
    case QuestionKind::Aggregate: {
      long total = 0;
      for (const Panel& p : panels) total += detail::panel_sum(p);
      return {cfg.answer_token(static_cast<int>(total % cfg.alphabet_size)),
              std::nullopt};
    }
    case QuestionKind::Compare: {
      int best = 0;
      for (std::size_t j = 1; j < panels.size(); ++j)
        if (detail::panel_sum(panels[j]) > detail::panel_sum(panels[best]))
          best = static_cast<int>(j);
      return {cfg.answer_token(best), best};
    }
    case QuestionKind::Locate: {
      int best = 0;
      for (std::size_t j = 1; j < panels.size(); ++j)
        if (detail::panel_max(panels[j]) > detail::panel_max(panels[best]))
          best = static_cast<int>(j);
      return {cfg.answer_token(best), best};
    }
  }
  throw ConfigError("unknown question kind");
}

// Deterministic in (seed, config): the same seed always yields the same
// instance.
inline TaskInstance generate_task(std::uint64_t seed,
                                  const FamilyConfig& cfg) {
  cfg.validate();
  Rng rng(seed, /*stream=*/0x7a5bull);

  TaskInstance task;
  task.task_id = seed;
  const int k = static_cast<int>(rng.uniform_int(
      static_cast<std::uint64_t>(cfg.k_min),
      static_cast<std::uint64_t>(cfg.k_max)));
  task.panels.resize(k);
  for (Panel& p : task.panels) {
    p.resize(cfg.feature_dim);
    for (int& v : p)
      v = static_cast<int>(rng.uniform_int(0, cfg.feature_max));
  }
  task.question_kind =
      cfg.kinds[rng.uniform_int(0, cfg.kinds.size() - 1)];
  auto [gold, key] = solve_task(task.panels, task.question_kind, cfg);
  task.gold_answer = gold;
  task.key_panel = key;
  return task;
}

// Textual form of a task, used for the HTTP oracle contract and exports.
inline std::string render_prompt(const TaskInstance& task) {
  std::ostringstream out;
  out << "Panels:";
  for (const Panel& p : task.panels) {
    out << " [";
    for (std::size_t i = 0; i < p.size(); ++i)
      out << (i ? " " : "") << p[i];
    out << "]";
  }
  out << " Question: ";
  switch (task.question_kind) {
    case QuestionKind::Aggregate:
      out << "which letter indexes the total of all features, modulo the "
             "alphabet size?";
      break;
    case QuestionKind::Compare:
      out << "which panel has the largest feature total?";
      break;
    case QuestionKind::Locate:
      out << "which panel contains the single largest feature?";
      break;
  }
  out << " Answer with one letter.";
  return out.str();
}

}  // namespace mact
