#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mact/common.hpp"
#include "mact/trajectory.hpp"

namespace mact {

// ---------------------------------------------------------------------------
// Answer verification

enum class VerifyMode { ExactMatch, CanonicalNumeric };

// Parses an answer string as a plain decimal or a simple fraction "a/b".
// nullopt when the text is not numeric; callers score that as incorrect.
inline std::optional<double> canonical_numeric_value(std::string_view text) {
  std::string s(detail::trim(text));
  if (s.empty()) return std::nullopt;

  auto parse_decimal = [](const std::string& t) -> std::optional<double> {
    if (t.empty()) return std::nullopt;
    const char* begin = t.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end != begin + t.size()) return std::nullopt;
    if (!std::isfinite(v)) return std::nullopt;
    return v;
  };

  if (std::size_t slash = s.find('/'); slash != std::string::npos) {
    auto num = parse_decimal(std::string(detail::trim(s.substr(0, slash))));
    auto den = parse_decimal(std::string(detail::trim(s.substr(slash + 1))));
    if (!num || !den || *den == 0.0) return std::nullopt;
    return *num / *den;
  }
  return parse_decimal(s);
}

// ExactMatch: case-insensitive, whitespace-trimmed equality.
// CanonicalNumeric: both sides parse as rationals/decimals and agree to a
// 1e-9 relative tolerance (anchored on the gold value); unparseable text is
// simply incorrect.
inline bool verify_answer(std::string_view payload, std::string_view gold,
                          VerifyMode mode) {
  if (detail::trim(gold).empty())
    throw DomainError("verify_answer: empty gold answer");
  switch (mode) {
    case VerifyMode::ExactMatch: {
      std::string_view a = detail::trim(payload);
      std::string_view b = detail::trim(gold);
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(a[i])) !=
            std::tolower(static_cast<unsigned char>(b[i])))
          return false;
      return true;
    }
    case VerifyMode::CanonicalNumeric: {
      auto a = canonical_numeric_value(payload);
      auto b = canonical_numeric_value(gold);
      if (!a || !b) return false;
      return std::abs(*a - *b) <= 1e-9 * std::max(1.0, std::abs(*b));
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Diversity-preserving reward

// Combined accuracy/format reward with the homogeneity penalty:
//
//   R = 0.5 * [ r_acc * (r_acc - (n_identical - 1) / (G - 1) * coeff) ]
//     + 0.5 * r_format
//
// n_identical counts group members (including self) sharing this rollout's
// action pattern, so a correct answer loses up to `coeff` of its accuracy
// term when the whole group used the same pattern, and nothing when its
// pattern is unique. The penalty rides on r_acc, so incorrect rollouts are
// never penalized for homogeneity.
inline double dps_reward(int r_acc, int r_format, int n_identical,
                         int group_size, double penalty_coeff) {
  if (group_size < 2)
    throw DomainError("dps_reward: group_size must be >= 2");
  if (n_identical < 1 || n_identical > group_size)
    throw DomainError("dps_reward: n_identical out of [1, G]");
  if (penalty_coeff < 0.0)
    throw DomainError("dps_reward: negative penalty_coeff");
  const double acc = static_cast<double>(r_acc);
  const double share =
      static_cast<double>(n_identical - 1) / static_cast<double>(group_size - 1);
  return 0.5 * (acc * (acc - share * penalty_coeff)) +
         0.5 * static_cast<double>(r_format);
}

// output[i] = number of group members (self included) whose pattern equals
// pattern[i].
inline std::vector<int> count_identical_patterns(
    const std::vector<ActionPattern>& group) {
  std::map<std::vector<ActionKind>, int> freq;
  for (const ActionPattern& p : group) ++freq[p.symbols];
  std::vector<int> out;
  out.reserve(group.size());
  for (const ActionPattern& p : group) out.push_back(freq[p.symbols]);
  return out;
}

// Soft length penalty: zero up to max_len - buffer, then a linear ramp down
// to -1 at max_len, and -1 beyond.
inline double overlong_penalty(int length, int max_len, int buffer) {
  if (buffer < 0 || max_len <= buffer)
    throw DomainError("overlong_penalty: need max_len > buffer >= 0");
  const int soft = max_len - buffer;
  if (length <= soft) return 0.0;
  if (length > max_len) return -1.0;
  return -static_cast<double>(length - soft) / static_cast<double>(buffer);
}

// ---------------------------------------------------------------------------
// Group scoring

struct RewardBreakdown {
  int r_acc = 0;
  int r_format = 0;
  int n_identical = 1;
  int group_size = 2;
  double overlong_penalty = 0.0;
  double combined = 0.0;
};

struct ScoredRollout {
  // Parsed form; nullopt when the raw text failed to parse (truncated or
  // malformed), which scores as r_format = 0 with an empty answer payload.
  std::optional<Trajectory> trajectory;
  int length_tokens = 0;
};

struct ScoreConfig {
  VerifyMode verify_mode = VerifyMode::ExactMatch;
  double penalty_coeff = 0.1;
  bool overlong_enabled = false;
  int overlong_max_len = 512;
  int overlong_buffer = 64;
};

// Unparseable rollouts enter the pattern statistics as an empty sentinel
// pattern. Valid patterns always end in Answer so the sentinel can never
// collide with them and never inflates their counts.
inline ActionPattern pattern_or_sentinel(const ScoredRollout& r) {
  if (!r.trajectory) return ActionPattern{};
  return extract_pattern(*r.trajectory);
}

// Scores every rollout of one group. Degenerate rollouts are scored (as
// zeros), never dropped; dropping is the dynamic-sampling filter's job.
inline std::vector<RewardBreakdown> score_group(
    const std::vector<ScoredRollout>& group, std::string_view gold,
    Modality modality, const ScoreConfig& cfg) {
  const int g = static_cast<int>(group.size());
  if (g < 2) throw DomainError("score_group: group size must be >= 2");

  std::vector<ActionPattern> patterns;
  patterns.reserve(group.size());
  for (const ScoredRollout& r : group) patterns.push_back(pattern_or_sentinel(r));
  const std::vector<int> identical = count_identical_patterns(patterns);

  std::vector<RewardBreakdown> out;
  out.reserve(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    const ScoredRollout& r = group[i];
    RewardBreakdown b;
    b.group_size = g;
    b.n_identical = identical[i];
    if (r.trajectory) {
      b.r_acc = verify_answer(r.trajectory->answer_payload(), gold,
                              cfg.verify_mode)
                    ? 1
                    : 0;
      b.r_format = validate_format(*r.trajectory, modality).valid ? 1 : 0;
    } else {
      b.r_acc = 0;
      b.r_format = 0;
    }
    b.combined = dps_reward(b.r_acc, b.r_format, b.n_identical, g,
                            cfg.penalty_coeff);
    if (cfg.overlong_enabled) {
      b.overlong_penalty = overlong_penalty(r.length_tokens,
                                            cfg.overlong_max_len,
                                            cfg.overlong_buffer);
      b.combined += b.overlong_penalty;
    }
    out.push_back(b);
  }
  return out;
}

}  // namespace mact
