#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mact/common.hpp"

namespace mact {

// The five structured reasoning moves. A trajectory is a sequence of
// tagged segments and always terminates with Answer.
enum class ActionKind : std::uint8_t { Global, Focus, Hint, Think, Answer };

constexpr std::array<ActionKind, 5> kAllActions = {
    ActionKind::Global, ActionKind::Focus, ActionKind::Hint,
    ActionKind::Think, ActionKind::Answer};

inline const char* action_name(ActionKind k) {
  switch (k) {
    case ActionKind::Global: return "global";
    case ActionKind::Focus: return "focus";
    case ActionKind::Hint: return "hint";
    case ActionKind::Think: return "think";
    case ActionKind::Answer: return "answer";
  }
  return "?";
}

inline char action_symbol(ActionKind k) {
  switch (k) {
    case ActionKind::Global: return 'G';
    case ActionKind::Focus: return 'F';
    case ActionKind::Hint: return 'H';
    case ActionKind::Think: return 'T';
    case ActionKind::Answer: return 'A';
  }
  return '?';
}

inline std::optional<ActionKind> action_from_name(std::string_view name) {
  for (ActionKind k : kAllActions)
    if (name == action_name(k)) return k;
  return std::nullopt;
}

struct Segment {
  ActionKind kind = ActionKind::Think;
  // 0-based panel ordinal; only meaningful for Focus and optional there.
  std::optional<int> target;
  std::string content;

  bool operator==(const Segment&) const = default;
};

// Ordered list of tagged segments. Parsing does not enforce the terminal
// rule; validate_format does, so malformed-but-parseable text can still be
// scored (format reward 0) rather than dropped.
struct Trajectory {
  std::vector<Segment> segments;

  bool operator==(const Trajectory&) const = default;

  // Content of the first Answer segment, empty when there is none.
  std::string answer_payload() const {
    for (const Segment& s : segments)
      if (s.kind == ActionKind::Answer) return s.content;
    return {};
  }
};

// Content-free projection of a trajectory: the ordered action kinds.
// Focus targets and all contents are ignored, so two trajectories with the
// same moves compare equal no matter what they say.
struct ActionPattern {
  std::vector<ActionKind> symbols;

  bool operator==(const ActionPattern&) const = default;
  bool empty() const { return symbols.empty(); }
  std::size_t size() const { return symbols.size(); }

  // Compact form, e.g. "GFTA".
  std::string str() const {
    std::string s;
    s.reserve(symbols.size());
    for (ActionKind k : symbols) s.push_back(action_symbol(k));
    return s;
  }

  static std::optional<ActionPattern> from_str(std::string_view s) {
    ActionPattern p;
    p.symbols.reserve(s.size());
    for (char c : s) {
      bool found = false;
      for (ActionKind k : kAllActions)
        if (action_symbol(k) == c) {
          p.symbols.push_back(k);
          found = true;
        }
      if (!found) return std::nullopt;
    }
    return p;
  }
};

// Deterministic total order used wherever pattern ties must break the same
// way on every run: shorter first, then lexicographic on symbols.
inline bool pattern_less(const ActionPattern& a, const ActionPattern& b) {
  if (a.symbols.size() != b.symbols.size())
    return a.symbols.size() < b.symbols.size();
  return a.symbols < b.symbols;
}

inline ActionPattern extract_pattern(const Trajectory& traj) {
  ActionPattern p;
  p.symbols.reserve(traj.segments.size());
  for (const Segment& s : traj.segments) p.symbols.push_back(s.kind);
  return p;
}

// ---------------------------------------------------------------------------
// Parsing

enum class ParseErrorCode {
  EmptyInput,
  UnknownTag,
  UnclosedTag,
  TextOutsideTags,
};

struct ParseError {
  ParseErrorCode code;
  std::string detail;
};

inline const char* parse_error_name(ParseErrorCode c) {
  switch (c) {
    case ParseErrorCode::EmptyInput: return "EmptyInput";
    case ParseErrorCode::UnknownTag: return "UnknownTag";
    case ParseErrorCode::UnclosedTag: return "UnclosedTag";
    case ParseErrorCode::TextOutsideTags: return "TextOutsideTags";
  }
  return "?";
}

using ParseResult = Expected<Trajectory, ParseError>;

namespace detail {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

inline std::string_view trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

}  // namespace detail

// Parses the tagged surface form: lowercase tags, one per segment, no
// nesting. <focus> takes an optional i="k" panel attribute; no other tag
// takes attributes. Anything outside tags other than whitespace is an
// error. Structural rules (Answer last, Global presence) are left to
// validate_format.
inline ParseResult parse_trajectory(std::string_view text) {
  Trajectory traj;
  std::size_t pos = 0;
  const std::size_t n = text.size();

  auto skip_ws = [&] {
    while (pos < n && detail::is_space(text[pos])) ++pos;
  };

  skip_ws();
  if (pos == n) return ParseError{ParseErrorCode::EmptyInput, "no segments"};

  while (pos < n) {
    if (text[pos] != '<')
      return ParseError{ParseErrorCode::TextOutsideTags,
                        "stray text at offset " + std::to_string(pos)};
    std::size_t close = text.find('>', pos);
    if (close == std::string_view::npos)
      return ParseError{ParseErrorCode::UnclosedTag, "tag never closed"};

    std::string_view head = text.substr(pos + 1, close - pos - 1);
    // Split off attributes, if any.
    std::string_view name = head;
    std::string_view attrs;
    if (std::size_t sp = head.find(' '); sp != std::string_view::npos) {
      name = head.substr(0, sp);
      attrs = detail::trim(head.substr(sp + 1));
    }
    auto kind = action_from_name(name);
    if (!kind)
      return ParseError{ParseErrorCode::UnknownTag,
                        "<" + std::string(name) + ">"};

    Segment seg;
    seg.kind = *kind;
    if (!attrs.empty()) {
      // Only <focus i="k"> is recognized.
      if (seg.kind != ActionKind::Focus || attrs.substr(0, 3) != "i=\"" ||
          attrs.back() != '"')
        return ParseError{ParseErrorCode::UnknownTag,
                          "bad attribute on <" + std::string(name) + ">"};
      std::string digits(attrs.substr(3, attrs.size() - 4));
      try {
        seg.target = std::stoi(digits);
      } catch (const std::exception&) {
        return ParseError{ParseErrorCode::UnknownTag,
                          "bad focus index '" + digits + "'"};
      }
    }

    std::string closer = "</" + std::string(name) + ">";
    std::size_t body = close + 1;
    std::size_t end = text.find(closer, body);
    if (end == std::string_view::npos)
      return ParseError{ParseErrorCode::UnclosedTag,
                        "missing " + closer};
    seg.content = std::string(text.substr(body, end - body));
    traj.segments.push_back(std::move(seg));
    pos = end + closer.size();
    skip_ws();
  }

  return traj;
}

// Inverse of parse_trajectory up to whitespace normalization.
inline std::string render(const Trajectory& traj) {
  std::ostringstream out;
  for (const Segment& s : traj.segments) {
    out << '<' << action_name(s.kind);
    if (s.kind == ActionKind::Focus && s.target)
      out << " i=\"" << *s.target << '"';
    out << '>' << s.content << "</" << action_name(s.kind) << '>';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Format validation

enum class Modality : std::uint8_t { SinglePanel, MultiPanel };

enum class FormatViolation {
  NoAnswer,
  AnswerNotTerminal,
  MultipleAnswers,
  GlobalForbidden,   // single-panel input must not use <global>
  GlobalMissing,     // multi-panel input must use <global>
  EmptyContent,
};

inline const char* violation_name(FormatViolation v) {
  switch (v) {
    case FormatViolation::NoAnswer: return "NoAnswer";
    case FormatViolation::AnswerNotTerminal: return "AnswerNotTerminal";
    case FormatViolation::MultipleAnswers: return "MultipleAnswers";
    case FormatViolation::GlobalForbidden: return "GlobalForbidden";
    case FormatViolation::GlobalMissing: return "GlobalMissing";
    case FormatViolation::EmptyContent: return "EmptyContent";
  }
  return "?";
}

struct FormatVerdict {
  bool valid = false;
  std::vector<FormatViolation> violations;

  bool has(FormatViolation v) const {
    for (FormatViolation x : violations)
      if (x == v) return true;
    return false;
  }
};

// Pure structural check: exactly one Answer and it is last; <global> is
// mandatory for multi-panel inputs and forbidden for single-panel ones;
// every segment carries non-whitespace content. Content semantics are not
// inspected.
inline FormatVerdict validate_format(const Trajectory& traj,
                                     Modality modality) {
  FormatVerdict verdict;
  auto& v = verdict.violations;

  int answers = 0;
  bool has_global = false;
  bool answer_last = false;
  for (std::size_t i = 0; i < traj.segments.size(); ++i) {
    const Segment& s = traj.segments[i];
    if (s.kind == ActionKind::Answer) {
      ++answers;
      answer_last = (i + 1 == traj.segments.size());
    }
    if (s.kind == ActionKind::Global) has_global = true;
    if (detail::trim(s.content).empty()) {
      if (std::find(v.begin(), v.end(), FormatViolation::EmptyContent) ==
          v.end())
        v.push_back(FormatViolation::EmptyContent);
    }
  }

  if (answers == 0) {
    v.push_back(FormatViolation::NoAnswer);
  } else {
    if (answers > 1) v.push_back(FormatViolation::MultipleAnswers);
    if (!answer_last) v.push_back(FormatViolation::AnswerNotTerminal);
  }
  if (modality == Modality::SinglePanel && has_global)
    v.push_back(FormatViolation::GlobalForbidden);
  if (modality == Modality::MultiPanel && !has_global)
    v.push_back(FormatViolation::GlobalMissing);

  verdict.valid = v.empty();
  return verdict;
}

}  // namespace mact
