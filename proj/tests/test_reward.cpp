#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mact/reward.hpp"
#include "mact/rng.hpp"
#include "mact/trajectory.hpp"

using namespace mact;

namespace {

Trajectory parsed(const char* text) {
  auto r = parse_trajectory(text);
  REQUIRE(r.ok());
  return r.value();
}

ScoredRollout rollout(const char* text, int length = 4) {
  ScoredRollout r;
  r.trajectory = parsed(text);
  r.length_tokens = length;
  return r;
}

ScoredRollout unparseable(int length = 4) {
  ScoredRollout r;
  r.length_tokens = length;
  return r;
}

}  // namespace

TEST_CASE("dps_reward matches independently computed values") {
  const double tol = 1e-12;
  // (r_acc, r_format, n_identical, G, coeff) -> frozen value.
  struct Case {
    int acc, fmt, n, g;
    double coeff, expect;
  };
  const Case cases[] = {
      {1, 1, 1, 8, 0.1, 1.0},
      {1, 1, 2, 8, 0.1, 0.9928571428571429},
      {1, 1, 4, 8, 0.1, 0.9785714285714286},
      {1, 1, 8, 8, 0.1, 0.95},
      {1, 1, 2, 4, 0.1, 0.9833333333333333},
      {1, 1, 2, 2, 0.1, 0.95},
      {1, 0, 2, 2, 0.1, 0.45},
      {1, 1, 8, 8, 0.5, 0.75},
      {1, 1, 4, 8, 1.0, 0.7857142857142857},
      {1, 1, 2, 8, 0.2, 0.9857142857142857},
      {0, 1, 8, 8, 0.1, 0.5},
      {0, 0, 8, 8, 0.1, 0.0},
      {0, 1, 1, 2, 0.9, 0.5},
      {1, 0, 1, 8, 0.1, 0.5},
  };
  for (const Case& c : cases) {
    CAPTURE(c.acc, c.fmt, c.n, c.g, c.coeff);
    CHECK(std::abs(dps_reward(c.acc, c.fmt, c.n, c.g, c.coeff) - c.expect) <
          tol);
  }
}

TEST_CASE("dps_reward closed form for a fully correct G=8 group") {
  // acc=1, fmt=1, coeff=0.1, G=8: R(n) = 1 - (n-1)/140.
  for (int n = 1; n <= 8; ++n)
    CHECK(std::abs(dps_reward(1, 1, n, 8, 0.1) -
                   (1.0 - (n - 1) / 140.0)) < 1e-12);
}

TEST_CASE("dps_reward: homogeneity only penalizes correct rollouts") {
  // acc=0 collapses to 0.5 * fmt regardless of pattern counts.
  for (int g : {2, 4, 8})
    for (int n = 1; n <= g; ++n)
      for (double coeff : {0.0, 0.1, 1.0}) {
        CHECK(dps_reward(0, 1, n, g, coeff) == 0.5);
        CHECK(dps_reward(0, 0, n, g, coeff) == 0.0);
      }
}

TEST_CASE("dps_reward is strictly decreasing in n_identical when correct") {
  for (int g : {2, 4, 8}) {
    double prev = dps_reward(1, 1, 1, g, 0.1);
    for (int n = 2; n <= g; ++n) {
      double cur = dps_reward(1, 1, n, g, 0.1);
      CHECK(cur < prev);
      prev = cur;
    }
  }
}

TEST_CASE("dps_reward argument guards") {
  CHECK_THROWS_AS(dps_reward(1, 1, 1, 1, 0.1), DomainError);
  CHECK_THROWS_AS(dps_reward(1, 1, 0, 8, 0.1), DomainError);
  CHECK_THROWS_AS(dps_reward(1, 1, 9, 8, 0.1), DomainError);
  CHECK_THROWS_AS(dps_reward(1, 1, 1, 8, -0.01), DomainError);
  CHECK_NOTHROW(dps_reward(1, 1, 8, 8, 0.0));
}

TEST_CASE("verify_answer ExactMatch trims and ignores case") {
  CHECK(verify_answer("B", "B", VerifyMode::ExactMatch));
  CHECK(verify_answer("  b \n", "B", VerifyMode::ExactMatch));
  CHECK(verify_answer("Ab", "aB", VerifyMode::ExactMatch));
  CHECK_FALSE(verify_answer("A", "B", VerifyMode::ExactMatch));
  CHECK_FALSE(verify_answer("", "B", VerifyMode::ExactMatch));
  CHECK_FALSE(verify_answer("BB", "B", VerifyMode::ExactMatch));
  CHECK_THROWS_AS(verify_answer("A", "   ", VerifyMode::ExactMatch),
                  DomainError);
  CHECK_THROWS_AS(verify_answer("A", "", VerifyMode::CanonicalNumeric),
                  DomainError);
}

TEST_CASE("verify_answer CanonicalNumeric equates fractions and decimals") {
  CHECK(verify_answer("0.5", "1/2", VerifyMode::CanonicalNumeric));
  CHECK(verify_answer("2/4", "0.5", VerifyMode::CanonicalNumeric));
  CHECK(verify_answer("1e1", "10", VerifyMode::CanonicalNumeric));
  CHECK(verify_answer(" 3 ", "3.0", VerifyMode::CanonicalNumeric));
  CHECK_FALSE(verify_answer("0.3333", "1/3", VerifyMode::CanonicalNumeric));
  CHECK_FALSE(verify_answer("abc", "1", VerifyMode::CanonicalNumeric));
  CHECK_FALSE(verify_answer("1/0", "1", VerifyMode::CanonicalNumeric));
  CHECK_FALSE(verify_answer("", "1", VerifyMode::CanonicalNumeric));
  // ExactMatch does not equate them.
  CHECK_FALSE(verify_answer("1e1", "10", VerifyMode::ExactMatch));
}

TEST_CASE("canonical_numeric_value parses decimals and simple fractions") {
  REQUIRE(canonical_numeric_value("0.25").has_value());
  CHECK(*canonical_numeric_value("0.25") == 0.25);
  REQUIRE(canonical_numeric_value(" 3 / 4 ").has_value());
  CHECK(*canonical_numeric_value(" 3 / 4 ") == 0.75);
  CHECK_FALSE(canonical_numeric_value("").has_value());
  CHECK_FALSE(canonical_numeric_value("12x").has_value());
  CHECK_FALSE(canonical_numeric_value("1/0").has_value());
  CHECK_FALSE(canonical_numeric_value("/2").has_value());
}

TEST_CASE("count_identical_patterns counts self-inclusive frequencies") {
  auto P = [](const char* s) { return *ActionPattern::from_str(s); };
  std::vector<ActionPattern> group = {P("GFTA"), P("GFTA"), P("TA"),
                                      P("GHTA"), P("GFTA")};
  std::vector<int> got = count_identical_patterns(group);
  std::vector<int> want = {3, 3, 1, 1, 3};
  CHECK(got == want);

  SECTION("property check against a naive double loop") {
    Rng rng(7, 0xC0117);
    const char* pool[] = {"TA", "GTA", "GFTA", "GHTA", "A"};
    for (int iter = 0; iter < 50; ++iter) {
      std::vector<ActionPattern> g;
      int n = rng.uniform_int(2, 10);
      for (int i = 0; i < n; ++i)
        g.push_back(*ActionPattern::from_str(
            pool[static_cast<std::size_t>(rng.uniform_int(0, 4))]));
      std::vector<int> fast = count_identical_patterns(g);
      for (int i = 0; i < n; ++i) {
        int naive = 0;
        for (int j = 0; j < n; ++j)
          if (g[static_cast<std::size_t>(i)] ==
              g[static_cast<std::size_t>(j)])
            ++naive;
        CHECK(fast[static_cast<std::size_t>(i)] == naive);
      }
    }
  }
}

TEST_CASE("overlong_penalty ramps linearly inside the buffer") {
  CHECK(overlong_penalty(0, 512, 64) == 0.0);
  CHECK(overlong_penalty(448, 512, 64) == 0.0);   // exactly at the soft cap
  CHECK(overlong_penalty(480, 512, 64) == -0.5);  // halfway into the buffer
  CHECK(overlong_penalty(512, 512, 64) == -1.0);
  CHECK(overlong_penalty(600, 512, 64) == -1.0);
  CHECK(std::abs(overlong_penalty(449, 512, 64) - (-1.0 / 64.0)) < 1e-15);
  CHECK_THROWS_AS(overlong_penalty(1, 64, 64), DomainError);
  CHECK_THROWS_AS(overlong_penalty(1, 64, -1), DomainError);
}

TEST_CASE("score_group combines verification, format, and diversity") {
  ScoreConfig cfg;  // ExactMatch, coeff 0.1, no overlong
  SECTION("distinct patterns, one correct, one unparseable") {
    std::vector<ScoredRollout> group = {
        rollout("<global>g</global><think>t</think><answer>B</answer>"),
        unparseable()};
    auto out = score_group(group, "B", Modality::MultiPanel, cfg);
    REQUIRE(out.size() == 2);
    CHECK(out[0].r_acc == 1);
    CHECK(out[0].r_format == 1);
    CHECK(out[0].n_identical == 1);
    CHECK(out[0].group_size == 2);
    CHECK(out[0].combined == 1.0);
    CHECK(out[1].r_acc == 0);
    CHECK(out[1].r_format == 0);
    CHECK(out[1].combined == 0.0);
  }
  SECTION("identical patterns share the penalty") {
    std::vector<ScoredRollout> group = {
        rollout("<think>a</think><answer>C</answer>"),
        rollout("<think>b</think><answer>C</answer>")};
    auto out = score_group(group, "C", Modality::SinglePanel, cfg);
    CHECK(out[0].n_identical == 2);
    CHECK(out[1].n_identical == 2);
    CHECK(std::abs(out[0].combined - 0.95) < 1e-12);
    CHECK(std::abs(out[1].combined - 0.95) < 1e-12);
  }
  SECTION("wrong answer still earns the format half") {
    std::vector<ScoredRollout> group = {
        rollout("<think>a</think><answer>A</answer>"),
        rollout("<hint>b</hint><answer>C</answer>")};
    auto out = score_group(group, "C", Modality::SinglePanel, cfg);
    CHECK(out[0].r_acc == 0);
    CHECK(out[0].r_format == 1);
    CHECK(out[0].combined == 0.5);
  }
  SECTION("format violation zeroes the format half only") {
    // Multi-panel without <global>: accuracy holds, format fails.
    std::vector<ScoredRollout> group = {
        rollout("<think>t</think><answer>B</answer>"),
        rollout("<global>g</global><answer>B</answer>")};
    auto out = score_group(group, "B", Modality::MultiPanel, cfg);
    CHECK(out[0].r_acc == 1);
    CHECK(out[0].r_format == 0);
    CHECK(std::abs(out[0].combined - 0.5) < 1e-12);  // unique pattern
    CHECK(out[1].r_format == 1);
  }
  SECTION("unparseable rollouts share the sentinel but never collide") {
    std::vector<ScoredRollout> group = {unparseable(), unparseable(),
                                        rollout("<answer>B</answer>")};
    auto out = score_group(group, "B", Modality::SinglePanel, cfg);
    CHECK(out[0].n_identical == 2);
    CHECK(out[1].n_identical == 2);
    CHECK(out[2].n_identical == 1);
    CHECK(out[2].group_size == 3);
  }
  SECTION("overlong penalty subtracts from combined when enabled") {
    ScoreConfig oc = cfg;
    oc.overlong_enabled = true;
    oc.overlong_max_len = 8;
    oc.overlong_buffer = 4;
    std::vector<ScoredRollout> group = {
        rollout("<answer>B</answer>", 6),   // ramp: -(6-4)/4 = -0.5
        rollout("<answer>B</answer>", 2)};  // below soft cap
    auto out = score_group(group, "B", Modality::SinglePanel, oc);
    CHECK(out[0].overlong_penalty == -0.5);
    // Both share the pattern: base dps(1,1,2,2,0.1) = 0.95.
    CHECK(std::abs(out[0].combined - 0.45) < 1e-12);
    CHECK(out[1].overlong_penalty == 0.0);
    CHECK(std::abs(out[1].combined - 0.95) < 1e-12);
  }
  SECTION("group of one is rejected") {
    std::vector<ScoredRollout> group = {rollout("<answer>B</answer>")};
    CHECK_THROWS_AS(score_group(group, "B", Modality::SinglePanel, cfg),
                    DomainError);
  }
}

TEST_CASE("pattern_or_sentinel maps unparseable rollouts to empty") {
  CHECK(pattern_or_sentinel(unparseable()).empty());
  CHECK(pattern_or_sentinel(rollout("<think>t</think><answer>A</answer>"))
            .str() == "TA");
}
