#include "doctest.h"

#include <cmath>
#include <random>
#include <set>
#include <tuple>

#include "stusim/errors.hpp"
#include "stusim/prefdata.hpp"
#include "support.hpp"

using namespace stusim;

namespace {

Trajectory scored(std::vector<double> scores) {
    Trajectory t;
    t.student_id = "s";
    t.assignment_id = "compute_average";
    for (size_t i = 0; i < scores.size(); ++i) {
        Submission s;
        s.index = static_cast<int>(i) + 1;
        s.code = "x = " + std::to_string(i + 1);
        s.timestamp = "2023-01-01T00:00:00Z";
        s.logged_score = scores[i];
        s.logged_feedback = "Tests passed: " + std::to_string(scores[i]);
        t.entries.push_back(s);
    }
    return t;
}

// k* by direct scan of the definition.
std::optional<int> k_star_oracle(const std::vector<double>& scores, int t) {
    const int T = static_cast<int>(scores.size());
    for (int k = 2; k <= T - t; ++k)
        if (scores[static_cast<size_t>(t + k - 1)] != scores[static_cast<size_t>(t)]) return k;
    return std::nullopt;
}

ExecReport passing(int p, int n) {
    ExecReport r;
    for (int i = 0; i < n; ++i) {
        CaseResult c;
        c.case_id = "c" + std::to_string(i);
        c.passed = i < p;
        c.expected = "1";
        c.observed = c.passed ? "1" : "0";
        r.per_case.push_back(c);
    }
    return r;
}

const char* kGround =
    "def compute_average(nums):\n    total = 0\n    for i in nums:\n        total += i\n    return total / len(nums)";

}  // namespace

TEST_CASE("k_star examples") {
    // position t = 1; the scores listed start at a_{t+1}
    CHECK(k_star(scored({0.0, 0.5, 0.75, 0.75}), 1) == 2);
    CHECK(k_star(scored({0.0, 0.5, 0.5, 0.75}), 1) == 3);
    CHECK(!k_star(scored({0.0, 0.5, 0.5, 0.5}), 1).has_value());
    CHECK(!k_star(scored({0.0, 0.5, 1.0}), 2).has_value());
    CHECK_THROWS_AS(k_star(scored({0.0, 0.5}), 0), DataError);
    CHECK_THROWS_AS(k_star(scored({0.0, 0.5}), 2), DataError);
}

TEST_CASE("k_star agrees with a scan oracle and its prefix property") {
    std::mt19937_64 rng(10);
    for (int i = 0; i < 300; ++i) {
        const Trajectory t = testing::random_score_trajectory(rng, "s", "a", 2, 12);
        std::vector<double> scores;
        for (const auto& s : t.entries) scores.push_back(s.logged_score);
        for (int pos = 1; pos < t.length(); ++pos) {
            const auto k = k_star(t, pos);
            CHECK(k == k_star_oracle(scores, pos));
            if (k) {
                for (int j = 2; j < *k; ++j) CHECK(scores[pos + j - 1] == scores[pos]);
                CHECK(scores[pos + *k - 1] != scores[pos]);
            }
        }
    }
}

TEST_CASE("build_dpo_dataset hand-enumerated trajectory") {
    Corpus c = make_corpus({{"compute_average", testing::compute_average_assignment()}},
                           {scored({0.0, 0.5, 1.0}), scored({0.5, 0.5, 0.5, 0.5})});
    DpoSummary summary;
    const auto pairs = build_dpo_dataset(c, {}, 4096, heuristic_token_count, &summary);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].t == 1);
    CHECK(pairs[0].k_star == 2);
    CHECK(pairs[0].chosen == "x = 2");
    CHECK(pairs[0].rejected == "x = 3");
    CHECK(pairs[0].chosen_score == 0.5);
    CHECK(pairs[0].rejected_score == 1.0);
    CHECK(pairs[0].prompt.messages.size() == 4);
    CHECK(summary.positions == 5);
    CHECK(summary.pairs == 1);
    CHECK(summary.no_k_star == 4);

    const auto j = pair_to_json(pairs[0]);
    CHECK(j["chosen"] == "x = 2");
    CHECK(j["meta"]["k_star"] == 2);
    CHECK(j["prompt"].size() == 4);
}

TEST_CASE("build_dpo_dataset pair invariants on a synthetic corpus") {
    testing::CorpusSpec spec;
    spec.n_traj = 60;
    const Corpus c = testing::synthetic_corpus(4, spec);
    const auto pairs = build_dpo_dataset(c, {}, 1 << 20);
    std::size_t expected = 0;
    for (const auto& t : c.trajectories) {
        std::vector<double> scores;
        for (const auto& s : t.entries) scores.push_back(s.logged_score);
        for (int pos = 1; pos < t.length(); ++pos) expected += k_star_oracle(scores, pos).has_value();
    }
    CHECK(pairs.size() == expected);
    for (const auto& p : pairs) {
        CHECK(p.k_star >= 2);
        CHECK(p.chosen_score != p.rejected_score);
        const Trajectory* t = nullptr;
        for (const auto& tr : c.trajectories)
            if (tr.student_id == p.student_id) t = &tr;
        REQUIRE(t);
        CHECK(p.chosen == t->entries[p.t].code);
        CHECK(p.rejected == t->entries[p.t + p.k_star - 1].code);
    }
}

TEST_CASE("build_dpo_dataset skips prompts over budget") {
    Corpus c = make_corpus({{"compute_average", testing::compute_average_assignment()}}, {scored({0.0, 0.5, 1.0})});
    DpoSummary summary;
    const auto pairs = build_dpo_dataset(c, {}, 10, heuristic_token_count, &summary);
    CHECK(pairs.empty());
    CHECK(summary.skipped_budget == 1);
}

TEST_CASE("sample_positions") {
    CHECK(sample_positions(2, 2, 1) == std::vector<int>{1});
    CHECK(sample_positions(3, 2, 1) == std::vector<int>{1, 2});
    const auto a = sample_positions(10, 2, 42);
    CHECK(a == sample_positions(10, 2, 42));
    REQUIRE(a.size() == 2);
    CHECK(a[0] < a[1]);
    CHECK(a[0] >= 1);
    CHECK(a[1] <= 9);
}

TEST_CASE("sample_positions is uniform over 10000 draws") {
    std::vector<int> counts(10, 0);
    const int draws = 10000;
    for (int s = 0; s < draws; ++s)
        for (int t : sample_positions(10, 2, static_cast<std::uint64_t>(s))) ++counts[static_cast<size_t>(t)];
    const double p = 2.0 / 9.0;
    const double expected = draws * p;
    const double sigma = std::sqrt(draws * p * (1 - p));
    double chi2 = 0;
    for (int t = 1; t <= 9; ++t) {
        CHECK(std::abs(counts[static_cast<size_t>(t)] - expected) < 3 * sigma);
        chi2 += std::pow(counts[static_cast<size_t>(t)] - expected, 2) / expected;
    }
    CHECK(chi2 < 26.1);  // chi-square, 8 degrees of freedom, p = 0.001
}

TEST_CASE("sample_grpo_prefixes") {
    const Trajectory t = testing::compute_average_trajectory();
    const Assignment a = testing::compute_average_assignment();
    const auto prefixes = sample_grpo_prefixes(a, t, 2, 9, {}, 4096);
    REQUIRE(prefixes.size() == 2);
    CHECK(prefixes[0].t == 1);
    CHECK(prefixes[1].t == 2);
    CHECK(prefixes[1].ground_truth_next == t.entries[2].code);
    CHECK(prefixes[1].ground_truth_score == 1.0);
    CHECK(prefixes[1].prompt.messages.size() == 6);
    Trajectory two = t;
    two.entries.resize(2);
    const auto one = sample_grpo_prefixes(a, two, 2, 3, {}, 4096);
    REQUIRE(one.size() == 1);
    CHECK(one[0].t == 1);
}

TEST_CASE("tiered_reward tiers") {
    const std::string reformatted = std::string("\n\n") + kGround + "\n\n";
    const std::string rewrite =
        "def compute_average(nums):\n    total = 0\n    for i in nums:\n        total = total + i\n"
        "    return total / len(nums)";
    MockBackend backend({{MockBackend::key(kGround), passing(4, 8)}, {MockBackend::key(rewrite), passing(4, 8)}},
                        passing(0, 8));
    Grader g(backend);
    const Assignment a = testing::compute_average_assignment();
    const RewardTier ast = tiered_reward(reformatted, kGround, 0.5, g, a);
    CHECK(ast.value == 2.0);
    CHECK(ast.reason == RewardReason::AstMatch);
    const RewardTier bad = tiered_reward("def f(:", kGround, 0.5, g, a);
    CHECK(bad.value == -1.0);
    CHECK(bad.reason == RewardReason::Noncompiling);
    const RewardTier grade = tiered_reward(rewrite, kGround, 0.5, g, a);
    CHECK(grade.value == 1.0);
    CHECK(grade.reason == RewardReason::GradeMatch);
    const RewardTier none = tiered_reward("x = 1", kGround, 0.5, g, a);
    CHECK(none.value == 0.0);
    CHECK(none.reason == RewardReason::Neutral);
    CHECK(tiered_reward(kGround, kGround, 0.5, g, a).value == 2.0);

    CHECK(reward_tier(RewardReason::AstMatch).value == 2.0);
    CHECK(reward_tier(RewardReason::GradeMatch).value == 1.0);
    CHECK(reward_tier(RewardReason::Neutral).value == 0.0);
    CHECK(reward_tier(RewardReason::Noncompiling).value == -1.0);
}

TEST_CASE("tiered_reward propagates grader failures") {
    MockBackend backend({}, ExecReport{});
    Grader g(backend);
    CHECK_THROWS_AS(tiered_reward("x = 2", "x = 1", 1.0, g, testing::compute_average_assignment()), GraderUnavailable);
}

TEST_CASE("group_advantage") {
    const auto flat = group_advantage({1, 1, 1, 1});
    for (double v : flat) CHECK(v == 0.0);
    const auto adv = group_advantage({2, 1, 0, -1});
    REQUIRE(adv.size() == 4);
    CHECK(adv[0] == doctest::Approx(1.5 / std::sqrt(1.25)));
    CHECK(adv[0] == doctest::Approx(1.3416).epsilon(1e-4));
    CHECK(adv[1] == doctest::Approx(0.4472).epsilon(1e-4));
    CHECK(adv[2] == doctest::Approx(-0.4472).epsilon(1e-4));
    CHECK(adv[3] == doctest::Approx(-1.3416).epsilon(1e-4));
    CHECK_THROWS_AS(group_advantage({1}), DataError);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 2);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> r(2 + i % 7);
        for (auto& v : r) v = u(rng);
        double sum = 0;
        for (double v : group_advantage(r)) sum += v;
        CHECK(std::abs(sum) < 1e-9);
    }
}

TEST_CASE("grpo sample JSON") {
    GrpoPrefix p;
    p.prompt = serialize_prefix(testing::compute_average_assignment(), testing::compute_average_trajectory(), 1, {});
    p.ground_truth_next = "x = 1";
    p.t = 1;
    const auto j = grpo_sample_to_json(p, {{"x = 1", reward_tier(RewardReason::AstMatch), 1.0},
                                           {"y", reward_tier(RewardReason::Neutral), -1.0}});
    CHECK(j["candidates"].size() == 2);
    CHECK(j["candidates"][0]["reward"] == 2.0);
    CHECK(j["candidates"][1]["advantage"] == -1.0);
    CHECK(j["ground_truth"] == "x = 1");
    CHECK(j["prompt"].size() == 4);
}
