#include "doctest.h"

#include <cmath>
#include <random>

#include "stusim/analysis/codebleu.hpp"
#include "stusim/common.hpp"
#include "stusim/errors.hpp"
#include "stusim/metrics.hpp"
#include "support.hpp"

using namespace stusim;

namespace {

// A record whose steps carry (generated score, ground truth score); ground
// truth exists while start_t + k - 1 <= T.
RolloutRecord record(int start_t, int T, std::vector<double> generated, std::vector<double> truth = {}) {
    RolloutRecord r;
    r.student_id = "s" + std::to_string(start_t) + "_" + std::to_string(T);
    r.assignment_id = "A";
    r.start_t = start_t;
    r.length = T;
    for (size_t i = 0; i < generated.size(); ++i) {
        RolloutStep s;
        s.k = static_cast<int>(i) + 1;
        s.generated_code = "x = " + std::to_string(i);
        s.outcome.score = generated[i];
        if (r.has_ground_truth(s.k)) {
            s.ground_truth_code = "x = " + std::to_string(i);
            s.ground_truth_score = i < truth.size() ? truth[i] : generated[i];
        }
        r.steps.push_back(s);
    }
    return r;
}

}  // namespace

TEST_CASE("grade proximity") {
    CHECK(grade_proximity(0.75, 0.5) == 0.75);
    CHECK(grade_proximity(1.0, 1.0) == 1.0);
    CHECK(grade_proximity(0.0, 1.0) == 0.0);
    CHECK(grade_proximity(0.25, 0.5) == grade_proximity(0.5, 0.25));
}

TEST_CASE("coverage counts eligible and covered records") {
    // eligible at k=3: T - start_t + 1 >= 3
    std::vector<RolloutRecord> rs{record(2, 6, {0.5, 0.5, 0.5}), record(2, 6, {1.0}), record(5, 6, {0.5, 1.0}),
                                  record(2, 3, {0.5, 0.5})};
    const CoverageCount c3 = coverage(rs, 3);
    CHECK(c3.eligible == 2);
    CHECK(c3.covered == 1);
    CHECK(c3.value() == 0.5);
    const CoverageCount c1 = coverage(rs, 1);
    CHECK(c1.eligible == 4);
    CHECK(c1.covered == 4);
    rs[1].aborted = true;
    CHECK(coverage(rs, 3).eligible == 1);
    CHECK(!coverage({}, 1).value().has_value());
    CHECK(!coverage({record(6, 6, {0.5})}, 2).value().has_value());
}

TEST_CASE("matched pairs need both sides") {
    std::vector<RolloutRecord> rs{record(2, 3, {0.0, 0.5}), record(3, 3, {0.5}), record(2, 4, {0.5, 0.25, 1.0})};
    CHECK(matched_pairs(rs, 1).size() == 3);
    const auto k2 = matched_pairs(rs, 2);
    REQUIRE(k2.size() == 2);
    CHECK(k2[1].generated_score == 0.25);
    CHECK(matched_pairs(rs, 3).size() == 1);
    rs[2].aborted = true;
    CHECK(matched_pairs(rs, 3).empty());
}

TEST_CASE("degradation examples") {
    CHECK(degradation(std::vector<double>{0.9, 0.8, 0.7, 0.6, 0.5}) == -0.25);
    CHECK(degradation(std::vector<double>{0.4, 0.4, 0.4}) == 0.0);
    CHECK(degradation(std::vector<double>{0.2, 0.6}) == doctest::Approx(0.4));
    CHECK_THROWS_AS(degradation(std::vector<double>{0.5}), DataError);

    const auto partial = degradation(std::vector<std::optional<double>>{0.9, std::nullopt, 0.7});
    REQUIRE(partial.has_value());
    CHECK(partial->incomplete);
    CHECK(partial->value == doctest::Approx(-0.2));
    CHECK(!degradation(std::vector<std::optional<double>>{std::nullopt, 0.5}).has_value());
    CHECK(!degradation(std::vector<std::optional<double>>{0.5, std::nullopt}).has_value());
    const auto full = degradation(std::vector<std::optional<double>>{0.5, 0.25});
    CHECK(!full->incomplete);
    CHECK(full->value == -0.25);
}

TEST_CASE("degradation is translation invariant") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0, 1), shift(-0.5, 0.5);
    for (int i = 0; i < 100; ++i) {
        std::vector<double> m(5), moved(5);
        const double c = shift(rng);
        for (size_t k = 0; k < 5; ++k) {
            m[k] = u(rng);
            moved[k] = m[k] + c;
        }
        CHECK(std::abs(degradation(m) - degradation(moved)) <= 1e-12);
    }
}

TEST_CASE("aggregate on a hand table") {
    // One record from t=2 in a trajectory of length 3: ground truth at k=1,2.
    RolloutRecord r = record(2, 3, {0.5, 0.75}, {1.0, 0.25});
    r.steps[1].generated_code = "y = 1";
    const MetricsReport m = aggregate({r}, {2});
    REQUIRE(m.per_step.size() == 2);
    CHECK(m.per_step[0].coverage == 1.0);
    CHECK(m.per_step[0].grade_proximity == 0.5);
    CHECK(m.per_step[0].codebleu == doctest::Approx(1.0));
    CHECK(m.per_step[1].grade_proximity == 0.5);
    const double cb2 = analysis::codebleu("y = 1", "x = 1").total;
    CHECK(m.per_step[1].codebleu == doctest::Approx(cb2));
    CHECK(m.avg_coverage == 1.0);
    CHECK(m.avg_grade_proximity == 0.5);
    CHECK(m.delta_grade_proximity->value == 0.0);
    CHECK(m.delta_codebleu->value == doctest::Approx(cb2 - 1.0));
    CHECK(m.n_records == 1);
}

TEST_CASE("micro and macro averaging differ when step counts differ") {
    // k=1: two eligible, both covered; k=2: one eligible, not covered.
    std::vector<RolloutRecord> rs{record(2, 3, {0.5}), record(2, 2, {0.5})};
    AggregateOptions micro;
    micro.K = 2;
    AggregateOptions macro = micro;
    macro.averaging = Averaging::Macro;
    CHECK(aggregate(rs, micro).avg_coverage == doctest::Approx(2.0 / 3.0));
    CHECK(aggregate(rs, macro).avg_coverage == doctest::Approx(0.5));
    CHECK(aggregate(rs, micro).delta_coverage->value == -1.0);
    CHECK(!aggregate(rs, micro).per_step[1].grade_proximity.has_value());
    CHECK(aggregate(rs, micro).delta_grade_proximity == std::nullopt);
    CHECK_THROWS_AS(aggregate(rs, {0}), ConfigError);
}

TEST_CASE("aborted records are counted but not scored") {
    std::vector<RolloutRecord> rs{record(2, 3, {0.5, 0.5}), record(2, 3, {0.0})};
    rs[1].aborted = true;
    const MetricsReport m = aggregate(rs);
    CHECK(m.n_records == 1);
    CHECK(m.n_aborted == 1);
    CHECK(m.per_step[0].n_eligible == 1);
    CHECK(m.avg_grade_proximity == 1.0);
}

TEST_CASE("coverage is antitone in injected perfect solutions") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<RolloutRecord> rs;
        for (int i = 0; i < 20; ++i) {
            const int T = 2 + static_cast<int>(rng() % 8);
            const int start = 2 + static_cast<int>(rng() % static_cast<unsigned>(T - 1));
            const int steps = std::min(T - start + 1, 5);
            rs.push_back(record(start, T, std::vector<double>(static_cast<size_t>(steps), 0.5)));
        }
        auto before = aggregate(rs);
        std::vector<RolloutRecord> cut = rs;
        for (auto& r : cut) {
            if (rng() % 3 != 0 || r.steps.size() < 2) continue;
            const size_t at = rng() % r.steps.size();
            r.steps.resize(at + 1);
            r.steps[at].outcome.score = 1.0;
        }
        const auto after = aggregate(cut);
        for (int k = 0; k < 5; ++k) {
            const auto& b = before.per_step[static_cast<size_t>(k)];
            const auto& a = after.per_step[static_cast<size_t>(k)];
            CHECK(a.n_eligible == b.n_eligible);
            if (b.coverage && a.coverage) CHECK(*a.coverage <= *b.coverage);
        }
    }
}

TEST_CASE("an uncovered step leaves other steps' GP and CB unchanged") {
    std::vector<RolloutRecord> rs{record(2, 6, {0.5, 0.25, 0.0}, {0.5, 0.5, 0.5}), record(2, 6, {1.0, 0.5}, {0.5, 0.0})};
    const MetricsReport full = aggregate(rs);
    rs[0].steps.resize(2);
    const MetricsReport cut = aggregate(rs);
    for (size_t k = 0; k < 2; ++k) {
        CHECK(cut.per_step[k].grade_proximity == full.per_step[k].grade_proximity);
        CHECK(cut.per_step[k].codebleu == full.per_step[k].codebleu);
    }
    CHECK(*cut.per_step[2].coverage < *full.per_step[2].coverage);
}

TEST_CASE("grade progression bins") {
    Trajectory t;
    t.student_id = "s";
    t.assignment_id = "A";
    for (int i = 0; i < 3; ++i) {
        Submission s;
        s.index = i + 1;
        s.code = "x";
        s.logged_score = i * 0.5;
        t.entries.push_back(s);
    }
    const auto pts = progression_points(make_corpus({{"A", Assignment{"A", "d", std::nullopt, "A", std::nullopt}}}, {t}));
    REQUIRE(pts.size() == 3);
    CHECK(pts[1].position == 0.5);
    const ProgressionCurve c = grade_progression(pts, 3, "students");
    REQUIRE(c.bins.size() == 3);
    CHECK(c.bins[0].mean == 0.0);
    CHECK(c.bins[1].mean == 0.5);
    CHECK(c.bins[2].mean == 1.0);
    CHECK(c.bins[2].position == 1.0);
    CHECK(c.bins[0].ci95 == 0.0);
    CHECK(c.label == "students");
    CHECK_THROWS_AS(grade_progression(pts, 0), DataError);

    const ProgressionCurve one = grade_progression(pts, 1);
    REQUIRE(one.bins.size() == 1);
    CHECK(one.bins[0].mean == 0.5);
    CHECK(one.bins[0].ci95 == doctest::Approx(1.96 * 0.5 / std::sqrt(3.0)));
}

TEST_CASE("progression conserves points") {
    const Corpus c = testing::synthetic_corpus(14, {});
    std::size_t submissions = 0;
    for (const auto& t : c.trajectories) submissions += t.entries.size();
    const auto pts = progression_points(c);
    CHECK(pts.size() == submissions);
    for (int bins : {1, 7, 20}) {
        std::size_t n = 0;
        for (const auto& b : grade_progression(pts, bins).bins) n += b.n;
        CHECK(n == submissions);
    }
    const std::vector<RolloutRecord> rs{record(2, 3, {0.5, 0.5, 0.0})};
    CHECK(progression_points(rs).size() == 2);
}

TEST_CASE("report serializations") {
    std::vector<RolloutRecord> rs{record(2, 4, {0.5, 0.5, 1.0}), record(3, 4, {0.0})};
    const MetricsReport m = aggregate(rs);
    const std::vector<ProgressionCurve> curves{grade_progression(progression_points(rs), 4, "model")};
    const auto j = report_to_json(m, curves);
    const auto [back, back_curves] = metrics_from_json(j);
    CHECK(report_to_json(back, back_curves) == j);
    nlohmann::json wrong = j;
    wrong["schema_version"] = 99;
    CHECK_THROWS_AS(metrics_from_json(wrong), DataError);
    CHECK_THROWS_AS(metrics_from_json({{"schema_version", 1}}), DataError);

    const auto rows = split_lines(report_to_csv(m));
    size_t n = 0;
    for (const auto& r : rows) n += !r.empty();
    CHECK(n == static_cast<size_t>(m.K) + 2);
    CHECK(rows[0] == "k,coverage,grade_proximity,codebleu,n_eligible,n_matched");
    CHECK(curves_to_csv(curves).rfind("label,position,mean,ci95,n\nmodel,", 0) == 0);

    const std::string md = report_to_markdown({{"replay", m}});
    CHECK(md.rfind("Cov (Coverage), GP (Grade Proximity), CB (CodeBLEU)", 0) == 0);
    CHECK(md.find("| replay | 0.800 | 1.000 |") != std::string::npos);
    CHECK(md.find("### replay per step") != std::string::npos);

    CHECK(report_format_from_name("md") == ReportFormat::Markdown);
    CHECK_THROWS_AS(report_format_from_name("xml"), ConfigError);
    testing::TempDir dir;
    emit_report(dir.file("m.json"), m, curves, ReportFormat::Json);
    CHECK(metrics_from_json(nlohmann::json::parse(read_file(dir.file("m.json")))).first.n_records == 2);
}
