// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 on any
// failure. Every expected value below comes from an oracle written here, not
// from the library under test.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "stusim/analysis/codebleu.hpp"
#include "stusim/analysis/tokens.hpp"
#include "stusim/common.hpp"
#include "stusim/errors.hpp"
#include "stusim/losses.hpp"
#include "stusim/metrics.hpp"
#include "stusim/prefdata.hpp"
#include "stusim/rollout.hpp"
#include "stusim/serializer.hpp"
#include "support.hpp"

using namespace stusim;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) detail << "first failure: " << what << "; ";
        pass = pass && ok;
    }
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

// Chat endpoint that answers every request through a local model.
testing::MockEndpoint serve(ChatModel& model) {
    return testing::MockEndpoint([&model](const json& req) {
        return testing::MockResponse{200, testing::completion_body(model.complete(messages_from_json(req["messages"])))};
    });
}

EndpointConfig endpoint(const testing::MockEndpoint& ep) {
    EndpointConfig c;
    c.base_url = ep.base_url();
    c.model_name = "mock";
    c.timeout_s = 10;
    c.backoff_initial_s = 0.01;
    return c;
}

// ---- 1 ---------------------------------------------------------------------

void replay_oracle(Outcome& o) {
    const auto t0 = std::chrono::steady_clock::now();
    testing::CorpusSpec spec;
    spec.n_traj = 20;
    spec.min_len = 2;
    spec.max_len = 8;
    const Corpus corpus = testing::synthetic_corpus(2024, spec);
    testing::ReplayChatModel replay(corpus);
    testing::MockEndpoint ep = serve(replay);
    HttpChatModel model(endpoint(ep));
    ReplayBackend backend(corpus);
    Grader grader(backend);
    testing::TempDir dir;
    RunOptions opts;
    opts.out_path = dir.file("rollouts.jsonl");
    opts.concurrency = 4;
    const RunSummary s = run_eval(corpus, model, grader, {}, opts);
    const auto records = read_records(opts.out_path);
    const MetricsReport m = aggregate(records);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::size_t keys = 0;
    int longest = 0;
    for (const auto& t : corpus.trajectories) {
        keys += static_cast<std::size_t>(t.length() - 1);
        longest = std::max(longest, t.length());
    }
    o.require(s.aborted == 0 && records.size() == keys, "one completed record per start position");
    o.require(longest >= 6, "corpus reaches step 5");
    for (const auto& st : m.per_step) {
        const std::string k = "k=" + std::to_string(st.k);
        o.require(st.coverage && *st.coverage == 1.0, k + " coverage == 1.0");
        o.require(st.grade_proximity && *st.grade_proximity == 1.0, k + " grade proximity == 1.0");
        o.require(st.codebleu && std::abs(*st.codebleu - 1.0) <= 1e-9, k + " CodeBLEU within 1e-9 of 1");
    }
    o.require(m.per_step.size() == 5, "five steps reported");
    o.require(secs < 30.0, "runtime under 30 s");
    double worst = 0;
    for (const auto& st : m.per_step)
        if (st.codebleu) worst = std::max(worst, std::abs(*st.codebleu - 1.0));
    o.detail << records.size() << " records, Cov=" << fmt(*m.avg_coverage) << " GP=" << fmt(*m.avg_grade_proximity)
             << " max|CB-1|=" << fmt(worst) << ", " << fmt(secs) << " s";
}

// ---- 2 ---------------------------------------------------------------------

void expert_oracle(Outcome& o) {
    testing::CorpusSpec spec;
    spec.n_traj = 40;
    spec.min_len = 2;
    spec.max_len = 9;
    spec.n_assignments = 3;
    const Corpus corpus = testing::synthetic_corpus(77, spec);

    std::map<std::string, std::string> reference_by_turn;
    for (const auto& [id, a] : corpus.assignments) reference_by_turn[assignment_turn(a)] = *a.reference_solution;
    testing::FunctionChatModel expert(
        [&](const Dialogue& d) { return fence_code(reference_by_turn.at(d.messages.at(1).content)); });
    testing::MockEndpoint ep = serve(expert);
    HttpChatModel model(endpoint(ep));

    // A0's reference fails its own suite in this setup, so rollouts on A0 run
    // until the ground truth or the horizon ends them.
    ReplayBackend backend(corpus);
    std::set<std::string> perfect;
    for (const auto& [id, a] : corpus.assignments) {
        if (id == "A0") continue;
        backend.add(id, extract_code(fence_code(*a.reference_solution)), report_for_score(1.0));
        perfect.insert(id);
    }
    Grader grader(backend);
    testing::TempDir dir;
    RunOptions opts;
    opts.out_path = dir.file("expert.jsonl");
    opts.concurrency = 4;
    run_eval(corpus, model, grader, {}, opts);
    const auto records = read_records(opts.out_path);

    // brute force: a rollout from start_t emits steps 1..stop
    std::vector<std::size_t> eligible(6, 0), covered(6, 0);
    for (const auto& t : corpus.trajectories) {
        const int T = t.length();
        for (int start = 2; start <= T; ++start) {
            int stop = 0;
            for (int k = 1; k <= 5; ++k) {
                stop = k;
                if (perfect.count(t.assignment_id)) break;
                if (start + k > T) break;
            }
            for (int k = 1; k <= 5; ++k) {
                if (start + k - 1 > T) continue;
                ++eligible[static_cast<size_t>(k)];
                if (k <= stop) ++covered[static_cast<size_t>(k)];
            }
        }
    }
    for (int k = 1; k <= 5; ++k) {
        const CoverageCount c = coverage(records, k);
        const auto kk = static_cast<size_t>(k);
        o.require(c.eligible == eligible[kk] && c.covered == covered[kk], "coverage counts at k=" + std::to_string(k));
        o.require(c.value() == static_cast<double>(covered[kk]) / static_cast<double>(eligible[kk]),
                  "coverage value at k=" + std::to_string(k));
        o.detail << "k" << k << "=" << covered[kk] << "/" << eligible[kk] << " ";
    }
}

// ---- 3 ---------------------------------------------------------------------

void k_star_oracle(Outcome& o) {
    std::mt19937_64 rng(1000);
    std::vector<Trajectory> ts;
    for (int i = 0; i < 1000; ++i) ts.push_back(testing::random_score_trajectory(rng, "s" + std::to_string(i), "compute_average", 2, 12));
    const Corpus corpus = make_corpus({{"compute_average", testing::compute_average_assignment()}}, ts);
    DpoSummary summary;
    const auto pairs = build_dpo_dataset(corpus, {}, 1u << 24, heuristic_token_count, &summary);

    using Key = std::tuple<std::string, int, int, std::string, std::string, double, double>;
    std::set<Key> got, want;
    for (const auto& p : pairs)
        got.insert({p.student_id, p.t, p.k_star, p.chosen, p.rejected, p.chosen_score, p.rejected_score});
    for (const auto& t : corpus.trajectories) {
        const auto& e = t.entries;  // e[j - 1] is submission a_j
        const int T = t.length();
        for (int pos = 1; pos < T; ++pos)
            for (int j = pos + 2; j <= T; ++j)
                if (e[static_cast<size_t>(j - 1)].logged_score != e[static_cast<size_t>(pos)].logged_score) {
                    want.insert({t.student_id, pos, j - pos, e[static_cast<size_t>(pos)].code,
                                 e[static_cast<size_t>(j - 1)].code, e[static_cast<size_t>(pos)].logged_score,
                                 e[static_cast<size_t>(j - 1)].logged_score});
                    break;
                }
    }
    o.require(pairs.size() == got.size(), "no duplicate pairs");
    o.require(summary.skipped_budget == 0, "no budget skips");
    o.require(got == want, "pair set equals the double-loop oracle");
    o.detail << pairs.size() << " pairs over 1000 trajectories";
}

// ---- 4 ---------------------------------------------------------------------

void dpo_math(Outcome& o) {
    double worst_ln2 = 0;
    for (double x : {0.0, -3.5, 2.25, 17.0, -40.0}) worst_ln2 = std::max(worst_ln2, std::abs(dpo_loss(x, x) - std::log(2.0)));
    o.require(worst_ln2 <= 1e-12, "dpo_loss at zero margin equals ln 2");

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-10, 10);
    const double h = 1e-5;
    double worst_rel = 0;
    for (int i = 0; i < 1000; ++i) {
        const double a = u(rng), b = u(rng);
        const auto [ga, gb] = dpo_loss_grad(a, b);
        const double fa = (dpo_loss(a + h, b) - dpo_loss(a - h, b)) / (2 * h);
        const double fb = (dpo_loss(a, b + h) - dpo_loss(a, b - h)) / (2 * h);
        worst_rel = std::max({worst_rel, std::abs(ga - fa) / std::abs(fa), std::abs(gb - fb) / std::abs(fb)});
    }
    o.require(worst_rel <= 1e-6, "gradient within 1e-6 relative of central differences");

    std::uniform_real_distribution<double> lp(-200, 0), beta(0.01, 5);
    bool linear = true;
    for (int i = 0; i < 1000; ++i) {
        const double p = lp(rng), r = lp(rng), b = beta(rng);
        linear = linear && implicit_reward(p, r, {b}) == b * (p - r);
        linear = linear && implicit_reward(p, r, {2 * b}) == 2 * implicit_reward(p, r, {b});
        linear = linear && implicit_reward(p, r, {b / 4}) == implicit_reward(p, r, {b}) / 4;
    }
    o.require(linear, "implicit_reward is exactly linear in beta");
    o.detail << "|L(0)-ln2|=" << fmt(worst_ln2) << " max rel grad err=" << fmt(worst_rel);
}

// ---- 5 ---------------------------------------------------------------------

void degradation_formula(Outcome& o) {
    const double d = degradation(std::vector<double>{0.9, 0.8, 0.7, 0.6, 0.5});
    o.require(d == -0.25, "[0.9..0.5] gives exactly -0.25");
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1), shift(-1, 1);
    bool constant_zero = true;
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
        const double c = u(rng);
        constant_zero = constant_zero && degradation(std::vector<double>(5, c)) == 0.0;
        std::vector<double> m(5), moved(5);
        const double s = shift(rng);
        for (size_t k = 0; k < 5; ++k) {
            m[k] = u(rng);
            moved[k] = m[k] + s;
        }
        worst = std::max(worst, std::abs(degradation(m) - degradation(moved)));
    }
    o.require(constant_zero, "constant series give 0");
    o.require(worst <= 1e-12, "translation invariance within 1e-12");
    o.detail << "value=" << fmt(d) << " max translation drift=" << fmt(worst);
}

// ---- 6 ---------------------------------------------------------------------

ExecReport passing(int p, int n) {
    ExecReport r;
    for (int i = 0; i < n; ++i) {
        CaseResult c;
        c.case_id = "c" + std::to_string(i + 1);
        c.passed = i < p;
        c.expected = "1";
        c.observed = c.passed ? "1" : "0";
        r.per_case.push_back(c);
    }
    return r;
}

struct HandMutant {
    const char* code;
    double tier;
};

// compute_average variants, each labelled by reading it.
const HandMutant kHandSample[] = {
    // reformatting: same syntax tree
    {"def compute_average(nums):\n    # running sum\n    total = 0\n\n    for i in nums:\n        total += i\n"
     "    return total / len(nums)\n",
     2.0},
    {"def compute_average(nums):\n    total=0\n    for i in nums:\n        total+=i\n    return total/len(nums)\n", 2.0},
    {"def compute_average(nums):\n    total = 0\n    for i in nums:\n        total += i\n    return (total / len(nums))\n",
     2.0},
    {"def compute_average(nums):\n  total = 0\n  for i in nums:\n    total += i\n  return total / len(nums)\n", 2.0},
    // renaming
    {"def compute_average(values):\n    total = 0\n    for i in values:\n        total += i\n    return total / len(values)\n",
     1.0},
    {"def compute_average(nums):\n    acc = 0\n    for i in nums:\n        acc += i\n    return acc / len(nums)\n", 1.0},
    {"def compute_average(nums):\n    total = 0\n    for n in nums:\n        total += n\n    return total / len(nums)\n",
     1.0},
    {"def compute_average(xs):\n    s = 0\n    for x in xs:\n        s += x\n    return s / len(xs)\n", 1.0},
    // same behaviour, different tree
    {"def compute_average(nums):\n    return sum(nums) / len(nums)\n", 1.0},
    {"def compute_average(nums):\n    total = 0\n    for i in nums:\n        total = total + i\n    return total / len(nums)\n",
     1.0},
    {"def compute_average(nums):\n    total = 0\n    k = 0\n    while k < len(nums):\n        total += nums[k]\n        k += 1\n"
     "    return total / len(nums)\n",
     1.0},
    {"def compute_average(nums):\n    total = 0\n    for i in range(len(nums)):\n        total += nums[i]\n"
     "    return total / len(nums)\n",
     1.0},
    // behaviour changes
    {"def compute_average(nums):\n    total = 1\n    for i in nums:\n        total += i\n    return total / len(nums)\n", 0.0},
    {"def compute_average(nums):\n    total = 0\n    for i in nums:\n        total += i\n    return total / (len(nums) + 1)\n",
     0.0},
    {"def compute_average(nums):\n    total = 0\n    for i in nums:\n        total -= i\n    return total / len(nums)\n", 0.0},
    {"def compute_average(nums):\n    total = nums[0]\n    for i in nums:\n        total += i\n    return total / len(nums)\n",
     0.0},
    // syntax errors
    {"def compute_average(nums)\n    total = 0\n    for i in nums:\n        total += i\n    return total / len(nums)\n", -1.0},
    {"def compute_average(nums):\n    total = 0\n    for i in nums:\n        total += i\n    return total / len(nums\n", -1.0},
    {"def compute_average(nums):\n    total = 0\n    for i in nums\n        total += i\n    return total / len(nums)\n", -1.0},
    {"def compute_average(nums):\n    total = 0\n    for i in nums:\n        total += i\n      return total / len(nums)\n", -1.0},
};

void reward_tiers(Outcome& o) {
    const double expected_tier[] = {2.0, 1.0, 1.0, 0.0, -1.0};
    const testing::MutantClass classes[] = {testing::MutantClass::Reformat, testing::MutantClass::Rename,
                                            testing::MutantClass::SemanticPreserving, testing::MutantClass::Breaking,
                                            testing::MutantClass::SyntaxCorrupt};
    std::mt19937_64 rng(6);
    const Assignment a = testing::compute_average_assignment();
    std::map<double, int> counts;
    int total = 0;
    for (int base_i = 0; base_i < 10; ++base_i) {
        const std::string base = testing::cs1_program(rng);
        std::vector<testing::Mutant> mutants;
        for (int c = 0; c < 5; ++c)
            for (int i = 0; i < 100; ++i) mutants.push_back(testing::make_mutant(base, classes[c], rng));
        // The grading oracle: behaviour-preserving classes score like the base,
        // breaking edits score lower.
        std::map<std::string, ExecReport> oracle{{MockBackend::key(base), passing(5, 8)}};
        for (const auto& m : mutants)
            if (m.cls == testing::MutantClass::Rename || m.cls == testing::MutantClass::SemanticPreserving)
                oracle[MockBackend::key(m.code)] = passing(5, 8);
        MockBackend backend(oracle, passing(2, 8));
        Grader grader(backend);
        for (size_t i = 0; i < mutants.size(); ++i) {
            const RewardTier r = tiered_reward(mutants[i].code, base, 0.625, grader, a);
            const double want = expected_tier[i / 100];
            const bool one_tier = (r.value == 2.0) + (r.value == 1.0) + (r.value == 0.0) + (r.value == -1.0) == 1 &&
                                  reward_tier(r.reason).value == r.value;
            o.require(one_tier, "exactly one tier for every mutant");
            o.require(r.value == want, std::string(testing::mutant_class_name(mutants[i].cls)) + " mutant gets tier " +
                                           fmt(want) + ", got " + fmt(r.value) + " (" + mutants[i].note + ")");
            ++counts[r.value];
            ++total;
        }
    }
    o.detail << total << " mutants (+2:" << counts[2.0] << " +1:" << counts[1.0] << " 0:" << counts[0.0]
             << " -1:" << counts[-1.0] << ")";

    // hand-audited sample, graded by running the code when python3 is present
    std::unique_ptr<ExecutionBackend> backend;
    std::string how;
    if (testing::python_available()) {
        backend = std::make_unique<SubprocessBackend>("python3", STUSIM_FIXTURES_DIR "/runner.py",
                                                      read_suites(STUSIM_FIXTURES_DIR "/suites.jsonl"), 4);
        how = "executed";
    } else {
        std::map<std::string, ExecReport> oracle;
        for (const auto& m : kHandSample)
            if (m.tier == 1.0) oracle[MockBackend::key(m.code)] = passing(8, 8);
        backend = std::make_unique<MockBackend>(oracle, passing(3, 8));
        how = "mock-graded";
    }
    ExecLimits limits;
    limits.wall_time_s = 5;
    Grader grader(*backend, limits);
    std::map<double, int> hand_want, hand_got;
    for (const auto& m : kHandSample) {
        const double got = tiered_reward(m.code, *a.reference_solution, 1.0, grader, a).value;
        ++hand_want[m.tier];
        ++hand_got[got];
        o.require(got == m.tier, "hand sample tier for:\n" + std::string(m.code));
    }
    o.require(hand_got == hand_want, "hand sample tier counts");
    o.detail << "; 20-mutant hand sample " << how << " (+2:" << hand_got[2.0] << " +1:" << hand_got[1.0]
             << " 0:" << hand_got[0.0] << " -1:" << hand_got[-1.0] << ")";
}

// ---- 7 ---------------------------------------------------------------------

void codebleu_properties(Outcome& o) {
    testing::CorpusSpec spec;
    spec.n_traj = 60;
    const Corpus corpus = testing::synthetic_corpus(7, spec);
    std::vector<std::string> programs;
    for (const auto& t : corpus.trajectories)
        for (const auto& s : t.entries)
            if (programs.size() < 200) programs.push_back(s.code);
    double worst_identity = 0;
    for (const auto& p : programs) worst_identity = std::max(worst_identity, std::abs(analysis::codebleu(p, p).total - 1.0));
    o.require(programs.size() == 200, "200 corpus programs");
    o.require(worst_identity <= 1e-9, "codebleu(x, x) = 1");

    // References carry def-use edges: when neither side has any, the dataflow
    // component falls back to 1.0 and the pair scores 0.25.
    const std::pair<const char*, const char*> disjoint[] = {
        {"print(y)", "x = 1\nz = x\n"},
        {"while a:\n    b += 2\n", "m = [5]\nn = m\n"},
        {"import os\nos.sep\n", "for k in range(9):\n    total = k - 3\n"},
        {"def f(c):\n    return not c\n", "p = 7\nq = p * p\n"},
    };
    double worst_disjoint = 0;
    for (const auto& [c, r] : disjoint) {
        std::set<std::string> ct, rt;
        for (const auto& tok : analysis::tokenize_code(c)) ct.insert(tok.text);
        for (const auto& tok : analysis::tokenize_code(r)) rt.insert(tok.text);
        bool apart = true;
        for (const auto& t : ct) apart = apart && !rt.count(t);
        o.require(apart, std::string("token sets are disjoint for ") + c);
        worst_disjoint = std::max(worst_disjoint, analysis::codebleu(c, r).total);
    }
    o.require(worst_disjoint <= 0.05, "disjoint-token programs score at most 0.05");

    std::mt19937_64 rng(77);
    bool in_range = true;
    for (int i = 0; i < 1000; ++i) {
        std::string c = testing::cs1_program(rng), r = testing::cs1_program(rng);
        if (i % 3 == 0) c = testing::make_mutant(r, static_cast<testing::MutantClass>(i % 5), rng).code;
        const auto b = analysis::codebleu(c, r);
        for (double v : {b.ngram, b.weighted_ngram, b.ast_match, b.dataflow_match, b.total})
            in_range = in_range && v >= 0.0 && v <= 1.0;
    }
    o.require(in_range, "components in [0, 1]");

    const Trajectory t = testing::compute_average_trajectory();
    const double s13 = analysis::codebleu(t.entries[0].code, t.entries[2].code).total;
    const double s23 = analysis::codebleu(t.entries[1].code, t.entries[2].code).total;
    o.require(s23 > s13, "codebleu(step2, step3) > codebleu(step1, step3)");
    o.detail << "max|cb(x,x)-1|=" << fmt(worst_identity) << " max disjoint=" << fmt(worst_disjoint)
             << " cb(1,3)=" << fmt(s13) << " cb(2,3)=" << fmt(s23);
}

// ---- 8 ---------------------------------------------------------------------

const char* kPrompt =
    "You are a first-year novice student learning programming in Python. Solve the given programming assignment(s). "
    "You will be interacting with a learning environment which will provide you with summative feedback.";

void serialization(Outcome& o) {
    const Assignment a = testing::compute_average_assignment();
    const Trajectory t = testing::compute_average_trajectory();
    const Dialogue d = serialize_trajectory(a, t, {});
    const Role roles[] = {Role::System, Role::User,      Role::Assistant, Role::User,
                          Role::Assistant, Role::User, Role::Assistant, Role::User};
    o.require(d.messages.size() == 8, "8 messages");
    for (size_t i = 0; i < std::min<size_t>(8, d.messages.size()); ++i)
        o.require(d.messages[i].role == roles[i], "role of message " + std::to_string(i));
    o.require(!d.messages.empty() && d.messages[0].content == kPrompt, "verbatim system prompt");
    o.require(d.messages.size() == 8 && d.messages[1].content == a.description, "assignment turn");
    for (size_t i = 0; i < 3 && d.messages.size() == 8; ++i) {
        o.require(d.messages[2 + 2 * i].content == fence_code(t.entries[i].code), "code turn " + std::to_string(i + 1));
        o.require(d.messages[3 + 2 * i].content == *t.entries[i].logged_feedback,
                  "feedback turn " + std::to_string(i + 1));
    }

    testing::CorpusSpec spec;
    spec.n_traj = 500;
    spec.min_len = 0;
    spec.max_len = 10;
    const Corpus corpus = testing::synthetic_corpus(8, spec);
    int identities = 0;
    for (const auto& tr : corpus.trajectories) {
        const Assignment& as = corpus.assignments.at(tr.assignment_id);
        const ParsedDialogue p = parse_dialogue(serialize_trajectory(as, tr, {}));
        bool same = p.assignment == assignment_turn(as) && p.turns.size() == tr.entries.size();
        for (size_t i = 0; same && i < p.turns.size(); ++i)
            same = p.turns[i].first == tr.entries[i].code && p.turns[i].second == tr.entries[i].logged_feedback;
        identities += same;
    }
    o.require(identities == 500, "parse(serialize(x)) = x on 500 trajectories");

    std::mt19937_64 rng(88);
    int pairs = 0, monotone = 0;
    while (pairs < 500) {
        const Trajectory& tr = corpus.trajectories[uniform_index(rng, corpus.trajectories.size())];
        const Dialogue full = serialize_trajectory(corpus.assignments.at(tr.assignment_id), tr, {});
        const std::size_t n = dialogue_tokens(full, heuristic_token_count);
        std::size_t b1 = 1 + uniform_index(rng, n + 10), b2 = 1 + uniform_index(rng, n + 10);
        if (b1 > b2) std::swap(b1, b2);
        Dialogue small, large;
        try {
            small = truncate_dialogue(full, b1, heuristic_token_count);
            large = truncate_dialogue(full, b2, heuristic_token_count);
        } catch (const CannotFit&) {
            continue;
        }
        ++pairs;
        // the kept units under the smaller budget are a suffix of those kept under the larger
        bool ok = small.messages.size() <= large.messages.size() && small.messages.size() >= 2 &&
                  small.messages[0] == large.messages[0] && small.messages[1] == large.messages[1] &&
                  dialogue_tokens(small, heuristic_token_count) <= b1 &&
                  dialogue_tokens(large, heuristic_token_count) <= b2;
        const size_t off = ok ? large.messages.size() - small.messages.size() : 0;
        for (size_t k = 2; ok && k < small.messages.size(); ++k) ok = small.messages[k] == large.messages[k + off];
        for (size_t k = 2; ok && k < large.messages.size(); ++k)
            ok = large.messages[k] == full.messages[k + full.messages.size() - large.messages.size()];
        monotone += ok;
    }
    o.require(monotone == 500, "truncation suffix-monotone on 500 budget pairs");
    o.detail << "8-message dialogue, " << identities << "/500 round trips, " << monotone << "/500 budget pairs";
}

// ---- 9 ---------------------------------------------------------------------

void determinism(Outcome& o) {
    testing::CorpusSpec spec;
    spec.n_traj = 20;
    const Corpus corpus = testing::synthetic_corpus(9, spec);
    testing::ReplayChatModel replay(corpus);
    // Follows the student two times in three, otherwise writes its own program.
    testing::FunctionChatModel mixed([&](const Dialogue& d) {
        const std::string key = testing::context_key(d);
        const std::uint64_t h = mix_seed(0, key);
        if (h % 3 == 0) return fence_code("x = " + std::to_string(h % 1000));
        return replay.complete(d).front();
    });
    testing::MockEndpoint ep = serve(mixed);
    ReplayBackend backend(corpus);
    Grader grader(backend);
    testing::TempDir dir;

    auto run = [&](const std::string& name, bool resume, std::optional<std::size_t> max_records) {
        HttpChatModel model(endpoint(ep));
        RunOptions opts;
        opts.out_path = dir.file(name);
        opts.concurrency = 4;
        opts.resume = resume;
        opts.max_records = max_records;
        return run_eval(corpus, model, grader, {}, opts);
    };
    const RunSummary first = run("a.jsonl", false, std::nullopt);
    run("b.jsonl", false, std::nullopt);
    const std::string a = read_file(dir.file("a.jsonl"));
    o.require(!a.empty() && a == read_file(dir.file("b.jsonl")), "two runs are byte-identical");

    const RunSummary part = run("c.jsonl", false, first.total / 3);
    {
        std::ofstream torn(dir.file("c.jsonl"), std::ios::app);
        torn << "{\"student_id\": \"s00";
    }
    const RunSummary rest = run("c.jsonl", true, std::nullopt);
    o.require(part.interrupted, "first run was interrupted");
    o.require(rest.resumed == first.total / 3 && rest.dropped_lines == 1, "resume kept the finished records");
    o.require(read_file(dir.file("c.jsonl")) == a, "interrupt-resume equals the uninterrupted run");
    o.detail << first.total << " records, " << a.size() << " bytes, resumed " << rest.resumed << " + completed "
             << rest.completed;
}

}  // namespace

int main() {
    const std::pair<const char*, std::function<void(Outcome&)>> criteria[] = {
        {"replay-oracle end-to-end", replay_oracle},
        {"expert-oracle coverage", expert_oracle},
        {"k* pair set", k_star_oracle},
        {"DPO math", dpo_math},
        {"degradation formula", degradation_formula},
        {"reward tiers", reward_tiers},
        {"CodeBLEU properties", codebleu_properties},
        {"serialization", serialization},
        {"determinism and resume", determinism},
    };
    int failed = 0;
    int id = 0;
    for (const auto& [name, fn] : criteria) {
        ++id;
        Outcome o;
        try {
            fn(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.str().c_str());
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
