#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "stusim/common.hpp"
#include "stusim/errors.hpp"

namespace stusim::testing {

using nlohmann::json;

namespace {

int rint(std::mt19937_64& rng, int lo, int hi) { return lo + static_cast<int>(uniform_index(rng, hi - lo + 1)); }

std::string feedback_for(double score) {
    const double p = score * 8.0;
    if (std::fabs(p - std::round(p)) < 1e-9) return "Tests passed: " + std::to_string(static_cast<int>(std::round(p))) + "/8";
    char buf[64];
    std::snprintf(buf, sizeof buf, "Tests passed: %g", score);
    return buf;
}

std::string timestamp(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "2023-09-01T%02d:%02d:00Z", 8 + i / 60, i % 60);
    return buf;
}

}  // namespace

Corpus synthetic_corpus(std::uint64_t seed, const CorpusSpec& spec) {
    std::mt19937_64 rng(seed);
    std::map<std::string, Assignment> assignments;
    for (int a = 0; a < spec.n_assignments; ++a) {
        Assignment as;
        as.assignment_id = "A" + std::to_string(a);
        as.description = "Write a Python function for exercise " + std::to_string(a) + ".";
        as.reference_solution = "# reference " + as.assignment_id + "\n" + cs1_program(rng);
        as.test_suite_ref = "suite_" + as.assignment_id;
        assignments[as.assignment_id] = as;
    }
    std::vector<Trajectory> trajs;
    for (int t = 0; t < spec.n_traj; ++t) {
        Trajectory tr;
        char sid[16];
        std::snprintf(sid, sizeof sid, "s%03d", t);
        tr.student_id = sid;
        tr.assignment_id = "A" + std::to_string(uniform_index(rng, static_cast<std::uint64_t>(spec.n_assignments)));
        tr.metadata["semester"] = spec.semester;
        const int T = rint(rng, spec.min_len, spec.max_len);
        for (int i = 1; i <= T; ++i) {
            Submission s;
            s.index = i;
            s.code = "# " + tr.student_id + " " + tr.assignment_id + " attempt " + std::to_string(i) + "\n" +
                     cs1_program(rng);
            s.timestamp = timestamp(i);
            if (spec.finish_with_pass)
                s.logged_score = i == T ? 1.0 : spec.levels[uniform_index(rng, spec.levels.size())];
            else
                s.logged_score = uniform_index(rng, spec.levels.size() + 1) == spec.levels.size()
                                     ? 1.0
                                     : spec.levels[uniform_index(rng, spec.levels.size())];
            s.logged_feedback = feedback_for(s.logged_score);
            tr.entries.push_back(std::move(s));
        }
        trajs.push_back(std::move(tr));
    }
    return make_corpus(std::move(assignments), std::move(trajs), SplitLabel::Test);
}

Trajectory random_score_trajectory(std::mt19937_64& rng, const std::string& student, const std::string& assignment,
                                   int min_len, int max_len) {
    static const double levels[] = {0.0, 0.5, 1.0};
    Trajectory tr;
    tr.student_id = student;
    tr.assignment_id = assignment;
    const int T = rint(rng, min_len, max_len);
    for (int i = 1; i <= T; ++i) {
        Submission s;
        s.index = i;
        s.code = "answer = " + std::to_string(i) + "  # " + student + "\n";
        s.timestamp = timestamp(i);
        s.logged_score = levels[uniform_index(rng, 3)];
        s.logged_feedback = feedback_for(s.logged_score);
        tr.entries.push_back(std::move(s));
    }
    return tr;
}

Assignment compute_average_assignment() {
    Assignment a;
    a.assignment_id = "compute_average";
    a.description =
        "Write a Python function called \"compute_average\".\nThe function should take as argument a (non-empty) "
        "list of\nintegers and returns the mean over those elements.";
    a.reference_solution =
        "def compute_average(nums):\n    total = 0\n    for i in nums:\n        total += i\n    return total / "
        "len(nums)\n";
    a.test_suite_ref = "compute_average";
    return a;
}

Trajectory compute_average_trajectory() {
    Trajectory tr;
    tr.student_id = "student";
    tr.assignment_id = "compute_average";
    const char* codes[] = {
        "def compute_average(nums):\n    total = num[0]\n    for i in nums:\n        total += i\n    return average / "
        "len(nums)",
        "def compute_average(nums):\n    total = num[0]\n    for i in nums:\n        total += i\n    return total / "
        "len(nums)",
        "def compute_average(nums):\n    total = 0\n    for i in nums:\n        total += i\n    return total / len(nums)",
    };
    const char* feedback[] = {"Runtime error: undefined variable \"average\".", "Tests passed: 1/8",
                              "Tests passed: 8/8"};
    const double scores[] = {0.0, 0.125, 1.0};
    for (int i = 0; i < 3; ++i) {
        Submission s;
        s.index = i + 1;
        s.code = codes[i];
        s.timestamp = timestamp(i);
        s.logged_score = scores[i];
        s.logged_feedback = feedback[i];
        tr.entries.push_back(std::move(s));
    }
    return tr;
}

std::string context_key(const Dialogue& messages) {
    const ParsedDialogue p = parse_dialogue(messages);
    std::string key = p.assignment;
    for (const auto& turn : p.turns) key += '\x1e' + turn.first;
    return key;
}

ReplayChatModel::ReplayChatModel(const Corpus& corpus) {
    for (const auto& tr : corpus.trajectories) {
        std::string key = assignment_turn(corpus.assignments.at(tr.assignment_id));
        for (const auto& s : tr.entries) {
            next_[key] = s.code;
            key += '\x1e' + s.code;
        }
    }
}

std::vector<std::string> ReplayChatModel::complete(const Dialogue& messages) {
    auto it = next_.find(context_key(messages));
    if (it == next_.end()) return {"print('no continuation')"};
    return {fence_code(it->second)};
}

std::vector<std::string> InstrumentedChatModel::complete(const Dialogue& messages) {
    const int now = ++in_flight_;
    int peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
    {
        std::lock_guard<std::mutex> lock(mu_);
        requests_.push_back(messages);
    }
    if (delay_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));
    std::vector<std::string> out;
    try {
        out = inner_.complete(messages);
    } catch (...) {
        --in_flight_;
        throw;
    }
    --in_flight_;
    return out;
}

std::vector<Dialogue> InstrumentedChatModel::requests() const {
    std::lock_guard<std::mutex> lock(mu_);
    return requests_;
}

struct MockEndpoint::Impl {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    mutable std::mutex mu;
    std::vector<json> bodies;
    std::vector<std::string> auth;
};

MockEndpoint::MockEndpoint(std::function<MockResponse(const json&)> handler) : impl_(std::make_unique<Impl>()) {
    impl_->server.Post("/v1/chat/completions", [this, handler](const httplib::Request& req, httplib::Response& res) {
        ++requests_;
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception&) {
            res.status = 400;
            return;
        }
        {
            std::lock_guard<std::mutex> lock(impl_->mu);
            impl_->bodies.push_back(body);
            impl_->auth.push_back(req.get_header_value("Authorization"));
        }
        const MockResponse r = handler(body);
        res.status = r.status;
        res.set_content(r.body, "application/json");
    });
    impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

MockEndpoint::~MockEndpoint() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::string MockEndpoint::base_url() const { return "http://127.0.0.1:" + std::to_string(impl_->port) + "/v1"; }

std::vector<json> MockEndpoint::bodies() const {
    std::lock_guard<std::mutex> lock(impl_->mu);
    return impl_->bodies;
}

std::vector<std::string> MockEndpoint::auth_headers() const {
    std::lock_guard<std::mutex> lock(impl_->mu);
    return impl_->auth;
}

std::string completion_body(const std::vector<std::string>& contents) {
    json choices = json::array();
    for (size_t i = 0; i < contents.size(); ++i)
        choices.push_back({{"index", i},
                           {"message", {{"role", "assistant"}, {"content", contents[i]}}},
                           {"finish_reason", "stop"}});
    return json{{"id", "cmpl-test"}, {"object", "chat.completion"}, {"choices", choices}}.dump();
}

TempDir::TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "stusim-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw DataError("mkdtemp failed");
    path_ = tmpl;
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

bool python_available() { return std::system("python3 -c pass >/dev/null 2>&1") == 0; }

}  // namespace stusim::testing
