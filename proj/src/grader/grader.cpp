#include "stusim/grader.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "stusim/analysis/ast.hpp"
#include "stusim/common.hpp"
#include "stusim/errors.hpp"

namespace stusim {

using nlohmann::json;

namespace {

std::string substitute(std::string text, const std::map<std::string, std::string>& values) {
    for (const auto& [key, value] : values) {
        const std::string token = "{" + key + "}";
        size_t pos = 0;
        while ((pos = text.find(token, pos)) != std::string::npos) {
            text.replace(pos, token.size(), value);
            pos += value.size();
        }
    }
    return text;
}

std::string format_seconds(double s) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", s);
    return buf;
}

// Python tracebacks start with a fixed banner; the informative line is the
// final "Type: message" line.
std::string first_trace_line(const std::string& trace) {
    const auto lines = split_lines(trace);
    std::vector<std::string> nonblank;
    for (const auto& l : lines)
        if (!trim(l).empty()) nonblank.push_back(trim(l));
    if (nonblank.empty()) return "unknown error";
    if (nonblank.front().rfind("Traceback", 0) == 0) return nonblank.back();
    return nonblank.front();
}

bool all_cases_errored(const ExecReport& r) {
    return !r.per_case.empty() && std::all_of(r.per_case.begin(), r.per_case.end(), [](const CaseResult& c) {
        return !c.passed && c.error.has_value();
    });
}

int passed_count(const ExecReport& r) {
    return static_cast<int>(std::count_if(r.per_case.begin(), r.per_case.end(), [](const CaseResult& c) { return c.passed; }));
}

}  // namespace

const char* grade_status_name(GradeStatus status) {
    switch (status) {
        case GradeStatus::AllPass: return "all_pass";
        case GradeStatus::Partial: return "partial";
        case GradeStatus::RuntimeError: return "runtime_error";
        case GradeStatus::Timeout: return "timeout";
        case GradeStatus::Noncompiling: return "noncompiling";
    }
    return "partial";
}

std::optional<GradeStatus> grade_status_from_name(const std::string& name) {
    for (auto s : {GradeStatus::AllPass, GradeStatus::Partial, GradeStatus::RuntimeError, GradeStatus::Timeout,
                   GradeStatus::Noncompiling})
        if (name == grade_status_name(s)) return s;
    return std::nullopt;
}

std::string render_feedback(const ExecReport& report, const FeedbackTemplate& tmpl, const ExecLimits& limits) {
    if (report.timed_out) return substitute(tmpl.timeout, {{"wall_time_s", format_seconds(limits.wall_time_s)}});
    if (report.error_trace) return substitute(tmpl.runtime_error, {{"trace", first_trace_line(*report.error_trace)}});
    const int n = static_cast<int>(report.per_case.size());
    const int p = passed_count(report);
    if (n > 0 && p == 0 && all_cases_errored(report))
        return substitute(tmpl.runtime_error, {{"trace", first_trace_line(*report.per_case.front().error)}});
    std::string out = substitute(tmpl.summary, {{"p", std::to_string(p)}, {"n", std::to_string(n)}});
    for (const auto& c : report.per_case) {
        if (c.passed) continue;
        out += "\n";
        out += substitute(tmpl.failed_case,
                          {{"case_id", c.case_id}, {"expected", c.expected}, {"observed", c.observed}});
    }
    return out;
}

bool outputs_match(const std::string& observed, const std::string& expected, std::optional<double> tolerance) {
    const std::string a = rtrim_lines(observed);
    const std::string b = rtrim_lines(expected);
    if (a == b) return true;
    if (!tolerance) return false;
    const std::string ta = trim(a), tb = trim(b);
    char* end_a = nullptr;
    char* end_b = nullptr;
    const double x = std::strtod(ta.c_str(), &end_a);
    const double y = std::strtod(tb.c_str(), &end_b);
    if (ta.empty() || tb.empty() || *end_a != '\0' || *end_b != '\0') return false;
    return std::abs(x - y) <= *tolerance;
}

bool is_compiling(const std::string& program) { return analysis::parsed(analysis::parse_ast(program)); }

// ---- mock / replay -----------------------------------------------------------

MockBackend::MockBackend(std::map<std::string, ExecReport> oracle, ExecReport default_report)
    : oracle_(std::move(oracle)), default_(std::move(default_report)) {}

std::string MockBackend::key(const std::string& program) { return fnv1a_hex(program); }

ExecReport MockBackend::execute(const Assignment&, const std::string& program, const ExecLimits&) {
    auto it = oracle_.find(key(program));
    return it == oracle_.end() ? default_ : it->second;
}

ExecReport report_for_score(double score) {
    if (!(score >= 0.0 && score <= 1.0)) throw DataError("score outside [0,1]");
    for (int n = 1; n <= 100000; ++n) {
        const long p = std::lround(score * n);
        if (p < 0 || p > n) continue;
        if (static_cast<double>(p) / static_cast<double>(n) != score) continue;
        ExecReport r;
        for (int i = 0; i < n; ++i) {
            CaseResult c;
            c.case_id = "case" + std::to_string(i + 1);
            c.passed = i < p;
            c.expected = "ok";
            c.observed = c.passed ? "ok" : "wrong";
            r.per_case.push_back(std::move(c));
        }
        return r;
    }
    throw DataError("score " + std::to_string(score) + " is not a ratio of small integers");
}

namespace {
std::string replay_key(const std::string& assignment_id, const std::string& program) {
    return fnv1a_hex(assignment_id) + ":" + fnv1a_hex(program);
}
}  // namespace

ReplayBackend::ReplayBackend(const Corpus& corpus, ExecReport default_report) : default_(std::move(default_report)) {
    for (const auto& t : corpus.trajectories) {
        for (const auto& s : t.entries) {
            ExecReport r;
            if (s.logged_score == 0.0 && s.logged_feedback && s.logged_feedback->rfind("Runtime error", 0) == 0) {
                std::string trace = *s.logged_feedback;
                const std::string prefix = "Runtime error: ";
                if (trace.rfind(prefix, 0) == 0) trace = trace.substr(prefix.size());
                r.error_trace = trace;
            } else {
                r = report_for_score(s.logged_score);
            }
            add(t.assignment_id, s.code, std::move(r));
        }
    }
}

void ReplayBackend::add(const std::string& assignment_id, const std::string& program, ExecReport report) {
    reports_[replay_key(assignment_id, program)] = std::move(report);
}

ExecReport ReplayBackend::execute(const Assignment& assignment, const std::string& program, const ExecLimits&) {
    auto it = reports_.find(replay_key(assignment.assignment_id, program));
    return it == reports_.end() ? default_ : it->second;
}

// ---- JSON ------------------------------------------------------------------

TestSuite suite_from_json(const json& j) {
    TestSuite s;
    try {
        s.suite_id = j.at("suite_id").get<std::string>();
        for (const auto& c : j.at("cases")) {
            TestCase tc;
            tc.case_id = c.at("case_id").get<std::string>();
            tc.invocation = c.value("invocation", json::object());
            tc.expected = c.at("expected").get<std::string>();
            if (c.contains("tolerance") && c["tolerance"].is_number()) tc.tolerance = c["tolerance"].get<double>();
            s.cases.push_back(std::move(tc));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed test suite: ") + e.what());
    }
    if (s.cases.empty()) throw DataError("test suite '" + s.suite_id + "' has no cases");
    return s;
}

json suite_to_json(const TestSuite& s) {
    json cases = json::array();
    for (const auto& c : s.cases) {
        json jc = {{"case_id", c.case_id}, {"invocation", c.invocation}, {"expected", c.expected}};
        if (c.tolerance) jc["tolerance"] = *c.tolerance;
        cases.push_back(std::move(jc));
    }
    return {{"suite_id", s.suite_id}, {"cases", cases}};
}

std::map<std::string, TestSuite> read_suites(const std::string& path) {
    std::map<std::string, TestSuite> out;
    for (const auto& line : split_lines(read_file(path))) {
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(path + ": invalid JSON: " + e.what());
        }
        TestSuite s = suite_from_json(j);
        std::string id = s.suite_id;
        out[id] = std::move(s);
    }
    return out;
}

json report_to_json(const ExecReport& r) {
    json cases = json::array();
    for (const auto& c : r.per_case) {
        json jc = {{"case_id", c.case_id}, {"passed", c.passed}, {"observed", c.observed}, {"expected", c.expected}};
        if (c.error) jc["error"] = *c.error;
        cases.push_back(std::move(jc));
    }
    json j = {{"per_case", cases}, {"timed_out", r.timed_out}};
    j["error_trace"] = r.error_trace ? json(*r.error_trace) : json(nullptr);
    return j;
}

ExecReport report_from_json(const json& j) {
    if (!j.is_object()) throw ProtocolError("report is not a JSON object");
    ExecReport r;
    try {
        if (j.contains("per_case") && !j["per_case"].is_null()) {
            for (const auto& c : j.at("per_case")) {
                CaseResult cr;
                cr.case_id = c.at("case_id").get<std::string>();
                cr.passed = c.value("passed", false);
                cr.observed = c.value("observed", "");
                cr.expected = c.value("expected", "");
                if (c.contains("error") && c["error"].is_string()) cr.error = c["error"].get<std::string>();
                r.per_case.push_back(std::move(cr));
            }
        }
        if (j.contains("error_trace") && j["error_trace"].is_string()) r.error_trace = j["error_trace"].get<std::string>();
        r.timed_out = j.value("timed_out", false);
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed report: ") + e.what());
    }
    return r;
}

// ---- grader ----------------------------------------------------------------

Grader::Grader(ExecutionBackend& backend, ExecLimits limits, FeedbackTemplate tmpl)
    : backend_(backend), limits_(limits), template_(std::move(tmpl)) {}

GradeOutcome Grader::grade(const Assignment& assignment, const std::string& program) const {
    GradeOutcome out;
    const analysis::ParseResult parsed = analysis::parse_ast(program);
    if (!analysis::parsed(parsed)) {
        const auto& err = std::get<analysis::ParseError>(parsed);
        out.status = GradeStatus::Noncompiling;
        out.score = 0.0;
        out.feedback = substitute(template_.syntax_error, {{"message", err.message}, {"line", std::to_string(err.line)}});
        return out;
    }
    const ExecReport report = backend_.execute(assignment, program, limits_);
    out.feedback = render_feedback(report, template_, limits_);
    if (report.timed_out) {
        out.status = GradeStatus::Timeout;
        return out;
    }
    if (report.error_trace) {
        out.status = GradeStatus::RuntimeError;
        return out;
    }
    const int n = static_cast<int>(report.per_case.size());
    if (n == 0) throw GraderUnavailable("backend returned a report without test results");
    const int p = passed_count(report);
    out.score = static_cast<double>(p) / static_cast<double>(n);
    if (p == n) out.status = GradeStatus::AllPass;
    else if (p == 0 && all_cases_errored(report)) out.status = GradeStatus::RuntimeError;
    else out.status = GradeStatus::Partial;
    return out;
}

std::vector<GradeOutcome> Grader::grade_all(const Assignment& assignment, const std::vector<std::string>& programs,
                                            size_t concurrency) const {
    std::vector<GradeOutcome> out(programs.size());
    const size_t workers = std::max<size_t>(1, std::min(concurrency, backend_.capacity()));
    parallel_for(programs.size(), workers, [&](size_t i) { out[i] = grade(assignment, programs[i]); });
    return out;
}

}  // namespace stusim
