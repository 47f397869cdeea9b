#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stusim/corpus.hpp"

namespace stusim {

struct TestCase {
    std::string case_id;
    nlohmann::json invocation;  // passed through to the runner untouched
    std::string expected;
    std::optional<double> tolerance;  // numeric comparison when set
};

struct TestSuite {
    std::string suite_id;
    std::vector<TestCase> cases;
};

struct ExecLimits {
    double wall_time_s = 10.0;
    int memory_mb = 512;
    int stdout_cap_bytes = 1 << 20;
};

struct CaseResult {
    std::string case_id;
    bool passed = false;
    std::string observed;
    std::string expected;
    std::optional<std::string> error;  // exception line when the case raised
};

struct ExecReport {
    std::vector<CaseResult> per_case;
    std::optional<std::string> error_trace;
    bool timed_out = false;
};

enum class GradeStatus { AllPass, Partial, RuntimeError, Timeout, Noncompiling };

const char* grade_status_name(GradeStatus status);
std::optional<GradeStatus> grade_status_from_name(const std::string& name);

struct GradeOutcome {
    double score = 0.0;
    std::string feedback;
    GradeStatus status = GradeStatus::Partial;
};

/// Placeholders: {p} {n} {case_id} {expected} {observed} {trace}
/// {wall_time_s} {message} {line}.
struct FeedbackTemplate {
    std::string summary = "Tests passed: {p}/{n}";
    std::string failed_case = "FAIL {case_id}: expected {expected}, got {observed}";
    std::string runtime_error = "Runtime error: {trace}";
    std::string timeout = "Execution timed out after {wall_time_s}s";
    std::string syntax_error = "Syntax error: {message} (line {line})";
};

/// Renders the feedback text of a report. Timeout wins over an error trace,
/// which wins over per-case results.
std::string render_feedback(const ExecReport& report, const FeedbackTemplate& tmpl = {},
                            const ExecLimits& limits = {});

/// Exact match after stripping trailing whitespace on every line; with a
/// tolerance, both sides must parse as numbers within that distance.
bool outputs_match(const std::string& observed, const std::string& expected,
                   std::optional<double> tolerance = std::nullopt);

/// True iff the program parses.
bool is_compiling(const std::string& program);

/// Executes a program against an assignment's test suite.
class ExecutionBackend {
  public:
    virtual ~ExecutionBackend() = default;
    /// Throws GraderUnavailable when no report can be produced.
    virtual ExecReport execute(const Assignment& assignment, const std::string& program, const ExecLimits& limits) = 0;
    /// How many execute() calls may run concurrently.
    virtual size_t capacity() const { return 1; }
};

/// In-memory backend keyed by fnv1a_hex(program). Never runs code.
class MockBackend : public ExecutionBackend {
  public:
    MockBackend(std::map<std::string, ExecReport> oracle, ExecReport default_report);

    static std::string key(const std::string& program);
    ExecReport execute(const Assignment&, const std::string& program, const ExecLimits&) override;
    size_t capacity() const override { return 64; }

  private:
    std::map<std::string, ExecReport> oracle_;
    ExecReport default_;
};

/// Report whose score (passed/n) equals `score` bit for bit, using the
/// smallest such n. Throws DataError when no n up to 100000 works.
ExecReport report_for_score(double score);

/// Builds reports that reproduce every logged score of a corpus, keyed by
/// (assignment_id, program). Submissions whose logged feedback starts with
/// "Runtime error" and that scored 0 replay as error traces. Unknown
/// programs get `default_report`.
class ReplayBackend : public ExecutionBackend {
  public:
    explicit ReplayBackend(const Corpus& corpus, ExecReport default_report = report_for_score(0.0));

    void add(const std::string& assignment_id, const std::string& program, ExecReport report);
    ExecReport execute(const Assignment& assignment, const std::string& program, const ExecLimits&) override;
    size_t capacity() const override { return 64; }

  private:
    std::map<std::string, ExecReport> reports_;
    ExecReport default_;
};

TestSuite suite_from_json(const nlohmann::json& j);
nlohmann::json suite_to_json(const TestSuite& suite);
/// JSONL file, one suite per line: {suite_id, cases:[{case_id, invocation, expected, tolerance?}]}.
std::map<std::string, TestSuite> read_suites(const std::string& path);

nlohmann::json report_to_json(const ExecReport& report);
/// Throws ProtocolError on a malformed report object.
ExecReport report_from_json(const nlohmann::json& j);

/// Runs `interpreter runner_path` per submission. The request
/// {program, cases, per_case_timeout_s} goes to stdin as one JSON document;
/// one JSON report line is read from stdout. The child runs in a fresh
/// temporary directory with an address-space limit, a wall-clock kill and,
/// where permitted, no network namespace. Pass/fail is recomputed here from
/// observed outputs.
class SubprocessBackend : public ExecutionBackend {
  public:
    SubprocessBackend(std::string interpreter, std::string runner_path, std::map<std::string, TestSuite> suites,
                      size_t capacity = 1);

    ExecReport execute(const Assignment& assignment, const std::string& program, const ExecLimits& limits) override;
    size_t capacity() const override { return capacity_; }

  private:
    std::string interpreter_;
    std::string runner_path_;
    std::map<std::string, TestSuite> suites_;
    size_t capacity_;
};

class Grader {
  public:
    explicit Grader(ExecutionBackend& backend, ExecLimits limits = {}, FeedbackTemplate tmpl = {});

    /// Throws GraderUnavailable (retriable) when the backend fails.
    GradeOutcome grade(const Assignment& assignment, const std::string& program) const;

    /// Grades many programs for one assignment, at most `concurrency`
    /// (and the backend's capacity) at a time. Results are in input order.
    std::vector<GradeOutcome> grade_all(const Assignment& assignment, const std::vector<std::string>& programs,
                                        size_t concurrency) const;

    const ExecLimits& limits() const { return limits_; }

  private:
    ExecutionBackend& backend_;
    ExecLimits limits_;
    FeedbackTemplate template_;
};

}  // namespace stusim
