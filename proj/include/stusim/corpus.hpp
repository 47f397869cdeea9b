#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace stusim {

struct Submission {
    int index = 0;  // 1-based position in the trajectory
    std::string code;
    std::string timestamp;  // ISO-8601
    double logged_score = 0.0;
    std::optional<std::string> logged_feedback;
};

/// One student's ordered submissions for one assignment. Dataset-specific
/// tags (e.g. "semester") live in `metadata`.
struct Trajectory {
    std::string student_id;
    std::string assignment_id;
    std::vector<Submission> entries;
    std::map<std::string, std::string> metadata;

    int length() const { return static_cast<int>(entries.size()); }
    std::string semester() const;
};

struct Assignment {
    std::string assignment_id;
    std::string description;
    std::optional<std::string> reference_solution;
    std::string test_suite_ref;
    std::optional<std::string> context;  // appended to the assignment turn when present
};

enum class SplitLabel { Train, Test, Unsplit };

struct Corpus {
    std::map<std::string, Assignment> assignments;
    std::vector<Trajectory> trajectories;
    SplitLabel split_label = SplitLabel::Unsplit;
};

/// Builds a corpus and checks that every trajectory's assignment resolves.
/// Throws DataError naming the first unresolved assignment id.
Corpus make_corpus(std::map<std::string, Assignment> assignments, std::vector<Trajectory> trajectories,
                   SplitLabel label = SplitLabel::Unsplit);

// ---- ingest ---------------------------------------------------------------

enum class LogFormat { Jsonl, Csv };

/// Maps logical field names to source column names. Required fields:
/// student, assignment, timestamp, code, score. Optional: feedback, semester.
using ColumnMap = std::map<std::string, std::string>;

ColumnMap default_column_map();

struct RowError {
    int row = 0;  // 1-based data row number (CSV header excluded)
    std::string message;
};

struct IngestResult {
    std::vector<Trajectory> trajectories;
    std::vector<RowError> errors;
};

/// Reads flat submission rows, groups them by (student, assignment) in order
/// of first appearance, and orders entries by timestamp (stable for ties).
/// Throws DataError when the file is unreadable or a required column is
/// unmapped.
IngestResult ingest_logs(const std::string& path, LogFormat format, const ColumnMap& columns = default_column_map());

/// Same as ingest_logs over in-memory text.
IngestResult ingest_text(const std::string& text, LogFormat format, const ColumnMap& columns = default_column_map());

/// Parses an ISO-8601 timestamp (date, optional time with fraction, optional
/// Z or +hh:mm offset) into microseconds since the Unix epoch, UTC.
std::optional<std::int64_t> parse_timestamp(const std::string& text);

/// RFC 4180 CSV parsing (quoted fields, doubled quotes, embedded newlines).
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

// ---- filtering ------------------------------------------------------------

struct FilterRules {
    bool require_one_pass = true;
    bool drop_noncompiling_submissions = true;
    bool keep_runtime_errors = true;
};

enum class RejectReason { NoPass, Empty };

const char* reject_reason_name(RejectReason reason);

struct FilterResult {
    std::optional<Trajectory> trajectory;
    std::optional<RejectReason> rejected;
};

using CompileCheck = std::function<bool(const std::string&)>;

/// Drops non-compiling submissions (and, when keep_runtime_errors is false,
/// submissions whose logged feedback starts with "Runtime error"), re-indexes
/// survivors 1..T', then rejects empty or never-passing trajectories.
FilterResult filter_trajectory(const Trajectory& traj, const FilterRules& rules, const CompileCheck& compiles);

struct FilterSummary {
    int kept = 0;
    int rejected_empty = 0;
    int rejected_no_pass = 0;
    int dropped_submissions = 0;
};

Corpus filter_corpus(const Corpus& corpus, const FilterRules& rules, const CompileCheck& compiles,
                     FilterSummary* summary = nullptr);

// ---- splitting --------------------------------------------------------------

/// Semester tag -> "train" | "test" | "exclude".
using SplitPolicy = std::map<std::string, std::string>;

struct SampleSpec {
    int count = 0;
    std::uint64_t seed = 0;
};

struct SplitSummary {
    int n_train = 0;
    int n_test = 0;
    int n_excluded = 0;
    int n_test_unsampled = 0;  // test trajectories left out by sampling
    int student_overlap = 0;   // students present in both splits
};

struct SplitResult {
    Corpus train;
    Corpus test;
    SplitSummary summary;
};

/// Throws DataError naming the tag when a trajectory's semester is not in
/// the policy, or ConfigError for an unknown policy value.
SplitResult split_corpus(const Corpus& corpus, const SplitPolicy& policy,
                         const std::optional<SampleSpec>& sample = std::nullopt);

// ---- statistics -------------------------------------------------------------

struct StatsTable {
    int n_traj = 0;
    int n_students = 0;
    int n_success = 0;
    int n_fail = 0;
    int n_assignments = 0;
    double avg_len = 0.0;
    double avg_final_grade = 0.0;     // in [0,1]
    double median_final_grade = 0.0;  // in [0,1]
};

/// Throws DataError on an empty corpus.
StatsTable corpus_stats(const Corpus& corpus);

/// Markdown header for stats rows: | Split | #Traj | #Stud | #Succ | #Fail | #Asg | Avg.Len | Avg.G | Med.G |
std::string stats_header();

/// One markdown row with grades rendered as percentages.
std::string stats_row(const std::string& label, const StatsTable& stats);

/// Parses a row produced by stats_row (or written by hand in that layout).
/// Returns the label and the table, grades converted back to [0,1].
std::optional<std::pair<std::string, StatsTable>> parse_stats_row(const std::string& row);

// ---- JSONL I/O -------------------------------------------------------------

nlohmann::json trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const nlohmann::json& j);
nlohmann::json assignment_to_json(const Assignment& a);
Assignment assignment_from_json(const nlohmann::json& j);

std::vector<Trajectory> read_trajectories(const std::string& path);
void write_trajectories(const std::string& path, const std::vector<Trajectory>& trajectories);
std::map<std::string, Assignment> read_assignments(const std::string& path);
void write_assignments(const std::string& path, const std::map<std::string, Assignment>& assignments);

}  // namespace stusim
