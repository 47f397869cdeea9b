#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stusim/corpus.hpp"
#include "stusim/rollout.hpp"

namespace stusim {

/// A generated step paired with the student's submission at the same step.
struct MatchedPair {
    std::string student_id;
    std::string assignment_id;
    int start_t = 0;
    int k = 0;
    std::string generated_code;
    double generated_score = 0.0;
    std::string ground_truth_code;
    double ground_truth_score = 0.0;
};

/// Steps of non-aborted records at step k that have both a generation and
/// a ground truth.
std::vector<MatchedPair> matched_pairs(const std::vector<RolloutRecord>& records, int k);

/// 1 - |pred - truth|.
double grade_proximity(double pred, double truth);

struct CoverageCount {
    std::size_t eligible = 0;  // records with ground truth at step k
    std::size_t covered = 0;   // of those, records the model predicted at step k
    std::optional<double> value() const;
};

/// Aborted records are left out of both counts.
CoverageCount coverage(const std::vector<RolloutRecord>& records, int k);

/// (1/(K-1)) * sum_{k=2..K} (m_k - m_1). Throws DataError for fewer than two
/// values.
double degradation(const std::vector<double>& means);

struct DegradationResult {
    double value = 0.0;
    bool incomplete = false;  // some step means were missing
};

/// Same formula over the steps that are present; nullopt when m_1 or every
/// later step is missing.
std::optional<DegradationResult> degradation(const std::vector<std::optional<double>>& means);

enum class Averaging { Micro, Macro };

struct StepMetrics {
    int k = 0;
    std::optional<double> coverage;
    std::optional<double> grade_proximity;
    std::optional<double> codebleu;
    std::size_t n_eligible = 0;
    std::size_t n_matched = 0;
};

struct MetricsReport {
    int K = 5;
    Averaging averaging = Averaging::Micro;
    std::vector<StepMetrics> per_step;
    std::optional<double> avg_coverage;
    std::optional<double> avg_grade_proximity;
    std::optional<double> avg_codebleu;
    std::optional<DegradationResult> delta_coverage;
    std::optional<DegradationResult> delta_grade_proximity;
    std::optional<DegradationResult> delta_codebleu;
    std::size_t n_records = 0;
    std::size_t n_aborted = 0;
};

struct AggregateOptions {
    int K = 5;
    Averaging averaging = Averaging::Micro;
    std::array<double, 4> codebleu_weights{0.25, 0.25, 0.25, 0.25};
    std::size_t workers = 1;
};

/// Per-step coverage, grade proximity and CodeBLEU, their averages over
/// k = 1..K and the degradation of each. Micro averages weight every
/// eligible step (coverage) or matched pair (GP, CB) equally; macro
/// averages take the mean of the per-step values.
MetricsReport aggregate(const std::vector<RolloutRecord>& records, const AggregateOptions& options = {});

struct ProgressionPoint {
    double position = 0.0;  // (index - 1) / (T - 1), 0 when T = 1
    double score = 0.0;
};

std::vector<ProgressionPoint> progression_points(const Corpus& corpus);

/// Generated steps placed at the position of the ground truth they are
/// paired with; steps beyond the trajectory are skipped.
std::vector<ProgressionPoint> progression_points(const std::vector<RolloutRecord>& records);

struct ProgressionBin {
    double position = 0.0;  // mean position of the points in the bin
    double mean = 0.0;
    double ci95 = 0.0;  // 1.96 * sample sd / sqrt(n); 0 when n = 1
    std::size_t n = 0;
};

struct ProgressionCurve {
    std::string label;
    std::vector<ProgressionBin> bins;  // empty bins omitted
};

/// Throws DataError when n_bins < 1.
ProgressionCurve grade_progression(const std::vector<ProgressionPoint>& points, int n_bins = 20,
                                   std::string label = {});

enum class ReportFormat { Json, Csv, Markdown };

/// Accepts "json", "csv" and "markdown" (or "md").
ReportFormat report_format_from_name(const std::string& name);

nlohmann::json report_to_json(const MetricsReport& report, const std::vector<ProgressionCurve>& curves = {});
/// Throws DataError on a malformed or unknown-version document.
std::pair<MetricsReport, std::vector<ProgressionCurve>> metrics_from_json(const nlohmann::json& j);

/// Header, one row per step, then an "avg" row.
std::string report_to_csv(const MetricsReport& report);
std::string curves_to_csv(const std::vector<ProgressionCurve>& curves);

/// A summary table (one row per labelled report) followed by the
/// per-step breakdown of each.
std::string report_to_markdown(const std::vector<std::pair<std::string, MetricsReport>>& reports);

/// Writes the report in the given format. Throws DataError when the path is
/// not writable.
void emit_report(const std::string& path, const MetricsReport& report, const std::vector<ProgressionCurve>& curves,
                 ReportFormat format, const std::string& label = "model");

}  // namespace stusim
