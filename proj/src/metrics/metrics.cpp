#include "stusim/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "stusim/analysis/codebleu.hpp"
#include "stusim/common.hpp"
#include "stusim/errors.hpp"

namespace stusim {

using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

json degr_json(const std::optional<DegradationResult>& d) {
    if (!d) return nullptr;
    return {{"value", d->value}, {"incomplete", d->incomplete}};
}

std::optional<DegradationResult> degr_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return DegradationResult{j.at(key).at("value").get<double>(), j.at(key).at("incomplete").get<bool>()};
}

std::string fmt(const std::optional<double>& v, const char* spec, const char* missing) {
    if (!v) return missing;
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, *v);
    return buf;
}

std::string fmt_degr(const std::optional<DegradationResult>& d, const char* spec, const char* missing) {
    if (!d) return missing;
    std::string s = fmt(d->value, spec, missing);
    if (d->incomplete) s += "*";
    return s;
}

std::vector<RolloutRecord> complete_only(const std::vector<RolloutRecord>& records) {
    std::vector<RolloutRecord> out;
    for (const auto& r : records)
        if (!r.aborted) out.push_back(r);
    return out;
}

const RolloutStep* step_at(const RolloutRecord& r, int k) {
    for (const auto& s : r.steps)
        if (s.k == k) return &s;
    return nullptr;
}

std::optional<double> mean_of(double sum, std::size_t n) {
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

}  // namespace

std::vector<MatchedPair> matched_pairs(const std::vector<RolloutRecord>& records, int k) {
    std::vector<MatchedPair> out;
    for (const auto& r : records) {
        if (r.aborted) continue;
        const RolloutStep* s = step_at(r, k);
        if (!s || !s->ground_truth_code || !s->ground_truth_score) continue;
        out.push_back({r.student_id, r.assignment_id, r.start_t, k, s->generated_code, s->outcome.score,
                       *s->ground_truth_code, *s->ground_truth_score});
    }
    return out;
}

double grade_proximity(double pred, double truth) { return 1.0 - std::fabs(pred - truth); }

std::optional<double> CoverageCount::value() const {
    if (eligible == 0) return std::nullopt;
    return static_cast<double>(covered) / static_cast<double>(eligible);
}

CoverageCount coverage(const std::vector<RolloutRecord>& records, int k) {
    CoverageCount c;
    for (const auto& r : records) {
        if (r.aborted || !r.has_ground_truth(k)) continue;
        ++c.eligible;
        if (step_at(r, k)) ++c.covered;
    }
    return c;
}

double degradation(const std::vector<double>& means) {
    if (means.size() < 2) throw DataError("degradation needs at least two step means");
    // Differences of nearby doubles are exact; long double keeps the sum exact too.
    long double sum = 0.0L;
    for (size_t k = 1; k < means.size(); ++k)
        sum += static_cast<long double>(means[k]) - static_cast<long double>(means[0]);
    return static_cast<double>(sum / static_cast<long double>(means.size() - 1));
}

std::optional<DegradationResult> degradation(const std::vector<std::optional<double>>& means) {
    if (means.empty() || !means[0]) return std::nullopt;
    std::vector<double> present{*means[0]};
    bool incomplete = false;
    for (size_t k = 1; k < means.size(); ++k) {
        if (means[k])
            present.push_back(*means[k]);
        else
            incomplete = true;
    }
    if (present.size() < 2) return std::nullopt;
    return DegradationResult{degradation(present), incomplete};
}

MetricsReport aggregate(const std::vector<RolloutRecord>& all_records, const AggregateOptions& options) {
    if (options.K < 1) throw ConfigError("K must be at least 1");
    MetricsReport rep;
    rep.K = options.K;
    rep.averaging = options.averaging;
    for (const auto& r : all_records) (r.aborted ? rep.n_aborted : rep.n_records)++;
    const std::vector<RolloutRecord> records = complete_only(all_records);

    std::size_t cov_num = 0, cov_den = 0, pairs_total = 0;
    double gp_sum = 0.0, cb_sum = 0.0;
    std::vector<std::optional<double>> cov_k, gp_k, cb_k;
    for (int k = 1; k <= options.K; ++k) {
        StepMetrics m;
        m.k = k;
        const CoverageCount c = coverage(records, k);
        m.coverage = c.value();
        m.n_eligible = c.eligible;
        cov_num += c.covered;
        cov_den += c.eligible;

        const auto pairs = matched_pairs(records, k);
        std::vector<double> cb(pairs.size(), 0.0);
        parallel_for(pairs.size(), options.workers, [&](size_t i) {
            cb[i] = analysis::codebleu(pairs[i].generated_code, pairs[i].ground_truth_code, options.codebleu_weights)
                        .total;
        });
        double gp_step = 0.0, cb_step = 0.0;
        for (size_t i = 0; i < pairs.size(); ++i) {
            gp_step += grade_proximity(pairs[i].generated_score, pairs[i].ground_truth_score);
            cb_step += cb[i];
        }
        m.n_matched = pairs.size();
        m.grade_proximity = mean_of(gp_step, pairs.size());
        m.codebleu = mean_of(cb_step, pairs.size());
        gp_sum += gp_step;
        cb_sum += cb_step;
        pairs_total += pairs.size();

        cov_k.push_back(m.coverage);
        gp_k.push_back(m.grade_proximity);
        cb_k.push_back(m.codebleu);
        rep.per_step.push_back(m);
    }

    if (options.averaging == Averaging::Micro) {
        rep.avg_coverage = mean_of(static_cast<double>(cov_num), cov_den);
        rep.avg_grade_proximity = mean_of(gp_sum, pairs_total);
        rep.avg_codebleu = mean_of(cb_sum, pairs_total);
    } else {
        auto macro = [](const std::vector<std::optional<double>>& v) {
            double s = 0.0;
            std::size_t n = 0;
            for (const auto& x : v)
                if (x) s += *x, ++n;
            return mean_of(s, n);
        };
        rep.avg_coverage = macro(cov_k);
        rep.avg_grade_proximity = macro(gp_k);
        rep.avg_codebleu = macro(cb_k);
    }
    if (options.K >= 2) {
        rep.delta_coverage = degradation(cov_k);
        rep.delta_grade_proximity = degradation(gp_k);
        rep.delta_codebleu = degradation(cb_k);
    }
    return rep;
}

std::vector<ProgressionPoint> progression_points(const Corpus& corpus) {
    std::vector<ProgressionPoint> out;
    for (const auto& tr : corpus.trajectories) {
        const int T = tr.length();
        for (int i = 1; i <= T; ++i) {
            const double pos = T == 1 ? 0.0 : static_cast<double>(i - 1) / static_cast<double>(T - 1);
            out.push_back({pos, tr.entries[static_cast<size_t>(i - 1)].logged_score});
        }
    }
    return out;
}

std::vector<ProgressionPoint> progression_points(const std::vector<RolloutRecord>& records) {
    std::vector<ProgressionPoint> out;
    for (const auto& r : records) {
        if (r.aborted) continue;
        for (const auto& s : r.steps) {
            const int idx = r.start_t + s.k - 1;
            if (idx > r.length) continue;
            const double pos = r.length == 1 ? 0.0 : static_cast<double>(idx - 1) / static_cast<double>(r.length - 1);
            out.push_back({pos, s.outcome.score});
        }
    }
    return out;
}

ProgressionCurve grade_progression(const std::vector<ProgressionPoint>& points, int n_bins, std::string label) {
    if (n_bins < 1) throw DataError("n_bins must be at least 1");
    struct Acc {
        double pos = 0.0, sum = 0.0, sq = 0.0;
        std::size_t n = 0;
    };
    std::vector<Acc> acc(static_cast<size_t>(n_bins));
    for (const auto& p : points) {
        int b = static_cast<int>(std::floor(p.position * n_bins));
        b = std::clamp(b, 0, n_bins - 1);
        Acc& a = acc[static_cast<size_t>(b)];
        a.pos += p.position;
        a.sum += p.score;
        a.sq += p.score * p.score;
        ++a.n;
    }
    ProgressionCurve curve;
    curve.label = std::move(label);
    for (const auto& a : acc) {
        if (a.n == 0) continue;
        const double n = static_cast<double>(a.n);
        ProgressionBin bin;
        bin.n = a.n;
        bin.position = a.pos / n;
        bin.mean = a.sum / n;
        if (a.n > 1) {
            const double var = std::max(0.0, (a.sq - n * bin.mean * bin.mean) / (n - 1.0));
            bin.ci95 = 1.96 * std::sqrt(var) / std::sqrt(n);
        }
        curve.bins.push_back(bin);
    }
    return curve;
}

ReportFormat report_format_from_name(const std::string& name) {
    if (name == "json") return ReportFormat::Json;
    if (name == "csv") return ReportFormat::Csv;
    if (name == "markdown" || name == "md") return ReportFormat::Markdown;
    throw ConfigError("report format must be json, csv or markdown, got '" + name + "'");
}

json report_to_json(const MetricsReport& r, const std::vector<ProgressionCurve>& curves) {
    json steps = json::array();
    for (const auto& m : r.per_step)
        steps.push_back({{"k", m.k},
                         {"coverage", opt(m.coverage)},
                         {"grade_proximity", opt(m.grade_proximity)},
                         {"codebleu", opt(m.codebleu)},
                         {"n_eligible", m.n_eligible},
                         {"n_matched", m.n_matched}});
    json cs = json::array();
    for (const auto& c : curves) {
        json bins = json::array();
        for (const auto& b : c.bins)
            bins.push_back({{"position", b.position}, {"mean", b.mean}, {"ci95", b.ci95}, {"n", b.n}});
        cs.push_back({{"label", c.label}, {"bins", bins}});
    }
    return {{"schema_version", kSchemaVersion},
            {"K", r.K},
            {"averaging", r.averaging == Averaging::Micro ? "micro" : "macro"},
            {"n_records", r.n_records},
            {"n_aborted", r.n_aborted},
            {"per_step", steps},
            {"average", {{"coverage", opt(r.avg_coverage)},
                         {"grade_proximity", opt(r.avg_grade_proximity)},
                         {"codebleu", opt(r.avg_codebleu)}}},
            {"degradation", {{"coverage", degr_json(r.delta_coverage)},
                             {"grade_proximity", degr_json(r.delta_grade_proximity)},
                             {"codebleu", degr_json(r.delta_codebleu)}}},
            {"curves", cs}};
}

std::pair<MetricsReport, std::vector<ProgressionCurve>> metrics_from_json(const json& j) {
    MetricsReport r;
    std::vector<ProgressionCurve> curves;
    try {
        if (j.at("schema_version").get<int>() != kSchemaVersion)
            throw DataError("unsupported report schema_version " + j.at("schema_version").dump());
        r.K = j.at("K").get<int>();
        r.averaging = j.at("averaging").get<std::string>() == "macro" ? Averaging::Macro : Averaging::Micro;
        r.n_records = j.at("n_records").get<std::size_t>();
        r.n_aborted = j.at("n_aborted").get<std::size_t>();
        for (const auto& s : j.at("per_step")) {
            StepMetrics m;
            m.k = s.at("k").get<int>();
            m.coverage = opt_from(s, "coverage");
            m.grade_proximity = opt_from(s, "grade_proximity");
            m.codebleu = opt_from(s, "codebleu");
            m.n_eligible = s.at("n_eligible").get<std::size_t>();
            m.n_matched = s.at("n_matched").get<std::size_t>();
            r.per_step.push_back(m);
        }
        const json& avg = j.at("average");
        r.avg_coverage = opt_from(avg, "coverage");
        r.avg_grade_proximity = opt_from(avg, "grade_proximity");
        r.avg_codebleu = opt_from(avg, "codebleu");
        const json& d = j.at("degradation");
        r.delta_coverage = degr_from(d, "coverage");
        r.delta_grade_proximity = degr_from(d, "grade_proximity");
        r.delta_codebleu = degr_from(d, "codebleu");
        for (const auto& c : j.value("curves", json::array())) {
            ProgressionCurve curve;
            curve.label = c.at("label").get<std::string>();
            for (const auto& b : c.at("bins"))
                curve.bins.push_back({b.at("position").get<double>(), b.at("mean").get<double>(),
                                      b.at("ci95").get<double>(), b.at("n").get<std::size_t>()});
            curves.push_back(std::move(curve));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed metrics report: ") + e.what());
    }
    return {r, curves};
}

std::string report_to_csv(const MetricsReport& r) {
    std::string out = "k,coverage,grade_proximity,codebleu,n_eligible,n_matched\n";
    for (const auto& m : r.per_step)
        out += std::to_string(m.k) + "," + fmt(m.coverage, "%.6f", "") + "," + fmt(m.grade_proximity, "%.6f", "") +
               "," + fmt(m.codebleu, "%.6f", "") + "," + std::to_string(m.n_eligible) + "," +
               std::to_string(m.n_matched) + "\n";
    std::size_t eligible = 0, matched = 0;
    for (const auto& m : r.per_step) eligible += m.n_eligible, matched += m.n_matched;
    out += "avg," + fmt(r.avg_coverage, "%.6f", "") + "," + fmt(r.avg_grade_proximity, "%.6f", "") + "," +
           fmt(r.avg_codebleu, "%.6f", "") + "," + std::to_string(eligible) + "," + std::to_string(matched) + "\n";
    return out;
}

std::string curves_to_csv(const std::vector<ProgressionCurve>& curves) {
    std::string out = "label,position,mean,ci95,n\n";
    char buf[128];
    for (const auto& c : curves)
        for (const auto& b : c.bins) {
            std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%zu\n", b.position, b.mean, b.ci95, b.n);
            out += c.label + buf;
        }
    return out;
}

std::string report_to_markdown(const std::vector<std::pair<std::string, MetricsReport>>& reports) {
    std::string out = "Cov (Coverage), GP (Grade Proximity), CB (CodeBLEU)\n\n";
    out += "| Model | Cov | GP | CB | ΔCov | ΔGP | ΔCB |\n";
    out += "|---|---|---|---|---|---|---|\n";
    bool any_incomplete = false;
    for (const auto& [label, r] : reports) {
        out += "| " + label + " | " + fmt(r.avg_coverage, "%.3f", "-") + " | " +
               fmt(r.avg_grade_proximity, "%.3f", "-") + " | " + fmt(r.avg_codebleu, "%.3f", "-") + " | " +
               fmt_degr(r.delta_coverage, "%+.3f", "-") + " | " + fmt_degr(r.delta_grade_proximity, "%+.3f", "-") +
               " | " + fmt_degr(r.delta_codebleu, "%+.3f", "-") + " |\n";
        for (const auto* d : {&r.delta_coverage, &r.delta_grade_proximity, &r.delta_codebleu})
            if (*d && (*d)->incomplete) any_incomplete = true;
    }
    if (any_incomplete) out += "\n\\* computed over the steps with data\n";
    for (const auto& [label, r] : reports) {
        out += "\n### " + label + " per step\n\n| k | Cov | GP | CB | n eligible | n matched |\n|---|---|---|---|---|---|\n";
        for (const auto& m : r.per_step)
            out += "| " + std::to_string(m.k) + " | " + fmt(m.coverage, "%.3f", "-") + " | " +
                   fmt(m.grade_proximity, "%.3f", "-") + " | " + fmt(m.codebleu, "%.3f", "-") + " | " +
                   std::to_string(m.n_eligible) + " | " + std::to_string(m.n_matched) + " |\n";
    }
    return out;
}

void emit_report(const std::string& path, const MetricsReport& report, const std::vector<ProgressionCurve>& curves,
                 ReportFormat format, const std::string& label) {
    std::string text;
    switch (format) {
        case ReportFormat::Json: text = report_to_json(report, curves).dump(2) + "\n"; break;
        case ReportFormat::Csv: text = report_to_csv(report); break;
        case ReportFormat::Markdown: text = report_to_markdown({{label, report}}); break;
    }
    write_file_atomic(path, text);
}

}  // namespace stusim
