#include "stusim/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "stusim/common.hpp"
#include "stusim/errors.hpp"

namespace stusim {

using nlohmann::json;

std::string Trajectory::semester() const {
    auto it = metadata.find("semester");
    return it == metadata.end() ? "" : it->second;
}

Corpus make_corpus(std::map<std::string, Assignment> assignments, std::vector<Trajectory> trajectories,
                   SplitLabel label) {
    for (const auto& t : trajectories)
        if (!assignments.count(t.assignment_id))
            throw DataError("trajectory of student '" + t.student_id + "' references unknown assignment '" +
                            t.assignment_id + "'");
    for (const auto& [id, a] : assignments)
        if (trim(a.description).empty()) throw DataError("assignment '" + id + "' has an empty description");
    Corpus c;
    c.assignments = std::move(assignments);
    c.trajectories = std::move(trajectories);
    c.split_label = label;
    return c;
}

// ---- ingest ---------------------------------------------------------------

ColumnMap default_column_map() {
    return {{"student", "student_id"}, {"assignment", "assignment_id"}, {"timestamp", "timestamp"},
            {"code", "code"},          {"score", "score"},              {"feedback", "feedback"},
            {"semester", "semester"}};
}

namespace {

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool read_digits(const std::string& s, size_t& pos, size_t count, int& out) {
    if (pos + count > s.size()) return false;
    out = 0;
    for (size_t i = 0; i < count; ++i) {
        const char c = s[pos + i];
        if (c < '0' || c > '9') return false;
        out = out * 10 + (c - '0');
    }
    pos += count;
    return true;
}

struct RawRow {
    int row = 0;
    std::map<std::string, std::string> fields;
};

const char* kRequired[] = {"student", "assignment", "timestamp", "code", "score"};

std::optional<double> parse_score(const std::string& text) {
    const std::string t = trim(text);
    if (t.empty()) return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

IngestResult group_rows(const std::vector<RawRow>& rows, const ColumnMap& columns, std::vector<RowError> errors) {
    struct Pending {
        Submission sub;
        std::int64_t key;
    };
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::vector<Pending>> groups;
    std::map<std::pair<std::string, std::string>, std::string> semesters;

    for (const auto& raw : rows) {
        auto field = [&](const std::string& logical) -> std::optional<std::string> {
            auto col = columns.find(logical);
            if (col == columns.end()) return std::nullopt;
            auto it = raw.fields.find(col->second);
            if (it == raw.fields.end()) return std::nullopt;
            return it->second;
        };
        std::string missing;
        for (const char* name : kRequired)
            if (!field(name)) missing += missing.empty() ? name : std::string(", ") + name;
        if (!missing.empty()) {
            errors.push_back({raw.row, "missing field(s): " + missing});
            continue;
        }
        const std::string student = *field("student");
        const std::string assignment = *field("assignment");
        if (trim(student).empty() || trim(assignment).empty()) {
            errors.push_back({raw.row, "empty student or assignment id"});
            continue;
        }
        const auto key = parse_timestamp(*field("timestamp"));
        if (!key) {
            errors.push_back({raw.row, "unparseable timestamp '" + *field("timestamp") + "'"});
            continue;
        }
        const auto score = parse_score(*field("score"));
        if (!score || *score < 0.0 || *score > 1.0) {
            errors.push_back({raw.row, "score must be a number in [0,1], got '" + *field("score") + "'"});
            continue;
        }
        Submission sub;
        sub.code = *field("code");
        if (trim(sub.code).empty()) {
            errors.push_back({raw.row, "empty code"});
            continue;
        }
        sub.timestamp = *field("timestamp");
        sub.logged_score = *score;
        if (auto fb = field("feedback"); fb && !fb->empty()) sub.logged_feedback = *fb;

        const auto gkey = std::make_pair(student, assignment);
        if (!groups.count(gkey)) order.push_back(gkey);
        groups[gkey].push_back({std::move(sub), *key});
        if (auto sem = field("semester"); sem && !sem->empty()) semesters[gkey] = *sem;
    }

    IngestResult result;
    result.errors = std::move(errors);
    for (const auto& gkey : order) {
        auto& pending = groups[gkey];
        std::stable_sort(pending.begin(), pending.end(),
                         [](const Pending& a, const Pending& b) { return a.key < b.key; });
        Trajectory t;
        t.student_id = gkey.first;
        t.assignment_id = gkey.second;
        if (semesters.count(gkey)) t.metadata["semester"] = semesters[gkey];
        for (size_t i = 0; i < pending.size(); ++i) {
            pending[i].sub.index = static_cast<int>(i + 1);
            t.entries.push_back(std::move(pending[i].sub));
        }
        result.trajectories.push_back(std::move(t));
    }
    return result;
}

std::string json_field_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_null()) return "";
    return v.dump();
}

}  // namespace

std::optional<std::int64_t> parse_timestamp(const std::string& text) {
    const std::string s = trim(text);
    size_t pos = 0;
    int year = 0, month = 0, day = 0;
    if (!read_digits(s, pos, 4, year) || pos >= s.size() || s[pos++] != '-') return std::nullopt;
    if (!read_digits(s, pos, 2, month) || pos >= s.size() || s[pos++] != '-') return std::nullopt;
    if (!read_digits(s, pos, 2, day)) return std::nullopt;
    if (month < 1 || month > 12 || day < 1 || day > 31) return std::nullopt;
    int hour = 0, minute = 0, second = 0;
    std::int64_t micros = 0;
    std::int64_t offset_s = 0;
    if (pos < s.size()) {
        if (s[pos] != 'T' && s[pos] != 't' && s[pos] != ' ') return std::nullopt;
        ++pos;
        if (!read_digits(s, pos, 2, hour) || pos >= s.size() || s[pos++] != ':') return std::nullopt;
        if (!read_digits(s, pos, 2, minute)) return std::nullopt;
        if (pos < s.size() && s[pos] == ':') {
            ++pos;
            if (!read_digits(s, pos, 2, second)) return std::nullopt;
            if (pos < s.size() && (s[pos] == '.' || s[pos] == ',')) {
                ++pos;
                int digits = 0;
                while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
                    if (digits < 6) micros = micros * 10 + (s[pos] - '0');
                    ++digits;
                    ++pos;
                }
                if (digits == 0) return std::nullopt;
                for (int d = digits; d < 6; ++d) micros *= 10;
            }
        }
        if (hour > 24 || minute > 59 || second > 60) return std::nullopt;
        if (pos < s.size()) {
            if (s[pos] == 'Z' || s[pos] == 'z') {
                ++pos;
            } else if (s[pos] == '+' || s[pos] == '-') {
                const int sign = s[pos] == '-' ? -1 : 1;
                ++pos;
                int oh = 0, om = 0;
                if (!read_digits(s, pos, 2, oh)) return std::nullopt;
                if (pos < s.size() && s[pos] == ':') ++pos;
                if (pos < s.size() && !read_digits(s, pos, 2, om)) return std::nullopt;
                offset_s = sign * (oh * 3600 + om * 60);
            }
        }
        if (pos != s.size()) return std::nullopt;
    }
    const std::int64_t days = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
    const std::int64_t seconds = days * 86400 + hour * 3600 + minute * 60 + second - offset_s;
    return seconds * 1000000 + micros;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    for (size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"' && !field_started) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            field_started = false;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            row.push_back(std::move(field));
            field.clear();
            field_started = false;
            if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
            row.clear();
        } else {
            field += c;
            field_started = true;
        }
    }
    if (field_started || !row.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

IngestResult ingest_text(const std::string& text, LogFormat format, const ColumnMap& columns) {
    for (const char* name : kRequired)
        if (!columns.count(name)) throw DataError(std::string("column map lacks required field '") + name + "'");

    std::vector<RawRow> rows;
    std::vector<RowError> errors;
    if (format == LogFormat::Jsonl) {
        int row = 0;
        for (const auto& line : split_lines(text)) {
            ++row;
            if (trim(line).empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error& e) {
                errors.push_back({row, std::string("invalid JSON: ") + e.what()});
                continue;
            }
            if (!j.is_object()) {
                errors.push_back({row, "row is not a JSON object"});
                continue;
            }
            RawRow r;
            r.row = row;
            for (auto it = j.begin(); it != j.end(); ++it) r.fields[it.key()] = json_field_text(it.value());
            rows.push_back(std::move(r));
        }
    } else {
        const auto table = parse_csv(text);
        if (table.empty()) return {};
        const auto& header = table.front();
        for (const char* name : kRequired) {
            const std::string& col = columns.at(name);
            if (std::find(header.begin(), header.end(), col) == header.end())
                throw DataError("CSV header lacks column '" + col + "' for field '" + name + "'");
        }
        for (size_t i = 1; i < table.size(); ++i) {
            const auto& cells = table[i];
            if (cells.size() != header.size()) {
                errors.push_back({static_cast<int>(i), "expected " + std::to_string(header.size()) +
                                                           " fields, got " + std::to_string(cells.size())});
                continue;
            }
            RawRow r;
            r.row = static_cast<int>(i);
            for (size_t c = 0; c < header.size(); ++c) r.fields[header[c]] = cells[c];
            rows.push_back(std::move(r));
        }
    }
    return group_rows(rows, columns, std::move(errors));
}

IngestResult ingest_logs(const std::string& path, LogFormat format, const ColumnMap& columns) {
    return ingest_text(read_file(path), format, columns);
}

// ---- filtering ------------------------------------------------------------

const char* reject_reason_name(RejectReason reason) {
    return reason == RejectReason::NoPass ? "no_pass" : "empty";
}

FilterResult filter_trajectory(const Trajectory& traj, const FilterRules& rules, const CompileCheck& compiles) {
    Trajectory out = traj;
    out.entries.clear();
    for (const auto& sub : traj.entries) {
        if (rules.drop_noncompiling_submissions && !compiles(sub.code)) continue;
        if (!rules.keep_runtime_errors && sub.logged_feedback &&
            sub.logged_feedback->rfind("Runtime error", 0) == 0)
            continue;
        out.entries.push_back(sub);
        out.entries.back().index = static_cast<int>(out.entries.size());
    }
    FilterResult result;
    if (out.entries.empty()) {
        result.rejected = RejectReason::Empty;
        return result;
    }
    if (rules.require_one_pass &&
        std::none_of(out.entries.begin(), out.entries.end(), [](const Submission& s) { return s.logged_score > 0.0; })) {
        result.rejected = RejectReason::NoPass;
        return result;
    }
    result.trajectory = std::move(out);
    return result;
}

Corpus filter_corpus(const Corpus& corpus, const FilterRules& rules, const CompileCheck& compiles,
                     FilterSummary* summary) {
    Corpus out;
    out.assignments = corpus.assignments;
    out.split_label = corpus.split_label;
    FilterSummary s;
    for (const auto& t : corpus.trajectories) {
        FilterResult r = filter_trajectory(t, rules, compiles);
        if (r.trajectory) {
            s.dropped_submissions += t.length() - r.trajectory->length();
            out.trajectories.push_back(std::move(*r.trajectory));
            ++s.kept;
        } else {
            s.dropped_submissions += t.length();
            if (*r.rejected == RejectReason::Empty) ++s.rejected_empty;
            else ++s.rejected_no_pass;
        }
    }
    if (summary) *summary = s;
    return out;
}

// ---- splitting --------------------------------------------------------------

SplitResult split_corpus(const Corpus& corpus, const SplitPolicy& policy, const std::optional<SampleSpec>& sample) {
    for (const auto& [tag, where] : policy)
        if (where != "train" && where != "test" && where != "exclude")
            throw ConfigError("split policy for '" + tag + "' must be train, test or exclude, got '" + where + "'");

    SplitResult r;
    r.train.assignments = corpus.assignments;
    r.test.assignments = corpus.assignments;
    r.train.split_label = SplitLabel::Train;
    r.test.split_label = SplitLabel::Test;
    std::vector<const Trajectory*> test;
    for (const auto& t : corpus.trajectories) {
        const std::string tag = t.semester();
        auto it = policy.find(tag);
        if (it == policy.end()) throw DataError("unknown semester tag '" + tag + "'");
        if (it->second == "train") r.train.trajectories.push_back(t);
        else if (it->second == "test") test.push_back(&t);
        else ++r.summary.n_excluded;
    }

    std::vector<size_t> chosen(test.size());
    std::iota(chosen.begin(), chosen.end(), 0);
    if (sample && sample->count >= 0 && static_cast<size_t>(sample->count) < test.size()) {
        std::mt19937_64 rng(sample->seed);
        // Partial Fisher-Yates: the first `count` slots form a uniform subset.
        for (size_t i = 0; i < static_cast<size_t>(sample->count); ++i) {
            const size_t j = i + uniform_index(rng, test.size() - i);
            std::swap(chosen[i], chosen[j]);
        }
        chosen.resize(static_cast<size_t>(sample->count));
        std::sort(chosen.begin(), chosen.end());
    }
    for (size_t i : chosen) r.test.trajectories.push_back(*test[i]);

    r.summary.n_train = static_cast<int>(r.train.trajectories.size());
    r.summary.n_test = static_cast<int>(r.test.trajectories.size());
    r.summary.n_test_unsampled = static_cast<int>(test.size() - chosen.size());
    std::set<std::string> train_students, test_students;
    for (const auto& t : r.train.trajectories) train_students.insert(t.student_id);
    for (const auto& t : r.test.trajectories) test_students.insert(t.student_id);
    for (const auto& s : test_students) r.summary.student_overlap += train_students.count(s) ? 1 : 0;
    return r;
}

// ---- statistics -------------------------------------------------------------

StatsTable corpus_stats(const Corpus& corpus) {
    if (corpus.trajectories.empty()) throw DataError("corpus_stats: corpus has no trajectories");
    StatsTable s;
    std::set<std::string> students, assignments;
    std::vector<double> finals;
    long total_len = 0;
    for (const auto& t : corpus.trajectories) {
        if (t.entries.empty()) throw DataError("corpus_stats: trajectory with no submissions");
        students.insert(t.student_id);
        assignments.insert(t.assignment_id);
        total_len += t.length();
        const double final_score = t.entries.back().logged_score;
        finals.push_back(final_score);
        if (final_score == 1.0) ++s.n_success;
        else ++s.n_fail;
    }
    s.n_traj = static_cast<int>(corpus.trajectories.size());
    s.n_students = static_cast<int>(students.size());
    s.n_assignments = static_cast<int>(assignments.size());
    s.avg_len = static_cast<double>(total_len) / s.n_traj;
    s.avg_final_grade = std::accumulate(finals.begin(), finals.end(), 0.0) / s.n_traj;
    std::sort(finals.begin(), finals.end());
    const size_t n = finals.size();
    s.median_final_grade = n % 2 ? finals[n / 2] : (finals[n / 2 - 1] + finals[n / 2]) / 2.0;
    return s;
}

std::string stats_header() {
    return "| Split | #Traj | #Stud | #Succ | #Fail | #Asg | Avg.Len | Avg.G | Med.G |\n"
           "|---|---|---|---|---|---|---|---|---|";
}

std::string stats_row(const std::string& label, const StatsTable& s) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "| %s | %d | %d | %d | %d | %d | %.1f | %.2f | %.2f |", label.c_str(), s.n_traj,
                  s.n_students, s.n_success, s.n_fail, s.n_assignments, s.avg_len, s.avg_final_grade * 100.0,
                  s.median_final_grade * 100.0);
    return buf;
}

std::optional<std::pair<std::string, StatsTable>> parse_stats_row(const std::string& row) {
    std::vector<std::string> cells;
    std::stringstream ss(row);
    std::string cell;
    while (std::getline(ss, cell, '|')) cells.push_back(trim(cell));
    // A leading '|' produces an empty first cell.
    if (!cells.empty() && cells.front().empty()) cells.erase(cells.begin());
    if (cells.size() != 9) return std::nullopt;
    StatsTable s;
    try {
        size_t used = 0;
        auto as_int = [&](const std::string& v) {
            const int x = std::stoi(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return x;
        };
        auto as_real = [&](const std::string& v) {
            const double x = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return x;
        };
        s.n_traj = as_int(cells[1]);
        s.n_students = as_int(cells[2]);
        s.n_success = as_int(cells[3]);
        s.n_fail = as_int(cells[4]);
        s.n_assignments = as_int(cells[5]);
        s.avg_len = as_real(cells[6]);
        s.avg_final_grade = as_real(cells[7]) / 100.0;
        s.median_final_grade = as_real(cells[8]) / 100.0;
    } catch (const std::exception&) {
        return std::nullopt;
    }
    return std::make_pair(cells[0], s);
}

// ---- JSONL I/O -------------------------------------------------------------

json trajectory_to_json(const Trajectory& t) {
    json j;
    j["student_id"] = t.student_id;
    j["assignment_id"] = t.assignment_id;
    j["semester"] = t.semester();
    json extra = json::object();
    for (const auto& [k, v] : t.metadata)
        if (k != "semester") extra[k] = v;
    if (!extra.empty()) j["metadata"] = extra;
    json entries = json::array();
    for (const auto& s : t.entries) {
        json e;
        e["index"] = s.index;
        e["timestamp"] = s.timestamp;
        e["code"] = s.code;
        e["logged_score"] = s.logged_score;
        if (s.logged_feedback) e["logged_feedback"] = *s.logged_feedback;
        entries.push_back(std::move(e));
    }
    j["entries"] = std::move(entries);
    return j;
}

Trajectory trajectory_from_json(const json& j) {
    Trajectory t;
    try {
        t.student_id = j.at("student_id").get<std::string>();
        t.assignment_id = j.at("assignment_id").get<std::string>();
        if (j.contains("semester") && j["semester"].is_string() && !j["semester"].get<std::string>().empty())
            t.metadata["semester"] = j["semester"].get<std::string>();
        if (j.contains("metadata"))
            for (auto it = j["metadata"].begin(); it != j["metadata"].end(); ++it)
                t.metadata[it.key()] = it.value().is_string() ? it.value().get<std::string>() : it.value().dump();
        for (const auto& e : j.at("entries")) {
            Submission s;
            s.index = e.value("index", static_cast<int>(t.entries.size()) + 1);
            s.timestamp = e.value("timestamp", "");
            s.code = e.at("code").get<std::string>();
            s.logged_score = e.at("logged_score").get<double>();
            if (e.contains("logged_feedback") && e["logged_feedback"].is_string())
                s.logged_feedback = e["logged_feedback"].get<std::string>();
            if (s.logged_score < 0.0 || s.logged_score > 1.0)
                throw DataError("logged_score outside [0,1] in trajectory of '" + t.student_id + "'");
            t.entries.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed trajectory object: ") + e.what());
    }
    return t;
}

json assignment_to_json(const Assignment& a) {
    json j;
    j["assignment_id"] = a.assignment_id;
    j["description"] = a.description;
    if (a.reference_solution) j["reference_solution"] = *a.reference_solution;
    j["test_suite_ref"] = a.test_suite_ref;
    if (a.context) j["context"] = *a.context;
    return j;
}

Assignment assignment_from_json(const json& j) {
    Assignment a;
    try {
        a.assignment_id = j.at("assignment_id").get<std::string>();
        a.description = j.at("description").get<std::string>();
        if (j.contains("reference_solution") && j["reference_solution"].is_string())
            a.reference_solution = j["reference_solution"].get<std::string>();
        a.test_suite_ref = j.value("test_suite_ref", a.assignment_id);
        if (j.contains("context") && j["context"].is_string()) a.context = j["context"].get<std::string>();
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed assignment object: ") + e.what());
    }
    return a;
}

namespace {

template <typename F>
void for_each_json_line(const std::string& path, F&& f) {
    int line_no = 0;
    for (const auto& line : split_lines(read_file(path))) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            f(json::parse(line));
        } catch (const json::parse_error& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

}  // namespace

std::vector<Trajectory> read_trajectories(const std::string& path) {
    std::vector<Trajectory> out;
    for_each_json_line(path, [&](const json& j) { out.push_back(trajectory_from_json(j)); });
    return out;
}

void write_trajectories(const std::string& path, const std::vector<Trajectory>& trajectories) {
    std::string text;
    for (const auto& t : trajectories) text += dump_line(trajectory_to_json(t)) + "\n";
    write_file_atomic(path, text);
}

std::map<std::string, Assignment> read_assignments(const std::string& path) {
    std::map<std::string, Assignment> out;
    for_each_json_line(path, [&](const json& j) {
        Assignment a = assignment_from_json(j);
        std::string id = a.assignment_id;
        out[id] = std::move(a);
    });
    return out;
}

void write_assignments(const std::string& path, const std::map<std::string, Assignment>& assignments) {
    std::string text;
    for (const auto& [id, a] : assignments) text += dump_line(assignment_to_json(a)) + "\n";
    write_file_atomic(path, text);
}

}  // namespace stusim
