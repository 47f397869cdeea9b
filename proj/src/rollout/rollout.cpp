#include "stusim/rollout.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>

#include "stusim/common.hpp"
#include "stusim/errors.hpp"

namespace stusim {

using nlohmann::json;

const char* termination_name(Termination t) {
    switch (t) {
        case Termination::PerfectSolution: return "perfect_solution";
        case Termination::NoGroundTruth: return "no_ground_truth";
        case Termination::Horizon: return "horizon";
    }
    return "horizon";
}

std::optional<Termination> termination_from_name(const std::string& name) {
    if (name == "perfect_solution") return Termination::PerfectSolution;
    if (name == "no_ground_truth") return Termination::NoGroundTruth;
    if (name == "horizon") return Termination::Horizon;
    return std::nullopt;
}

std::optional<Termination> should_terminate(const GradeOutcome& last, bool has_ground_truth_next, int k, int horizon) {
    if (last.score == 1.0) return Termination::PerfectSolution;
    if (!has_ground_truth_next) return Termination::NoGroundTruth;
    if (k >= horizon) return Termination::Horizon;
    return std::nullopt;
}

json record_to_json(const RolloutRecord& r) {
    json steps = json::array();
    for (const auto& s : r.steps) {
        json j = {{"k", s.k},
                  {"generated_code", s.generated_code},
                  {"score", s.outcome.score},
                  {"feedback", s.outcome.feedback},
                  {"status", grade_status_name(s.outcome.status)},
                  {"ground_truth_code", s.ground_truth_code ? json(*s.ground_truth_code) : json(nullptr)},
                  {"ground_truth_score", s.ground_truth_score ? json(*s.ground_truth_score) : json(nullptr)},
                  {"termination", s.termination ? json(termination_name(*s.termination)) : json(nullptr)}};
        steps.push_back(std::move(j));
    }
    json out = {{"student_id", r.student_id},
                {"assignment_id", r.assignment_id},
                {"start_t", r.start_t},
                {"T", r.length},
                {"steps", steps}};
    if (r.aborted) {
        out["aborted"] = true;
        out["abort_reason"] = r.abort_reason;
    }
    return out;
}

RolloutRecord record_from_json(const json& j) {
    RolloutRecord r;
    try {
        r.student_id = j.at("student_id").get<std::string>();
        r.assignment_id = j.at("assignment_id").get<std::string>();
        r.start_t = j.at("start_t").get<int>();
        r.length = j.at("T").get<int>();
        r.aborted = j.value("aborted", false);
        r.abort_reason = j.value("abort_reason", std::string());
        for (const auto& s : j.at("steps")) {
            RolloutStep step;
            step.k = s.at("k").get<int>();
            step.generated_code = s.at("generated_code").get<std::string>();
            step.outcome.score = s.at("score").get<double>();
            step.outcome.feedback = s.at("feedback").get<std::string>();
            const auto status = grade_status_from_name(s.at("status").get<std::string>());
            if (!status) throw DataError("unknown grade status '" + s.at("status").get<std::string>() + "'");
            step.outcome.status = *status;
            if (!s.at("ground_truth_code").is_null()) step.ground_truth_code = s["ground_truth_code"].get<std::string>();
            if (!s.at("ground_truth_score").is_null())
                step.ground_truth_score = s["ground_truth_score"].get<double>();
            if (!s.at("termination").is_null()) {
                const auto t = termination_from_name(s["termination"].get<std::string>());
                if (!t) throw DataError("unknown termination '" + s["termination"].get<std::string>() + "'");
                step.termination = t;
            }
            r.steps.push_back(std::move(step));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed rollout record: ") + e.what());
    }
    return r;
}

Dialogue rollout_context(const Assignment& assignment, const Trajectory& traj, int start_t,
                         const std::vector<RolloutStep>& steps, const RolloutSettings& settings) {
    Dialogue d = serialize_prefix(assignment, traj, start_t - 1, settings.mode);
    for (const auto& s : steps) {
        d.messages.push_back({Role::Assistant, fence_code(s.generated_code)});
        if (settings.mode.feedback == FeedbackMode::WithFeedback) d.messages.push_back({Role::User, s.outcome.feedback});
    }
    return truncate_dialogue(d, settings.budget, settings.counter);
}

RolloutRecord rollout_from(ChatModel& model, const Assignment& assignment, const Trajectory& traj, int start_t,
                           const Grader& grader, const RolloutSettings& settings) {
    RolloutRecord rec;
    rec.student_id = traj.student_id;
    rec.assignment_id = traj.assignment_id;
    rec.start_t = start_t;
    rec.length = traj.length();
    if (start_t < 2 || start_t > traj.length()) return rec;

    try {
        for (int k = 1; k <= settings.horizon; ++k) {
            const Dialogue context = rollout_context(assignment, traj, start_t, rec.steps, settings);
            const auto generations = model.complete(context);
            if (generations.empty()) throw ProtocolError("chat endpoint returned no generations");

            RolloutStep step;
            step.k = k;
            try {
                step.generated_code = extract_code(generations.front());
                step.outcome = grader.grade(assignment, step.generated_code);
            } catch (const EmptyGeneration&) {
                step.generated_code.clear();
                step.outcome = {0.0, "Syntax error: empty generation", GradeStatus::Noncompiling};
            }

            const int truth = start_t + k - 1;
            if (truth <= traj.length()) {
                const Submission& s = traj.entries[static_cast<size_t>(truth - 1)];
                step.ground_truth_code = s.code;
                step.ground_truth_score =
                    settings.regrade_ground_truth ? grader.grade(assignment, s.code).score : s.logged_score;
            }
            step.termination = should_terminate(step.outcome, start_t + k <= traj.length(), k, settings.horizon);
            const bool done = step.termination.has_value();
            rec.steps.push_back(std::move(step));
            if (done) break;
        }
    } catch (const EndpointUnavailable& e) {
        rec.aborted = true;
        rec.abort_reason = std::string("endpoint_unavailable: ") + e.what();
    } catch (const ProtocolError& e) {
        rec.aborted = true;
        rec.abort_reason = std::string("protocol_error: ") + e.what();
    } catch (const GraderUnavailable& e) {
        rec.aborted = true;
        rec.abort_reason = std::string("grader_unavailable: ") + e.what();
    } catch (const CannotFit& e) {
        rec.aborted = true;
        rec.abort_reason = std::string("cannot_fit: ") + e.what();
    }
    return rec;
}

std::string aborted_path(const std::string& out_path) {
    const std::string ext = ".jsonl";
    if (out_path.size() > ext.size() && out_path.compare(out_path.size() - ext.size(), ext.size(), ext) == 0)
        return out_path.substr(0, out_path.size() - ext.size()) + ".aborted.jsonl";
    return out_path + ".aborted.jsonl";
}

namespace {

std::string record_key(const std::string& student, const std::string& assignment, int start_t) {
    return student + '\x1f' + assignment + '\x1f' + std::to_string(start_t);
}

struct Task {
    size_t traj = 0;
    int start_t = 0;
    std::string key;
};

std::string join_lines(const std::vector<Task>& tasks, const std::map<std::string, std::string>& lines) {
    std::string out;
    for (const auto& t : tasks) {
        auto it = lines.find(t.key);
        if (it == lines.end()) continue;
        out += it->second;
        out += '\n';
    }
    return out;
}

}  // namespace

RunSummary run_eval(const Corpus& corpus, ChatModel& model, const Grader& grader, const RolloutSettings& settings,
                    const RunOptions& options) {
    if (options.out_path.empty()) throw ConfigError("run_eval needs an output path");
    if (options.concurrency < 1) throw ConfigError("concurrency must be at least 1");

    std::vector<Task> tasks;
    for (size_t i = 0; i < corpus.trajectories.size(); ++i) {
        const Trajectory& tr = corpus.trajectories[i];
        for (int t = 2; t <= tr.length(); ++t) tasks.push_back({i, t, record_key(tr.student_id, tr.assignment_id, t)});
    }

    RunSummary summary;
    summary.total = tasks.size();

    std::map<std::string, std::string> done_lines;
    if (options.resume && std::filesystem::exists(options.out_path)) {
        std::map<std::string, bool> wanted;
        for (const auto& t : tasks) wanted[t.key] = true;
        for (const auto& line : split_lines(read_file(options.out_path))) {
            if (trim(line).empty()) continue;
            try {
                const RolloutRecord r = record_from_json(json::parse(line));
                if (r.aborted) continue;
                const std::string key = record_key(r.student_id, r.assignment_id, r.start_t);
                if (wanted.count(key)) done_lines[key] = dump_line(record_to_json(r));
            } catch (const std::exception&) {
                ++summary.dropped_lines;
            }
        }
    }
    summary.resumed = done_lines.size();
    write_file_atomic(options.out_path, join_lines(tasks, done_lines));

    std::vector<const Task*> pending;
    for (const auto& t : tasks)
        if (!done_lines.count(t.key)) pending.push_back(&t);
    size_t limit = pending.size();
    if (options.max_records && *options.max_records < limit) {
        limit = *options.max_records;
        summary.interrupted = true;
    }

    std::map<std::string, std::string> aborted_lines;
    std::mutex mu;
    std::ofstream out(options.out_path, std::ios::app | std::ios::binary);
    if (!out) throw DataError("cannot append to " + options.out_path);
    size_t finished = summary.resumed;

    parallel_for(limit, options.concurrency, [&](size_t i) {
        const Task& task = *pending[i];
        const Trajectory& tr = corpus.trajectories[task.traj];
        const Assignment& assignment = corpus.assignments.at(tr.assignment_id);
        const RolloutRecord rec = rollout_from(model, assignment, tr, task.start_t, grader, settings);
        const std::string line = dump_line(record_to_json(rec));
        std::lock_guard<std::mutex> lock(mu);
        if (rec.aborted) {
            aborted_lines[task.key] = line;
            ++summary.aborted;
        } else {
            out << line << '\n';
            out.flush();
            done_lines[task.key] = line;
            ++summary.completed;
        }
        ++finished;
        if (options.progress) options.progress(finished, summary.total);
    });
    out.close();

    write_file_atomic(options.out_path, join_lines(tasks, done_lines));
    const std::string side = aborted_path(options.out_path);
    if (!aborted_lines.empty())
        write_file_atomic(side, join_lines(tasks, aborted_lines));
    else if (std::filesystem::exists(side))
        std::filesystem::remove(side);

    if (limit > 0 && static_cast<double>(summary.aborted) > options.max_abort_fraction * static_cast<double>(limit))
        summary.failed = true;
    return summary;
}

std::vector<RolloutRecord> read_records(const std::string& path) {
    std::vector<RolloutRecord> out;
    int n = 0;
    for (const auto& line : split_lines(read_file(path))) {
        ++n;
        if (trim(line).empty()) continue;
        try {
            out.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace stusim
