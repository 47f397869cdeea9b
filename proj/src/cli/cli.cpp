#include "stusim/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <set>

#include "CLI11.hpp"
#include "stusim/analysis/codebleu.hpp"
#include "stusim/common.hpp"
#include "stusim/errors.hpp"
#include "stusim/losses.hpp"
#include "stusim/prefdata.hpp"

namespace stusim {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string resolve(const std::string& base, const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute() || base.empty()) return p;
    return (fs::path(base) / p).lexically_normal().string();
}

template <typename T>
T get_or(const json& section, const char* key, T fallback, const std::string& where) {
    if (!section.contains(key) || section.at(key).is_null()) return fallback;
    try {
        return section.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

void check_keys(const json& section, const std::set<std::string>& allowed, const std::string& where) {
    if (!section.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, _] : section.items())
        if (!allowed.count(key)) throw ConfigError("unknown config key " + where + "." + key);
}

json section_of(const json& j, const char* name) {
    if (!j.contains(name)) return json::object();
    return j.at(name);
}

}  // namespace

PipelineConfig config_from_json(const json& j, const std::string& base_dir) {
    check_keys(j,
               {"seed", "concurrency", "paths", "filter", "split", "serialize", "dpo", "grpo", "grader", "rollout",
                "metrics"},
               "config");
    PipelineConfig c;
    c.seed = get_or<std::uint64_t>(j, "seed", 0, "config");
    c.concurrency = get_or<std::size_t>(j, "concurrency", 1, "config");
    if (c.concurrency < 1) throw ConfigError("concurrency must be at least 1");

    const json paths = section_of(j, "paths");
    check_keys(paths,
               {"logs", "log_format", "columns", "assignments", "output_dir", "corpus", "train", "test", "rollouts",
                "metrics"},
               "paths");
    auto& p = c.paths;
    p.logs = resolve(base_dir, get_or<std::string>(paths, "logs", "", "paths"));
    const std::string fmt = get_or<std::string>(paths, "log_format", "jsonl", "paths");
    if (fmt == "jsonl")
        p.log_format = LogFormat::Jsonl;
    else if (fmt == "csv")
        p.log_format = LogFormat::Csv;
    else
        throw ConfigError("paths.log_format must be jsonl or csv, got '" + fmt + "'");
    if (paths.contains("columns"))
        for (const auto& [k, v] : paths.at("columns").items()) p.columns[k] = v.get<std::string>();
    p.assignments = resolve(base_dir, get_or<std::string>(paths, "assignments", "", "paths"));
    p.output_dir = resolve(base_dir, get_or<std::string>(paths, "output_dir", "out", "paths"));
    auto derived = [&](const char* key, const char* file) {
        const std::string v = get_or<std::string>(paths, key, "", "paths");
        return v.empty() ? (fs::path(p.output_dir) / file).string() : resolve(base_dir, v);
    };
    p.corpus = derived("corpus", "corpus.jsonl");
    p.train = derived("train", "train.jsonl");
    p.test = derived("test", "test.jsonl");
    p.rollouts = derived("rollouts", "rollouts.jsonl");
    p.metrics = derived("metrics", "metrics.json");

    const json filter = section_of(j, "filter");
    check_keys(filter, {"require_one_pass", "drop_noncompiling_submissions", "keep_runtime_errors"}, "filter");
    c.filter.require_one_pass = get_or<bool>(filter, "require_one_pass", true, "filter");
    c.filter.drop_noncompiling_submissions = get_or<bool>(filter, "drop_noncompiling_submissions", true, "filter");
    c.filter.keep_runtime_errors = get_or<bool>(filter, "keep_runtime_errors", true, "filter");

    const json split = section_of(j, "split");
    check_keys(split, {"policy", "test_sample"}, "split");
    if (split.contains("policy"))
        for (const auto& [k, v] : split.at("policy").items()) {
            const std::string target = v.get<std::string>();
            if (target != "train" && target != "test" && target != "exclude")
                throw ConfigError("split.policy." + k + " must be train, test or exclude");
            c.split_policy[k] = target;
        }
    if (split.contains("test_sample")) {
        const json& s = split.at("test_sample");
        SampleSpec spec;
        spec.count = get_or<int>(s, "count", 0, "split.test_sample");
        spec.seed = get_or<std::uint64_t>(s, "seed", c.seed, "split.test_sample");
        if (spec.count < 1) throw ConfigError("split.test_sample.count must be positive");
        c.test_sample = spec;
    }

    const json ser = section_of(j, "serialize");
    check_keys(ser, {"feedback", "system_prompt", "budget"}, "serialize");
    c.serialize.feedback = feedback_mode_from_name(get_or<std::string>(ser, "feedback", "with_feedback", "serialize"));
    c.serialize.system_prompt = get_or<std::string>(ser, "system_prompt", kDefaultSystemPrompt, "serialize");
    c.budget = get_or<std::size_t>(ser, "budget", 4096, "serialize");
    if (c.budget < 1) throw ConfigError("serialize.budget must be positive");

    const json dpo = section_of(j, "dpo");
    check_keys(dpo, {"beta"}, "dpo");
    c.dpo_beta = get_or<double>(dpo, "beta", 0.5, "dpo");
    if (!(c.dpo_beta > 0)) throw ConfigError("dpo.beta must be positive");

    const json grpo = section_of(j, "grpo");
    check_keys(grpo, {"G", "prefixes_per_traj", "seed"}, "grpo");
    c.grpo_group = get_or<int>(grpo, "G", 4, "grpo");
    c.grpo_prefixes = get_or<int>(grpo, "prefixes_per_traj", 2, "grpo");
    c.grpo_seed = get_or<std::uint64_t>(grpo, "seed", c.seed, "grpo");
    if (c.grpo_group < 2) throw ConfigError("grpo.G must be at least 2");
    if (c.grpo_prefixes < 1) throw ConfigError("grpo.prefixes_per_traj must be positive");

    const json grader = section_of(j, "grader");
    check_keys(grader, {"backend", "interpreter", "runner", "suites", "wall_time_s", "memory_mb", "stdout_cap_bytes"},
               "grader");
    c.grader.backend = get_or<std::string>(grader, "backend", "replay", "grader");
    if (c.grader.backend != "replay" && c.grader.backend != "subprocess")
        throw ConfigError("grader.backend must be replay or subprocess");
    c.grader.interpreter = get_or<std::string>(grader, "interpreter", "python3", "grader");
    c.grader.runner = resolve(base_dir, get_or<std::string>(grader, "runner", "", "grader"));
    c.grader.suites = resolve(base_dir, get_or<std::string>(grader, "suites", "", "grader"));
    c.grader.limits.wall_time_s = get_or<double>(grader, "wall_time_s", 10.0, "grader");
    c.grader.limits.memory_mb = get_or<int>(grader, "memory_mb", 512, "grader");
    c.grader.limits.stdout_cap_bytes = get_or<int>(grader, "stdout_cap_bytes", 1 << 20, "grader");
    if (c.grader.backend == "subprocess" && (c.grader.runner.empty() || c.grader.suites.empty()))
        throw ConfigError("the subprocess grader needs grader.runner and grader.suites");

    const json roll = section_of(j, "rollout");
    check_keys(roll, {"endpoint", "horizon", "max_abort_fraction", "regrade_ground_truth"}, "rollout");
    if (roll.contains("endpoint")) c.endpoint = endpoint_from_json(roll.at("endpoint"));
    c.horizon = get_or<int>(roll, "horizon", 5, "rollout");
    if (c.horizon < 1) throw ConfigError("rollout.horizon must be positive");
    c.max_abort_fraction = get_or<double>(roll, "max_abort_fraction", 0.1, "rollout");
    c.regrade_ground_truth = get_or<bool>(roll, "regrade_ground_truth", false, "rollout");

    const json metrics = section_of(j, "metrics");
    check_keys(metrics, {"bins", "weights", "averaging", "formats"}, "metrics");
    c.bins = get_or<int>(metrics, "bins", 20, "metrics");
    if (c.bins < 1) throw ConfigError("metrics.bins must be positive");
    if (metrics.contains("weights")) {
        const auto w = get_or<std::vector<double>>(metrics, "weights", {}, "metrics");
        if (w.size() != 4) throw ConfigError("metrics.weights needs four values");
        double sum = 0.0;
        for (size_t i = 0; i < 4; ++i) {
            if (w[i] < 0) throw ConfigError("metrics.weights must be non-negative");
            c.weights[i] = w[i];
            sum += w[i];
        }
        if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("metrics.weights must sum to 1");
    }
    const std::string avg = get_or<std::string>(metrics, "averaging", "micro", "metrics");
    if (avg != "micro" && avg != "macro") throw ConfigError("metrics.averaging must be micro or macro");
    c.averaging = avg == "micro" ? Averaging::Micro : Averaging::Macro;
    if (metrics.contains("formats")) {
        c.report_formats = get_or<std::vector<std::string>>(metrics, "formats", {}, "metrics");
        for (const auto& f : c.report_formats) report_format_from_name(f);
    }
    return c;
}

PipelineConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return config_from_json(j, fs::path(path).parent_path().string());
}

json config_to_json(const PipelineConfig& c) {
    json policy = json::object();
    for (const auto& [k, v] : c.split_policy) policy[k] = v;
    json split = {{"policy", policy}};
    if (c.test_sample) split["test_sample"] = {{"count", c.test_sample->count}, {"seed", c.test_sample->seed}};
    return {{"seed", c.seed},
            {"concurrency", c.concurrency},
            {"paths",
             {{"logs", c.paths.logs},
              {"log_format", c.paths.log_format == LogFormat::Jsonl ? "jsonl" : "csv"},
              {"columns", c.paths.columns},
              {"assignments", c.paths.assignments},
              {"output_dir", c.paths.output_dir},
              {"corpus", c.paths.corpus},
              {"train", c.paths.train},
              {"test", c.paths.test},
              {"rollouts", c.paths.rollouts},
              {"metrics", c.paths.metrics}}},
            {"filter",
             {{"require_one_pass", c.filter.require_one_pass},
              {"drop_noncompiling_submissions", c.filter.drop_noncompiling_submissions},
              {"keep_runtime_errors", c.filter.keep_runtime_errors}}},
            {"split", split},
            {"serialize",
             {{"feedback", feedback_mode_name(c.serialize.feedback)},
              {"system_prompt", c.serialize.system_prompt},
              {"budget", c.budget}}},
            {"dpo", {{"beta", c.dpo_beta}}},
            {"grpo", {{"G", c.grpo_group}, {"prefixes_per_traj", c.grpo_prefixes}, {"seed", c.grpo_seed}}},
            {"grader",
             {{"backend", c.grader.backend},
              {"interpreter", c.grader.interpreter},
              {"runner", c.grader.runner},
              {"suites", c.grader.suites},
              {"wall_time_s", c.grader.limits.wall_time_s},
              {"memory_mb", c.grader.limits.memory_mb},
              {"stdout_cap_bytes", c.grader.limits.stdout_cap_bytes}}},
            {"rollout",
             {{"endpoint", endpoint_to_json(c.endpoint)},
              {"horizon", c.horizon},
              {"max_abort_fraction", c.max_abort_fraction},
              {"regrade_ground_truth", c.regrade_ground_truth}}},
            {"metrics",
             {{"bins", c.bins},
              {"weights", c.weights},
              {"averaging", c.averaging == Averaging::Micro ? "micro" : "macro"},
              {"formats", c.report_formats}}}};
}

namespace {

struct Flags {
    std::string config;
    std::optional<std::size_t> concurrency;
    std::optional<std::uint64_t> seed;
    bool resume = false;
    bool json = false;
    std::optional<std::size_t> max_records;
    // extra subcommands
    std::string candidate, reference, audit_input;
    std::optional<double> beta;
};

class Context {
  public:
    Context(PipelineConfig cfg, const Flags& flags) : cfg_(std::move(cfg)), flags_(flags) {}

    const PipelineConfig& cfg() const { return cfg_; }
    const Flags& flags() const { return flags_; }

    void progress(const std::string& stage, std::size_t done, std::size_t total) const {
        if (flags_.json)
            std::cerr << dump_line({{"event", "progress"}, {"stage", stage}, {"done", done}, {"total", total}}) << "\n";
    }
    void warn(const std::string& msg) const {
        if (flags_.json)
            std::cerr << dump_line({{"event", "warning"}, {"message", msg}}) << "\n";
        else
            std::cerr << "warning: " << msg << "\n";
    }
    void done(const std::string& stage, const json& summary) const {
        if (flags_.json)
            std::cout << dump_line({{"event", "done"}, {"stage", stage}, {"summary", summary}}) << "\n";
        else
            std::cout << stage << ": " << summary.dump() << "\n";
    }

    void write_effective_config() const {
        fs::create_directories(cfg_.paths.output_dir);
        write_file_atomic((fs::path(cfg_.paths.output_dir) / "effective_config.json").string(),
                          config_to_json(cfg_).dump(2) + "\n");
    }

    std::map<std::string, Assignment> assignments() const {
        if (cfg_.paths.assignments.empty()) throw ConfigError("paths.assignments is not set");
        return read_assignments(cfg_.paths.assignments);
    }

    Corpus load_split(const std::string& path, SplitLabel label) const {
        return make_corpus(assignments(), read_trajectories(path), label);
    }

    /// Train split, falling back to the unsplit corpus.
    Corpus training_corpus() const {
        if (fs::exists(cfg_.paths.train)) return load_split(cfg_.paths.train, SplitLabel::Train);
        if (fs::exists(cfg_.paths.corpus)) {
            warn("no train split at " + cfg_.paths.train + "; using " + cfg_.paths.corpus);
            return load_split(cfg_.paths.corpus, SplitLabel::Unsplit);
        }
        throw DataError("no train split at " + cfg_.paths.train + "; run ingest first");
    }

    Corpus test_corpus() const {
        if (!fs::exists(cfg_.paths.test)) throw DataError("no test split at " + cfg_.paths.test + "; run ingest first");
        return load_split(cfg_.paths.test, SplitLabel::Test);
    }

    Grader& grader() {
        if (!grader_) {
            if (cfg_.grader.backend == "subprocess") {
                backend_ = std::make_unique<SubprocessBackend>(cfg_.grader.interpreter, cfg_.grader.runner,
                                                               read_suites(cfg_.grader.suites), cfg_.concurrency);
            } else {
                std::vector<Trajectory> all;
                for (const auto& path : {cfg_.paths.corpus, cfg_.paths.train, cfg_.paths.test})
                    if (fs::exists(path))
                        for (auto& t : read_trajectories(path)) all.push_back(std::move(t));
                backend_ = std::make_unique<ReplayBackend>(make_corpus(assignments(), std::move(all)));
            }
            grader_ = std::make_unique<Grader>(*backend_, cfg_.grader.limits);
        }
        return *grader_;
    }

    std::string out_file(const std::string& name) const { return (fs::path(cfg_.paths.output_dir) / name).string(); }

  private:
    PipelineConfig cfg_;
    Flags flags_;
    std::unique_ptr<ExecutionBackend> backend_;
    std::unique_ptr<Grader> grader_;
};

void write_jsonl(const std::string& path, const std::vector<json>& rows) {
    std::string text;
    for (const auto& r : rows) text += dump_line(r) + "\n";
    write_file_atomic(path, text);
}

int cmd_ingest(Context& ctx) {
    const auto& cfg = ctx.cfg();
    if (cfg.paths.logs.empty()) throw ConfigError("paths.logs is not set");
    const IngestResult ingested = ingest_logs(cfg.paths.logs, cfg.paths.log_format, cfg.paths.columns);
    for (const auto& e : ingested.errors) ctx.warn("row " + std::to_string(e.row) + ": " + e.message);
    const Corpus raw = make_corpus(ctx.assignments(), ingested.trajectories);
    FilterSummary fs_summary;
    const Corpus filtered = filter_corpus(raw, cfg.filter, is_compiling, &fs_summary);
    write_trajectories(cfg.paths.corpus, filtered.trajectories);
    json summary = {{"rows_rejected", ingested.errors.size()},
                    {"trajectories_read", raw.trajectories.size()},
                    {"kept", fs_summary.kept},
                    {"rejected_empty", fs_summary.rejected_empty},
                    {"rejected_no_pass", fs_summary.rejected_no_pass},
                    {"dropped_submissions", fs_summary.dropped_submissions}};
    if (!cfg.split_policy.empty()) {
        const SplitResult split = split_corpus(filtered, cfg.split_policy, cfg.test_sample);
        write_trajectories(cfg.paths.train, split.train.trajectories);
        write_trajectories(cfg.paths.test, split.test.trajectories);
        summary["n_train"] = split.summary.n_train;
        summary["n_test"] = split.summary.n_test;
        summary["n_excluded"] = split.summary.n_excluded;
        summary["n_test_unsampled"] = split.summary.n_test_unsampled;
        summary["student_overlap"] = split.summary.student_overlap;
        if (split.summary.student_overlap > 0)
            ctx.warn(std::to_string(split.summary.student_overlap) + " students appear in both splits");
    }
    ctx.done("ingest", summary);
    return 0;
}

int cmd_stats(Context& ctx) {
    const auto& cfg = ctx.cfg();
    std::string text = stats_header() + "\n";
    bool any = false;
    const std::pair<const char*, std::string> splits[] = {{"Train", cfg.paths.train}, {"Test", cfg.paths.test}};
    for (const auto& [label, path] : splits) {
        if (!fs::exists(path)) continue;
        text += stats_row(label, corpus_stats(ctx.load_split(path, SplitLabel::Unsplit))) + "\n";
        any = true;
    }
    if (!any) {
        if (!fs::exists(cfg.paths.corpus)) throw DataError("no corpus found; run ingest first");
        text += stats_row("All", corpus_stats(ctx.load_split(cfg.paths.corpus, SplitLabel::Unsplit))) + "\n";
    }
    write_file_atomic(ctx.out_file("stats.md"), text);
    std::cout << text;
    return 0;
}

int cmd_serialize(Context& ctx) {
    const auto& cfg = ctx.cfg();
    const Corpus corpus = ctx.training_corpus();
    std::vector<json> rows;
    int skipped = 0;
    for (const auto& tr : corpus.trajectories) {
        const Dialogue full = serialize_trajectory(corpus.assignments.at(tr.assignment_id), tr, cfg.serialize);
        try {
            const Dialogue cut = truncate_dialogue(full, cfg.budget, heuristic_token_count);
            rows.push_back({{"messages", messages_to_json(cut)},
                            {"meta",
                             {{"student_id", tr.student_id},
                              {"assignment_id", tr.assignment_id},
                              {"T", tr.length()},
                              {"dropped_messages", full.messages.size() - cut.messages.size()}}}});
        } catch (const CannotFit& e) {
            ++skipped;
            ctx.warn(tr.student_id + "/" + tr.assignment_id + ": " + e.what());
        }
    }
    write_jsonl(ctx.out_file("sft.jsonl"), rows);
    ctx.done("serialize", {{"dialogues", rows.size()}, {"skipped_budget", skipped}});
    return 0;
}

int cmd_prefs(Context& ctx) {
    const auto& cfg = ctx.cfg();
    DpoSummary s;
    const auto pairs = build_dpo_dataset(ctx.training_corpus(), cfg.serialize, cfg.budget, heuristic_token_count, &s);
    std::vector<json> rows;
    for (const auto& p : pairs) rows.push_back(pair_to_json(p));
    write_jsonl(ctx.out_file("dpo.jsonl"), rows);
    ctx.done("prefs",
             {{"positions", s.positions}, {"pairs", s.pairs}, {"no_k_star", s.no_k_star}, {"skipped_budget", s.skipped_budget}});
    return 0;
}

int cmd_grpo(Context& ctx) {
    const auto& cfg = ctx.cfg();
    const Corpus corpus = ctx.training_corpus();
    std::vector<std::pair<const Trajectory*, GrpoPrefix>> prefixes;
    for (const auto& tr : corpus.trajectories) {
        const auto seed = mix_seed(cfg.grpo_seed, tr.student_id + '\x1f' + tr.assignment_id);
        for (auto& p : sample_grpo_prefixes(corpus.assignments.at(tr.assignment_id), tr, cfg.grpo_prefixes, seed,
                                            cfg.serialize, cfg.budget))
            prefixes.emplace_back(&tr, std::move(p));
    }

    const bool generate = !cfg.endpoint.base_url.empty();
    std::vector<json> rows(prefixes.size());
    if (!generate) {
        for (size_t i = 0; i < prefixes.size(); ++i) rows[i] = grpo_sample_to_json(prefixes[i].second, {});
        write_jsonl(ctx.out_file("grpo.jsonl"), rows);
        ctx.done("grpo-data", {{"prompts", rows.size()}, {"candidates", 0}});
        return 0;
    }

    EndpointConfig ep = cfg.endpoint;
    ep.decoding = Decoding::TopP;
    ep.n_samples = cfg.grpo_group;
    HttpChatModel model(ep);
    Grader& grader = ctx.grader();
    std::mutex mu;
    std::size_t finished = 0, failed = 0;
    parallel_for(prefixes.size(), cfg.concurrency, [&](size_t i) {
        const GrpoPrefix& p = prefixes[i].second;
        const Assignment& assignment = corpus.assignments.at(p.assignment_id);
        std::vector<GrpoCandidate> cands;
        try {
            for (const auto& gen : model.complete(p.prompt)) {
                GrpoCandidate c;
                try {
                    c.code = extract_code(gen);
                    c.reward = tiered_reward(c.code, p.ground_truth_next, p.ground_truth_score, grader, assignment);
                } catch (const EmptyGeneration&) {
                    c.reward = reward_tier(RewardReason::Noncompiling);
                }
                cands.push_back(std::move(c));
            }
            std::vector<double> rewards;
            for (const auto& c : cands) rewards.push_back(c.reward.value);
            const auto adv = group_advantage(rewards);
            for (size_t k = 0; k < cands.size(); ++k) cands[k].advantage = adv[k];
        } catch (const std::runtime_error& e) {
            if (!dynamic_cast<const EndpointUnavailable*>(&e) && !dynamic_cast<const ProtocolError*>(&e) &&
                !dynamic_cast<const GraderUnavailable*>(&e))
                throw;
            std::lock_guard<std::mutex> lock(mu);
            ++failed;
            ctx.warn("prefix " + p.student_id + "/" + p.assignment_id + "@" + std::to_string(p.t) + ": " + e.what());
            cands.clear();
        }
        std::lock_guard<std::mutex> lock(mu);
        rows[i] = grpo_sample_to_json(p, cands);
        ctx.progress("grpo-data", ++finished, prefixes.size());
    });
    write_jsonl(ctx.out_file("grpo.jsonl"), rows);
    ctx.done("grpo-data", {{"prompts", rows.size()}, {"failed", failed}});
    return 0;
}

int cmd_rollout(Context& ctx) {
    const auto& cfg = ctx.cfg();
    if (cfg.endpoint.base_url.empty()) throw ConfigError("rollout.endpoint.base_url is not set");
    EndpointConfig ep = cfg.endpoint;
    ep.decoding = Decoding::Greedy;
    ep.n_samples = 1;

    std::mutex log_mu;
    std::ofstream log(ctx.out_file("requests.log.jsonl"), std::ios::app);
    HttpChatModel model(ep, [&](const AttemptRecord& a) {
        std::lock_guard<std::mutex> lock(log_mu);
        log << dump_line({{"correlation_id", a.correlation_id},
                          {"attempt", a.attempt},
                          {"http_status", a.http_status},
                          {"error", a.error},
                          {"elapsed_s", a.elapsed_s}})
            << "\n";
        log.flush();
    });

    const Corpus test = ctx.test_corpus();
    RolloutSettings settings;
    settings.mode = cfg.serialize;
    settings.budget = cfg.budget;
    settings.horizon = cfg.horizon;
    settings.regrade_ground_truth = cfg.regrade_ground_truth;
    RunOptions opts;
    opts.out_path = cfg.paths.rollouts;
    opts.resume = ctx.flags().resume;
    opts.concurrency = cfg.concurrency;
    opts.max_abort_fraction = cfg.max_abort_fraction;
    opts.max_records = ctx.flags().max_records;
    opts.progress = [&](std::size_t done, std::size_t total) { ctx.progress("rollout", done, total); };
    const RunSummary s = run_eval(test, model, ctx.grader(), settings, opts);
    ctx.done("rollout", {{"total", s.total},
                         {"resumed", s.resumed},
                         {"completed", s.completed},
                         {"aborted", s.aborted},
                         {"dropped_lines", s.dropped_lines},
                         {"interrupted", s.interrupted},
                         {"failed", s.failed}});
    if (s.failed) {
        std::cerr << "error: aborted records exceed max_abort_fraction " << cfg.max_abort_fraction << "\n";
        return 1;
    }
    return 0;
}

int cmd_score(Context& ctx) {
    const auto& cfg = ctx.cfg();
    const auto records = read_records(cfg.paths.rollouts);
    AggregateOptions opts;
    opts.K = cfg.horizon;
    opts.averaging = cfg.averaging;
    opts.codebleu_weights = cfg.weights;
    opts.workers = cfg.concurrency;
    const MetricsReport report = aggregate(records, opts);
    std::vector<ProgressionCurve> curves;
    if (fs::exists(cfg.paths.test))
        curves.push_back(grade_progression(progression_points(ctx.test_corpus()), cfg.bins, "students"));
    curves.push_back(grade_progression(progression_points(records), cfg.bins, "model"));
    emit_report(cfg.paths.metrics, report, curves, ReportFormat::Json);
    ctx.done("score", {{"records", report.n_records},
                       {"aborted", report.n_aborted},
                       {"coverage", report.avg_coverage ? json(*report.avg_coverage) : json(nullptr)},
                       {"grade_proximity",
                        report.avg_grade_proximity ? json(*report.avg_grade_proximity) : json(nullptr)},
                       {"codebleu", report.avg_codebleu ? json(*report.avg_codebleu) : json(nullptr)}});
    return 0;
}

int cmd_report(Context& ctx) {
    const auto& cfg = ctx.cfg();
    json doc;
    try {
        doc = json::parse(read_file(cfg.paths.metrics));
    } catch (const json::exception& e) {
        throw DataError(cfg.paths.metrics + ": " + e.what());
    }
    const auto [report, curves] = metrics_from_json(doc);
    std::vector<std::string> written;
    for (const auto& name : cfg.report_formats) {
        const ReportFormat f = report_format_from_name(name);
        const std::string ext = f == ReportFormat::Json ? "json" : f == ReportFormat::Csv ? "csv" : "md";
        const std::string path = ctx.out_file("report." + ext);
        emit_report(path, report, curves, f);
        written.push_back(path);
        if (f == ReportFormat::Csv) {
            write_file_atomic(ctx.out_file("curves.csv"), curves_to_csv(curves));
            written.push_back(ctx.out_file("curves.csv"));
        }
        if (f == ReportFormat::Markdown && !ctx.flags().json) std::cout << report_to_markdown({{"model", report}});
    }
    if (ctx.flags().json) ctx.done("report", {{"files", written}});
    return 0;
}

int cmd_codebleu(const Flags& flags, const std::array<double, 4>& weights) {
    const auto b = analysis::codebleu(read_file(flags.candidate), read_file(flags.reference), weights);
    std::cout << json{{"ngram", b.ngram},
                      {"weighted_ngram", b.weighted_ngram},
                      {"ast_match", b.ast_match},
                      {"dataflow_match", b.dataflow_match},
                      {"total", b.total},
                      {"candidate_parsed", b.candidate_parsed},
                      {"reference_parsed", b.reference_parsed}}
                     .dump(2)
              << "\n";
    return 0;
}

int cmd_dpo_loss(const Flags& flags, double beta) {
    DpoConfig cfg;
    cfg.beta = beta;
    int n = 0;
    for (const auto& line : split_lines(read_file(flags.audit_input))) {
        ++n;
        if (trim(line).empty()) continue;
        json row;
        try {
            row = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(flags.audit_input + ":" + std::to_string(n) + ": " + e.what());
        }
        std::cout << dump_line(audit_row_to_json(dpo_audit_row(row, cfg))) << "\n";
    }
    return 0;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"stusim: student programming-trajectory toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    Flags flags;
    app.add_option("--config", flags.config, "JSON pipeline config");
    app.add_option("--concurrency", flags.concurrency, "Bound on concurrent grader and model calls");
    app.add_option("--seed", flags.seed, "Seed for every random draw");
    app.add_flag("--resume", flags.resume, "Skip records already present in the rollout output");
    app.add_flag("--json", flags.json, "Machine-readable progress lines on stderr");
    app.add_option("--max-records", flags.max_records, "Stop rollout after this many new records");

    struct Sub {
        const char* name;
        const char* help;
        int (*fn)(Context&);
    };
    const Sub pipeline[] = {
        {"ingest", "Read logs, filter trajectories and split by semester", cmd_ingest},
        {"stats", "Print corpus statistics per split", cmd_stats},
        {"serialize", "Write conversational SFT dialogues", cmd_serialize},
        {"prefs", "Write DPO preference pairs", cmd_prefs},
        {"grpo-data", "Write GRPO prompts, with rewarded candidates when an endpoint is set", cmd_grpo},
        {"rollout", "Roll the model forward from every test position", cmd_rollout},
        {"score", "Aggregate rollout records into metrics", cmd_score},
        {"report", "Render the metrics report", cmd_report},
    };
    std::vector<std::pair<CLI::App*, int (*)(Context&)>> subs;
    for (const auto& s : pipeline) subs.emplace_back(app.add_subcommand(s.name, s.help), s.fn);

    auto* cb = app.add_subcommand("codebleu", "Score one program against a reference");
    cb->add_option("candidate", flags.candidate, "Candidate program file")->required();
    cb->add_option("reference", flags.reference, "Reference program file")->required();
    auto* dl = app.add_subcommand("dpo-loss", "Recompute DPO losses from log-probability rows");
    dl->add_option("input", flags.audit_input, "JSONL rows with chosen/rejected policy and reference log-probs")
        ->required();
    dl->add_option("--beta", flags.beta, "DPO beta (overrides the config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e);
            return 0;
        }
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        std::optional<PipelineConfig> cfg;
        if (!flags.config.empty()) cfg = load_config(flags.config);
        if (cfg) {
            if (flags.concurrency) {
                if (*flags.concurrency < 1) throw ConfigError("--concurrency must be at least 1");
                cfg->concurrency = *flags.concurrency;
            }
            if (flags.seed) {
                cfg->seed = *flags.seed;
                cfg->grpo_seed = *flags.seed;
                if (cfg->test_sample) cfg->test_sample->seed = *flags.seed;
            }
        }

        if (cb->parsed()) return cmd_codebleu(flags, cfg ? cfg->weights : std::array<double, 4>{0.25, 0.25, 0.25, 0.25});
        if (dl->parsed()) return cmd_dpo_loss(flags, flags.beta ? *flags.beta : cfg ? cfg->dpo_beta : 0.5);

        if (!cfg) throw ConfigError("--config is required");
        Context ctx(*cfg, flags);
        ctx.write_effective_config();
        for (const auto& [sub, fn] : subs)
            if (sub->parsed()) return fn(ctx);
        throw ConfigError("no subcommand given");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run(const std::vector<std::string>& args) {
    std::vector<std::string> copy = args;
    std::vector<char*> argv;
    for (auto& a : copy) argv.push_back(a.data());
    argv.push_back(nullptr);
    return run(static_cast<int>(copy.size()), argv.data());
}

}  // namespace stusim
