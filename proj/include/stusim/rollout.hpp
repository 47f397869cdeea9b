#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stusim/corpus.hpp"
#include "stusim/grader.hpp"
#include "stusim/serializer.hpp"

namespace stusim {

enum class Decoding { Greedy, TopP };

struct EndpointConfig {
    std::string base_url;     // e.g. http://127.0.0.1:8000/v1
    std::string model_name;
    std::string api_key_env;  // name of the environment variable holding the key; empty for none
    Decoding decoding = Decoding::Greedy;
    double top_p = 1.0;
    double temperature = 1.0;
    int n_samples = 1;
    int max_new_tokens = 1024;
    double timeout_s = 120.0;
    int max_retries = 3;
    double backoff_initial_s = 0.5;
    double backoff_max_s = 8.0;

    /// Throws ConfigError when the invariants do not hold.
    void validate() const;
};

EndpointConfig endpoint_from_json(const nlohmann::json& j);
nlohmann::json endpoint_to_json(const EndpointConfig& cfg);

/// One HTTP attempt, reported to the attempt hook.
struct AttemptRecord {
    std::string correlation_id;
    int attempt = 0;      // 1-based
    int http_status = 0;  // 0 when the transport failed
    std::string error;    // empty on success
    double elapsed_s = 0.0;
};

using AttemptHook = std::function<void(const AttemptRecord&)>;

class ChatModel {
  public:
    virtual ~ChatModel() = default;
    /// Returns the generations for one prompt. Throws EndpointUnavailable or
    /// ProtocolError.
    virtual std::vector<std::string> complete(const Dialogue& messages) = 0;
};

/// Chat-completions client: POST {base_url}/chat/completions with
/// {model, messages, temperature, top_p, n, max_tokens}. Transport errors,
/// HTTP 429 and 5xx are retried with exponential backoff.
class HttpChatModel : public ChatModel {
  public:
    explicit HttpChatModel(EndpointConfig cfg, AttemptHook hook = {});
    std::vector<std::string> complete(const Dialogue& messages) override;

    /// Request body sent for a prompt, exposed for inspection.
    nlohmann::json request_body(const Dialogue& messages) const;

  private:
    EndpointConfig cfg_;
    AttemptHook hook_;
    std::string scheme_host_;
    std::string path_;
};

/// Convenience wrapper over HttpChatModel.
std::vector<std::string> chat_complete(const EndpointConfig& cfg, const Dialogue& messages, AttemptHook hook = {});

enum class Termination { PerfectSolution, NoGroundTruth, Horizon };

const char* termination_name(Termination t);
std::optional<Termination> termination_from_name(const std::string& name);

/// perfect_solution when the score is 1.0, else no_ground_truth when there
/// is no next student submission, else horizon at k == horizon.
std::optional<Termination> should_terminate(const GradeOutcome& last, bool has_ground_truth_next, int k,
                                            int horizon = 5);

struct RolloutStep {
    int k = 0;
    std::string generated_code;
    GradeOutcome outcome;
    std::optional<std::string> ground_truth_code;
    std::optional<double> ground_truth_score;
    std::optional<Termination> termination;
};

struct RolloutRecord {
    std::string student_id;
    std::string assignment_id;
    int start_t = 0;
    int length = 0;  // T of the source trajectory
    std::vector<RolloutStep> steps;
    bool aborted = false;
    std::string abort_reason;

    /// Ground truth exists at step k iff start_t + k - 1 <= T.
    bool has_ground_truth(int k) const { return start_t + k - 1 <= length; }
};

nlohmann::json record_to_json(const RolloutRecord& record);
/// Throws DataError on malformed input.
RolloutRecord record_from_json(const nlohmann::json& j);

struct RolloutSettings {
    SerializeMode mode;
    std::size_t budget = 4096;
    TokenCounter counter = heuristic_token_count;
    int horizon = 5;
    bool regrade_ground_truth = false;
};

/// Rolls the model forward from `start_t` (2 <= start_t <= T). The context
/// holds the first start_t - 1 submissions, then every generated program
/// with the feedback the grader gave it. Endpoint or grader failures leave
/// the record marked aborted.
RolloutRecord rollout_from(ChatModel& model, const Assignment& assignment, const Trajectory& traj, int start_t,
                           const Grader& grader, const RolloutSettings& settings);

/// The context sent at the next step, given the steps generated so far.
Dialogue rollout_context(const Assignment& assignment, const Trajectory& traj, int start_t,
                         const std::vector<RolloutStep>& steps, const RolloutSettings& settings);

struct RunOptions {
    std::string out_path;
    bool resume = false;
    std::size_t concurrency = 1;
    double max_abort_fraction = 0.1;
    std::optional<std::size_t> max_records;  // stop after this many new records (simulated interruption)
    std::function<void(std::size_t done, std::size_t total)> progress;
};

struct RunSummary {
    std::size_t total = 0;      // (trajectory, start_t) keys in the corpus
    std::size_t resumed = 0;    // already complete in the existing output
    std::size_t completed = 0;  // completed in this run
    std::size_t aborted = 0;
    std::size_t dropped_lines = 0;  // malformed lines discarded from the existing output
    bool interrupted = false;
    bool failed = false;  // aborted fraction above the threshold
};

/// Path of the side file listing aborted records.
std::string aborted_path(const std::string& out_path);

/// One record per (trajectory, start_t in 2..T), written as JSONL to
/// out_path. Completed keys found in an existing file are skipped when
/// resuming; the file is finally rewritten in corpus order so interrupted
/// and uninterrupted runs produce the same bytes.
RunSummary run_eval(const Corpus& test_corpus, ChatModel& model, const Grader& grader, const RolloutSettings& settings,
                    const RunOptions& options);

std::vector<RolloutRecord> read_records(const std::string& path);

}  // namespace stusim
