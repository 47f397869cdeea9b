#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "stusim/corpus.hpp"
#include "stusim/grader.hpp"
#include "stusim/rollout.hpp"

namespace stusim::testing {

// ---- programs ---------------------------------------------------------------

/// A random CS1-style Python program: one or two functions built from
/// loops, conditionals, accumulators and list operations.
std::string cs1_program(std::mt19937_64& rng);

enum class MutantClass { Reformat, Rename, SemanticPreserving, Breaking, SyntaxCorrupt };

const char* mutant_class_name(MutantClass cls);

struct Mutant {
    std::string code;
    MutantClass cls;
    std::string note;  // which edits were applied
};

/// Mutants of `base`. Reformat keeps the syntax tree; rename and
/// semantic-preserving edits change the tree but not behaviour; breaking
/// edits change a constant or operator; syntax corruption never parses.
Mutant make_mutant(const std::string& base, MutantClass cls, std::mt19937_64& rng);

/// Identifiers bound by assignment, loop targets or parameters in `code`.
std::vector<std::string> bound_names(const std::string& code);

// ---- corpora ----------------------------------------------------------------

struct CorpusSpec {
    int n_traj = 20;
    int min_len = 2;
    int max_len = 8;
    int n_assignments = 3;
    bool finish_with_pass = true;  // last score 1.0, earlier scores below 1.0
    std::vector<double> levels{0.0, 0.125, 0.25, 0.5, 0.625, 0.75, 0.875};
    std::string semester = "F2023";
};

/// Every submission text is unique across the corpus, feedback reads
/// "Tests passed: p/8" (or the 1/n form for other levels).
Corpus synthetic_corpus(std::uint64_t seed, const CorpusSpec& spec);

/// Score sequence drawn from {0, 0.5, 1} so repeats are frequent.
Trajectory random_score_trajectory(std::mt19937_64& rng, const std::string& student, const std::string& assignment,
                                   int min_len, int max_len);

/// The compute_average trajectory: three submissions with feedback.
Assignment compute_average_assignment();
Trajectory compute_average_trajectory();

// ---- models -----------------------------------------------------------------

/// Returns the student's next submission given the codes already in the
/// context, looked up by (assignment turn, code sequence).
class ReplayChatModel : public ChatModel {
  public:
    explicit ReplayChatModel(const Corpus& corpus);
    std::vector<std::string> complete(const Dialogue& messages) override;

  private:
    std::map<std::string, std::string> next_;
};

/// Calls a function for every request.
class FunctionChatModel : public ChatModel {
  public:
    explicit FunctionChatModel(std::function<std::string(const Dialogue&)> fn) : fn_(std::move(fn)) {}
    std::vector<std::string> complete(const Dialogue& messages) override { return {fn_(messages)}; }

  private:
    std::function<std::string(const Dialogue&)> fn_;
};

/// Wraps a model, records every request and the peak number of requests
/// in flight.
class InstrumentedChatModel : public ChatModel {
  public:
    InstrumentedChatModel(ChatModel& inner, int delay_ms) : inner_(inner), delay_ms_(delay_ms) {}
    std::vector<std::string> complete(const Dialogue& messages) override;

    int peak_in_flight() const { return peak_.load(); }
    std::vector<Dialogue> requests() const;

  private:
    ChatModel& inner_;
    int delay_ms_;
    std::atomic<int> in_flight_{0};
    std::atomic<int> peak_{0};
    mutable std::mutex mu_;
    std::vector<Dialogue> requests_;
};

/// Key used by ReplayChatModel: assignment turn plus the codes of all
/// assistant turns.
std::string context_key(const Dialogue& messages);

// ---- HTTP endpoint ----------------------------------------------------------

struct MockResponse {
    int status = 200;
    std::string body;
};

/// Local chat-completions server on 127.0.0.1 with an ephemeral port.
class MockEndpoint {
  public:
    explicit MockEndpoint(std::function<MockResponse(const nlohmann::json& request)> handler);
    ~MockEndpoint();
    MockEndpoint(const MockEndpoint&) = delete;
    MockEndpoint& operator=(const MockEndpoint&) = delete;

    std::string base_url() const;
    int requests() const { return requests_.load(); }
    std::vector<nlohmann::json> bodies() const;
    std::vector<std::string> auth_headers() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::atomic<int> requests_{0};
};

/// Body of a successful response with one choice per content string.
std::string completion_body(const std::vector<std::string>& contents);

/// Scratch directory removed on destruction.
class TempDir {
  public:
    TempDir();
    ~TempDir();
    const std::string& path() const { return path_; }
    std::string file(const std::string& name) const { return path_ + "/" + name; }

  private:
    std::string path_;
};

/// True when `python3` can be executed.
bool python_available();

}  // namespace stusim::testing
