#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stusim/corpus.hpp"
#include "stusim/grader.hpp"
#include "stusim/serializer.hpp"

namespace stusim {

/// Smallest k in [2, T-t] with score(a_{t+k}) != score(a_{t+1}), or nullopt.
/// `t` is 1-based; throws DataError unless 1 <= t <= T-1.
std::optional<int> k_star(const Trajectory& traj, int t);

struct PreferencePair {
    Dialogue prompt;  // serialization of the first t submissions, truncated
    std::string chosen;
    std::string rejected;
    std::string student_id;
    std::string assignment_id;
    int t = 0;
    int k_star = 0;
    double chosen_score = 0.0;
    double rejected_score = 0.0;
};

struct DpoSummary {
    int positions = 0;       // (trajectory, t) pairs examined
    int pairs = 0;
    int no_k_star = 0;       // positions without a differently graded later submission
    int skipped_budget = 0;  // prompts that could not fit the token budget
};

/// One pair per trajectory and position with a defined k*, in trajectory
/// order then ascending t.
std::vector<PreferencePair> build_dpo_dataset(const Corpus& corpus, const SerializeMode& mode, std::size_t budget,
                                              const TokenCounter& counter = heuristic_token_count,
                                              DpoSummary* summary = nullptr);

nlohmann::json pair_to_json(const PreferencePair& pair);

/// `n` distinct positions drawn uniformly without replacement from 1..T-1,
/// sorted ascending; all positions when T-1 <= n.
std::vector<int> sample_positions(int length, int n, std::uint64_t seed);

struct GrpoPrefix {
    Dialogue prompt;
    std::string ground_truth_next;
    double ground_truth_score = 0.0;
    int t = 0;
    std::string student_id;
    std::string assignment_id;
};

/// Prefixes at sampled positions. Positions whose prompt cannot fit the
/// budget are skipped.
std::vector<GrpoPrefix> sample_grpo_prefixes(const Assignment& assignment, const Trajectory& traj, int n,
                                             std::uint64_t seed, const SerializeMode& mode, std::size_t budget,
                                             const TokenCounter& counter = heuristic_token_count);

enum class RewardReason { AstMatch, GradeMatch, Neutral, Noncompiling };

const char* reward_reason_name(RewardReason reason);

struct RewardTier {
    double value = 0.0;
    RewardReason reason = RewardReason::Neutral;
};

RewardTier reward_tier(RewardReason reason);

/// -1 for a candidate that does not parse, +2 for an AST match with the
/// ground truth, +1 when its grade equals the ground-truth score, else 0.
/// Grader failures propagate as GraderUnavailable.
RewardTier tiered_reward(const std::string& candidate, const std::string& ground_truth_next, double ground_truth_score,
                         const Grader& grader, const Assignment& assignment);

/// (r_j - mean) / std with population std; all zeros when std < 1e-8.
/// Throws DataError for fewer than two rewards.
std::vector<double> group_advantage(const std::vector<double>& rewards);

struct GrpoCandidate {
    std::string code;
    RewardTier reward;
    double advantage = 0.0;
};

nlohmann::json grpo_sample_to_json(const GrpoPrefix& prefix, const std::vector<GrpoCandidate>& candidates);

}  // namespace stusim
