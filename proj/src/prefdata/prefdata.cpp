#include "stusim/prefdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stusim/analysis/ast.hpp"
#include "stusim/common.hpp"
#include "stusim/errors.hpp"

namespace stusim {

using nlohmann::json;

std::optional<int> k_star(const Trajectory& traj, int t) {
    const int T = traj.length();
    if (t < 1 || t > T - 1)
        throw DataError("k_star: position " + std::to_string(t) + " outside [1, " + std::to_string(T - 1) + "]");
    // entries are 0-based: a_{t+k} is entries[t+k-1]
    const double next = traj.entries[static_cast<size_t>(t)].logged_score;
    for (int k = 2; k <= T - t; ++k)
        if (traj.entries[static_cast<size_t>(t + k - 1)].logged_score != next) return k;
    return std::nullopt;
}

std::vector<PreferencePair> build_dpo_dataset(const Corpus& corpus, const SerializeMode& mode, std::size_t budget,
                                              const TokenCounter& counter, DpoSummary* summary) {
    std::vector<PreferencePair> out;
    DpoSummary s;
    for (const auto& traj : corpus.trajectories) {
        const Assignment& assignment = corpus.assignments.at(traj.assignment_id);
        for (int t = 1; t <= traj.length() - 1; ++t) {
            ++s.positions;
            const auto k = k_star(traj, t);
            if (!k) {
                ++s.no_k_star;
                continue;
            }
            PreferencePair p;
            try {
                p.prompt = truncate_dialogue(serialize_prefix(assignment, traj, t, mode), budget, counter);
            } catch (const CannotFit&) {
                ++s.skipped_budget;
                continue;
            }
            const Submission& chosen = traj.entries[static_cast<size_t>(t)];
            const Submission& rejected = traj.entries[static_cast<size_t>(t + *k - 1)];
            p.chosen = chosen.code;
            p.rejected = rejected.code;
            p.chosen_score = chosen.logged_score;
            p.rejected_score = rejected.logged_score;
            p.student_id = traj.student_id;
            p.assignment_id = traj.assignment_id;
            p.t = t;
            p.k_star = *k;
            out.push_back(std::move(p));
            ++s.pairs;
        }
    }
    if (summary) *summary = s;
    return out;
}

json pair_to_json(const PreferencePair& p) {
    return {{"prompt", messages_to_json(p.prompt)},
            {"chosen", p.chosen},
            {"rejected", p.rejected},
            {"meta",
             {{"student_id", p.student_id},
              {"assignment_id", p.assignment_id},
              {"t", p.t},
              {"k_star", p.k_star},
              {"chosen_score", p.chosen_score},
              {"rejected_score", p.rejected_score}}}};
}

std::vector<int> sample_positions(int length, int n, std::uint64_t seed) {
    std::vector<int> positions;
    for (int t = 1; t <= length - 1; ++t) positions.push_back(t);
    if (n < 0) n = 0;
    if (static_cast<int>(positions.size()) <= n) return positions;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < n; ++i) {
        const size_t j = static_cast<size_t>(i) + uniform_index(rng, positions.size() - static_cast<size_t>(i));
        std::swap(positions[static_cast<size_t>(i)], positions[j]);
    }
    positions.resize(static_cast<size_t>(n));
    std::sort(positions.begin(), positions.end());
    return positions;
}

std::vector<GrpoPrefix> sample_grpo_prefixes(const Assignment& assignment, const Trajectory& traj, int n,
                                             std::uint64_t seed, const SerializeMode& mode, std::size_t budget,
                                             const TokenCounter& counter) {
    std::vector<GrpoPrefix> out;
    for (int t : sample_positions(traj.length(), n, seed)) {
        GrpoPrefix p;
        try {
            p.prompt = truncate_dialogue(serialize_prefix(assignment, traj, t, mode), budget, counter);
        } catch (const CannotFit&) {
            continue;
        }
        const Submission& next = traj.entries[static_cast<size_t>(t)];
        p.ground_truth_next = next.code;
        p.ground_truth_score = next.logged_score;
        p.t = t;
        p.student_id = traj.student_id;
        p.assignment_id = traj.assignment_id;
        out.push_back(std::move(p));
    }
    return out;
}

const char* reward_reason_name(RewardReason reason) {
    switch (reason) {
        case RewardReason::AstMatch: return "ast_match";
        case RewardReason::GradeMatch: return "grade_match";
        case RewardReason::Neutral: return "neutral";
        case RewardReason::Noncompiling: return "noncompiling";
    }
    return "neutral";
}

RewardTier reward_tier(RewardReason reason) {
    switch (reason) {
        case RewardReason::AstMatch: return {2.0, reason};
        case RewardReason::GradeMatch: return {1.0, reason};
        case RewardReason::Neutral: return {0.0, reason};
        case RewardReason::Noncompiling: return {-1.0, reason};
    }
    return {0.0, RewardReason::Neutral};
}

RewardTier tiered_reward(const std::string& candidate, const std::string& ground_truth_next, double ground_truth_score,
                         const Grader& grader, const Assignment& assignment) {
    const auto cand = analysis::parse_ast(candidate);
    if (!analysis::parsed(cand)) return reward_tier(RewardReason::Noncompiling);
    const auto truth = analysis::parse_ast(ground_truth_next);
    if (analysis::parsed(truth) && std::get<analysis::Ast>(cand) == std::get<analysis::Ast>(truth))
        return reward_tier(RewardReason::AstMatch);
    if (grader.grade(assignment, candidate).score == ground_truth_score) return reward_tier(RewardReason::GradeMatch);
    return reward_tier(RewardReason::Neutral);
}

std::vector<double> group_advantage(const std::vector<double>& rewards) {
    if (rewards.size() < 2) throw DataError("group_advantage needs at least two rewards");
    const double n = static_cast<double>(rewards.size());
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double sd = std::sqrt(var / n);
    std::vector<double> out(rewards.size(), 0.0);
    if (sd < 1e-8) return out;
    for (size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
    return out;
}

json grpo_sample_to_json(const GrpoPrefix& prefix, const std::vector<GrpoCandidate>& candidates) {
    json cands = json::array();
    for (const auto& c : candidates)
        cands.push_back({{"code", c.code},
                         {"reward", c.reward.value},
                         {"reason", reward_reason_name(c.reward.reason)},
                         {"advantage", c.advantage}});
    return {{"prompt", messages_to_json(prefix.prompt)},
            {"candidates", cands},
            {"ground_truth", prefix.ground_truth_next},
            {"meta",
             {{"student_id", prefix.student_id},
              {"assignment_id", prefix.assignment_id},
              {"t", prefix.t},
              {"ground_truth_score", prefix.ground_truth_score}}}};
}

}  // namespace stusim
