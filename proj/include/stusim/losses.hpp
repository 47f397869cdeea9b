#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace stusim {

struct LogprobSeq {
    std::vector<double> token_logprobs;
    std::vector<bool> assistant_mask;
};

struct DpoConfig {
    double beta = 0.5;
};

/// Negative sum of log-probabilities at assistant positions. Throws
/// DataError on a length mismatch or a positive log-probability.
double sft_nll(const LogprobSeq& seq);

/// beta * (policy_logprob_sum - ref_logprob_sum). Throws ConfigError when
/// beta <= 0.
double implicit_reward(double policy_logprob_sum, double ref_logprob_sum, const DpoConfig& cfg = {});

/// -log sigmoid(r_chosen - r_rejected), evaluated as softplus(-delta).
double dpo_loss(double r_chosen, double r_rejected);

/// Partial derivatives of dpo_loss with respect to (r_chosen, r_rejected).
std::pair<double, double> dpo_loss_grad(double r_chosen, double r_rejected);

double sigmoid(double x);
double softplus(double x);

struct DpoAuditRow {
    std::string pair_id;
    double r_chosen = 0.0;
    double r_rejected = 0.0;
    double loss = 0.0;
};

/// Reads {pair_id, chosen:{policy_lp, ref_lp}, rejected:{policy_lp, ref_lp}}.
/// Throws DataError naming the line on malformed input.
DpoAuditRow dpo_audit_row(const nlohmann::json& row, const DpoConfig& cfg);

nlohmann::json audit_row_to_json(const DpoAuditRow& row);

}  // namespace stusim
