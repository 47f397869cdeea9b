#include "stusim/losses.hpp"

#include <cmath>

#include "stusim/errors.hpp"

namespace stusim {

using nlohmann::json;

double sft_nll(const LogprobSeq& seq) {
    if (seq.token_logprobs.size() != seq.assistant_mask.size())
        throw DataError("sft_nll: " + std::to_string(seq.token_logprobs.size()) + " logprobs but " +
                        std::to_string(seq.assistant_mask.size()) + " mask entries");
    double total = 0.0;
    for (size_t i = 0; i < seq.token_logprobs.size(); ++i) {
        const double lp = seq.token_logprobs[i];
        if (lp > 0.0) throw DataError("sft_nll: positive log-probability at position " + std::to_string(i));
        if (seq.assistant_mask[i]) total -= lp;
    }
    return total;
}

double implicit_reward(double policy_logprob_sum, double ref_logprob_sum, const DpoConfig& cfg) {
    if (!(cfg.beta > 0.0)) throw ConfigError("beta must be positive");
    return cfg.beta * (policy_logprob_sum - ref_logprob_sum);
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) {
    // log(1 + e^x) without overflow for large x or cancellation for small x
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double dpo_loss(double r_chosen, double r_rejected) { return softplus(-(r_chosen - r_rejected)); }

std::pair<double, double> dpo_loss_grad(double r_chosen, double r_rejected) {
    const double s = sigmoid(-(r_chosen - r_rejected));
    return {-s, s};
}

DpoAuditRow dpo_audit_row(const json& row, const DpoConfig& cfg) {
    DpoAuditRow out;
    try {
        out.pair_id = row.at("pair_id").is_string() ? row["pair_id"].get<std::string>() : row["pair_id"].dump();
        const auto& c = row.at("chosen");
        const auto& r = row.at("rejected");
        out.r_chosen = implicit_reward(c.at("policy_lp").get<double>(), c.at("ref_lp").get<double>(), cfg);
        out.r_rejected = implicit_reward(r.at("policy_lp").get<double>(), r.at("ref_lp").get<double>(), cfg);
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed DPO audit row: ") + e.what());
    }
    out.loss = dpo_loss(out.r_chosen, out.r_rejected);
    return out;
}

json audit_row_to_json(const DpoAuditRow& row) {
    return {{"pair_id", row.pair_id}, {"r_chosen", row.r_chosen}, {"r_rejected", row.r_rejected}, {"loss", row.loss}};
}

}  // namespace stusim
