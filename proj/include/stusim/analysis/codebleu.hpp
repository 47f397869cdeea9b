#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "stusim/analysis/ast.hpp"
#include "stusim/analysis/tokens.hpp"

namespace stusim::analysis {

/// Unigram weight applied to keyword tokens in the weighted n-gram component.
inline constexpr double kKeywordWeight = 5.0;

/// Clipped n-gram precision of one order, exposed for inspection and tests.
struct NgramPrecision {
    double matched = 0.0;
    double total = 0.0;
};

/// Modified n-gram precisions for n = 1..max_n. When `keyword_weighted` is
/// set, unigram counts of keyword tokens are scaled by kKeywordWeight.
std::vector<NgramPrecision> ngram_precisions(const TokenSeq& candidate, const TokenSeq& reference,
                                             int max_n = 4, bool keyword_weighted = false);

/// Smoothed BLEU with brevity penalty. Orders beyond the candidate length are
/// left out of the geometric mean. No unigram overlap at all scores 0; any
/// other zero precision is replaced by 1/(2 * candidate length).
double ngram_bleu(const TokenSeq& candidate, const TokenSeq& reference, int max_n = 4,
                  bool keyword_weighted = false);

/// Fraction of the reference's internal-node subtrees (compared by structure,
/// leaf text ignored) that also occur in the candidate, multiset-clipped.
/// `max_depth` > 0 truncates each subtree below that depth.
double subtree_match(const Ast& candidate, const Ast& reference, int max_depth = 0);

/// One def-use edge. `dst` is either a defined variable ("name#version") or
/// a sink such as "<Return>" when the value flows into a statement.
struct DataflowEdge {
    std::string src;
    std::string dst;
    auto operator<=>(const DataflowEdge&) const = default;
};

/// Name-based def-use edges, scoped per function/class body, with each
/// assignment to a name starting a new version.
std::vector<DataflowEdge> extract_dataflow(const Ast& tree);

double dataflow_match(std::string_view candidate, std::string_view reference);

struct CodeBleuBreakdown {
    double ngram = 0.0;
    double weighted_ngram = 0.0;
    double ast_match = 0.0;
    double dataflow_match = 0.0;
    double total = 0.0;
    std::array<double, 4> weights{0.25, 0.25, 0.25, 0.25};
    bool candidate_parsed = false;
    bool reference_parsed = false;
};

/// Throws std::invalid_argument when the weights are negative or do not sum
/// to 1 (within 1e-9).
CodeBleuBreakdown codebleu(std::string_view candidate, std::string_view reference,
                           const std::array<double, 4>& weights = {0.25, 0.25, 0.25, 0.25});

}  // namespace stusim::analysis
