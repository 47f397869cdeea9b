#include "stusim/analysis/codebleu.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace stusim::analysis {
namespace {

using Gram = std::vector<std::string>;

std::map<Gram, double> count_grams(const TokenSeq& seq, int n, bool keyword_weighted) {
    std::map<Gram, double> counts;
    if (static_cast<int>(seq.size()) < n) return counts;
    for (size_t i = 0; i + n <= seq.size(); ++i) {
        Gram g;
        g.reserve(n);
        for (int j = 0; j < n; ++j) g.push_back(seq[i + j].text);
        const bool kw = keyword_weighted && n == 1 && seq[i].kind == TokenKind::Keyword;
        counts[g] += kw ? kKeywordWeight : 1.0;
    }
    return counts;
}

void collect_subtrees(const AstNode& node, int max_depth, std::map<std::string, int>& out) {
    if (node.is_leaf()) return;
    ++out[structure_sexp(node, max_depth)];
    for (const auto& child : node.children) collect_subtrees(child, max_depth, out);
}

}  // namespace

std::vector<NgramPrecision> ngram_precisions(const TokenSeq& candidate, const TokenSeq& reference,
                                             int max_n, bool keyword_weighted) {
    std::vector<NgramPrecision> out;
    for (int n = 1; n <= max_n; ++n) {
        const auto cand = count_grams(candidate, n, keyword_weighted);
        const auto ref = count_grams(reference, n, keyword_weighted);
        NgramPrecision p;
        for (const auto& [gram, count] : cand) {
            p.total += count;
            auto it = ref.find(gram);
            if (it != ref.end()) p.matched += std::min(count, it->second);
        }
        out.push_back(p);
    }
    return out;
}

double ngram_bleu(const TokenSeq& candidate, const TokenSeq& reference, int max_n, bool keyword_weighted) {
    if (candidate.empty() || reference.empty()) return 0.0;
    const int c = static_cast<int>(candidate.size());
    const int r = static_cast<int>(reference.size());
    const int order = std::min(max_n, c);
    const auto precisions = ngram_precisions(candidate, reference, order, keyword_weighted);
    if (precisions.front().matched == 0.0) return 0.0;

    const double floor = 1.0 / (2.0 * c);
    double log_sum = 0.0;
    for (const auto& p : precisions) {
        const double value = p.matched > 0.0 ? p.matched / p.total : floor;
        log_sum += std::log(value);
    }
    const double geo = std::exp(log_sum / order);
    const double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / c);
    return std::clamp(geo * bp, 0.0, 1.0);
}

double subtree_match(const Ast& candidate, const Ast& reference, int max_depth) {
    std::map<std::string, int> ref;
    std::map<std::string, int> cand;
    collect_subtrees(reference, max_depth, ref);
    collect_subtrees(candidate, max_depth, cand);
    if (ref.empty()) return candidate == reference ? 1.0 : 0.0;
    int total = 0;
    int matched = 0;
    for (const auto& [sexp, count] : ref) {
        total += count;
        auto it = cand.find(sexp);
        if (it != cand.end()) matched += std::min(count, it->second);
    }
    return static_cast<double>(matched) / total;
}

CodeBleuBreakdown codebleu(std::string_view candidate, std::string_view reference,
                           const std::array<double, 4>& weights) {
    for (double w : weights)
        if (w < 0.0 || !std::isfinite(w)) throw std::invalid_argument("codebleu weights must be non-negative");
    const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("codebleu weights must sum to 1");

    CodeBleuBreakdown out;
    out.weights = weights;
    const TokenSeq cand_tokens = tokenize_code(candidate);
    const TokenSeq ref_tokens = tokenize_code(reference);
    out.ngram = ngram_bleu(cand_tokens, ref_tokens, 4, false);
    out.weighted_ngram = ngram_bleu(cand_tokens, ref_tokens, 4, true);

    const ParseResult cand_tree = parse_ast(candidate);
    const ParseResult ref_tree = parse_ast(reference);
    out.candidate_parsed = parsed(cand_tree);
    out.reference_parsed = parsed(ref_tree);
    if (out.candidate_parsed && out.reference_parsed) {
        out.ast_match = subtree_match(std::get<Ast>(cand_tree), std::get<Ast>(ref_tree));
        out.dataflow_match = dataflow_match(candidate, reference);
    }
    out.total = weights[0] * out.ngram + weights[1] * out.weighted_ngram + weights[2] * out.ast_match +
                weights[3] * out.dataflow_match;
    out.total = std::clamp(out.total, 0.0, 1.0);
    return out;
}

}  // namespace stusim::analysis
