#include "stusim/analysis/tokens.hpp"

#include "stusim/analysis/lexer.hpp"

namespace stusim::analysis {
namespace {

bool is_punct(std::string_view op) {
    return op == "(" || op == ")" || op == "[" || op == "]" || op == "{" || op == "}" ||
           op == "," || op == ":" || op == "." || op == ";" || op == "->";
}

}  // namespace

TokenSeq tokenize_code(std::string_view program) {
    const LexResult lexed = lex_python(program, /*tolerant=*/true);
    TokenSeq out;
    out.reserve(lexed.tokens.size());
    for (const auto& tok : lexed.tokens) {
        switch (tok.kind) {
            case LexKind::Name:
                out.push_back({tok.text, is_python_keyword(tok.text) ? TokenKind::Keyword
                                                                     : TokenKind::Identifier});
                break;
            case LexKind::Number:
            case LexKind::String:
                out.push_back({tok.text, TokenKind::Literal});
                break;
            case LexKind::Op:
                if (tok.text == "...") out.push_back({tok.text, TokenKind::Literal});
                else out.push_back({tok.text, is_punct(tok.text) ? TokenKind::Punct : TokenKind::Operator});
                break;
            default:
                break;
        }
    }
    return out;
}

const char* token_kind_name(TokenKind kind) {
    switch (kind) {
        case TokenKind::Keyword: return "keyword";
        case TokenKind::Identifier: return "identifier";
        case TokenKind::Literal: return "literal";
        case TokenKind::Operator: return "operator";
        case TokenKind::Punct: return "punct";
    }
    return "unknown";
}

}  // namespace stusim::analysis
