#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace stusim::analysis {

enum class TokenKind { Keyword, Identifier, Literal, Operator, Punct };

struct Token {
    std::string text;
    TokenKind kind;

    bool operator==(const Token&) const = default;
};

/// Code token stream used by the n-gram components of CodeBLEU.
/// Never contains whitespace, comment, or layout tokens.
using TokenSeq = std::vector<Token>;

/// Best-effort lexing: never fails, also on programs that do not parse.
TokenSeq tokenize_code(std::string_view program);

const char* token_kind_name(TokenKind kind);

}  // namespace stusim::analysis
