#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stusim::analysis {

/// Raw token classes produced by the Python lexer. Layout tokens
/// (Newline, Indent, Dedent, EndMarker) are consumed by the parser and
/// dropped from the CodeBLEU token stream.
enum class LexKind { Name, Number, String, Op, Newline, Indent, Dedent, EndMarker };

struct LexToken {
    LexKind kind;
    std::string text;
    int line = 0;    // 1-based
    int column = 0;  // 1-based, byte offset within the line
};

struct LexError {
    std::string message;
    int line = 0;
    int column = 0;
};

struct LexResult {
    std::vector<LexToken> tokens;
    std::optional<LexError> error;  // first error; tokens may be partial
};

/// Tokenizes Python 3 source. In strict mode lexing stops at the first
/// error. In tolerant mode malformed input is skipped or absorbed and
/// lexing always reaches the end of input; the first error is still
/// reported.
LexResult lex_python(std::string_view source, bool tolerant = false);

bool is_python_keyword(std::string_view word);

}  // namespace stusim::analysis
