#include "stusim/analysis/lexer.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace stusim::analysis {
namespace {

constexpr std::array<std::string_view, 35> kKeywords = {
    "False",  "None",   "True",    "and",      "as",       "assert", "async",
    "await",  "break",  "class",   "continue", "def",      "del",    "elif",
    "else",   "except", "finally", "for",      "from",     "global", "if",
    "import", "in",     "is",      "lambda",   "nonlocal", "not",    "or",
    "pass",   "raise",  "return",  "try",      "while",    "with",   "yield"};

constexpr std::array<std::string_view, 5> kThreeCharOps = {"**=", "//=", ">>=", "<<=", "..."};
constexpr std::array<std::string_view, 20> kTwoCharOps = {
    "!=", "%=", "&=", "*=", "**", "+=", "-=", "->", "//", "/=",
    ":=", "<<", "<=", "==", ">=", ">>", "@=", "^=", "|=", "<>"};
constexpr std::string_view kOneCharOps = "()[]{}%&*+,-./:;<=>@^|~";

// Keywords that CPython 3.10 still accepts glued to a numeric literal ("1if x else 2").
constexpr std::array<std::string_view, 8> kGlueKeywords = {"and", "else", "for", "if",
                                                           "in",  "is",   "not", "or"};

struct LexFailure {
    LexError error;
};

bool is_name_start(unsigned char c) { return std::isalpha(c) || c == '_' || c >= 0x80; }
bool is_name_char(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

bool is_string_prefix(std::string_view word) {
    std::string lower(word);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return lower == "r" || lower == "u" || lower == "f" || lower == "b" || lower == "br" ||
           lower == "rb" || lower == "fr" || lower == "rf";
}

char closing_for(char open) {
    switch (open) {
        case '(': return ')';
        case '[': return ']';
        default: return '}';
    }
}

class Lexer {
  public:
    Lexer(std::string_view src, bool tolerant) : src_(src), tolerant_(tolerant) {}

    LexResult run() {
        LexResult result;
        try {
            scan();
        } catch (const LexFailure& failure) {
            if (!first_error_) first_error_ = failure.error;
        }
        result.tokens = std::move(tokens_);
        result.error = first_error_;
        return result;
    }

  private:
    std::string_view src_;
    bool tolerant_;
    size_t pos_ = 0;
    int line_ = 1;
    size_t line_start_ = 0;
    bool at_line_start_ = true;
    std::vector<int> indents_{0};
    std::vector<int> alt_indents_{0};
    std::vector<char> brackets_;
    std::vector<LexToken> tokens_;
    std::optional<LexError> first_error_;

    int column_at(size_t p) const { return static_cast<int>(p - line_start_) + 1; }
    char peek(size_t ahead = 0) const {
        return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
    }
    bool at_end() const { return pos_ >= src_.size(); }

    // Strict mode throws; tolerant mode records the first error and lets the caller recover.
    void fail(std::string message, int line, int column) {
        LexError err{std::move(message), line, column};
        if (!tolerant_) throw LexFailure{err};
        if (!first_error_) first_error_ = err;
    }

    void emit(LexKind kind, std::string text, int line, int column) {
        tokens_.push_back(LexToken{kind, std::move(text), line, column});
    }

    void newline_consumed() {
        ++line_;
        line_start_ = pos_;
    }

    void consume_newline() {
        if (peek() == '\r' && peek(1) == '\n') pos_ += 2;
        else ++pos_;
        newline_consumed();
    }

    void scan() {
        while (true) {
            if (at_line_start_ && brackets_.empty()) {
                if (!handle_indentation()) break;
            }
            if (at_end()) break;
            const char c = peek();
            const auto uc = static_cast<unsigned char>(c);
            if (c == ' ' || c == '\t' || c == '\f') {
                ++pos_;
            } else if (c == '#') {
                skip_comment();
            } else if (c == '\n' || c == '\r') {
                const int col = column_at(pos_);
                const int line = line_;
                consume_newline();
                if (brackets_.empty()) {
                    emit(LexKind::Newline, "\n", line, col);
                    at_line_start_ = true;
                }
            } else if (c == '\\') {
                const int col = column_at(pos_);
                if (peek(1) == '\n' || peek(1) == '\r') {
                    ++pos_;
                    consume_newline();
                    if (at_end()) fail("unexpected EOF while parsing", line_, column_at(pos_));
                } else {
                    fail("unexpected character after line continuation character", line_, col);
                    emit(LexKind::Op, "\\", line_, col);
                    ++pos_;
                }
            } else if (is_name_start(uc)) {
                scan_name_or_prefixed_string();
            } else if (std::isdigit(uc) || (c == '.' && std::isdigit(static_cast<unsigned char>(peek(1))))) {
                scan_number();
            } else if (c == '\'' || c == '"') {
                scan_string(pos_, pos_);
            } else {
                scan_operator();
            }
        }
        finish();
    }

    void skip_comment() {
        while (!at_end() && peek() != '\n' && peek() != '\r') ++pos_;
    }

    // Returns false at end of input.
    bool handle_indentation() {
        while (true) {
            int col = 0;
            int alt = 0;
            size_t p = pos_;
            while (p < src_.size()) {
                const char c = src_[p];
                if (c == ' ') {
                    ++col;
                    ++alt;
                } else if (c == '\t') {
                    col = (col / 8 + 1) * 8;
                    ++alt;
                } else if (c == '\f') {
                    col = 0;
                    alt = 0;
                } else {
                    break;
                }
                ++p;
            }
            pos_ = p;
            if (at_end()) return false;
            const char c = peek();
            if (c == '#' || c == '\n' || c == '\r') {
                skip_comment();
                if (at_end()) return false;
                consume_newline();
                continue;
            }
            at_line_start_ = false;
            apply_indent(col, alt);
            return true;
        }
    }

    void apply_indent(int col, int alt) {
        const int column = column_at(pos_);
        if (col == indents_.back()) {
            if (alt != alt_indents_.back())
                fail("inconsistent use of tabs and spaces in indentation", line_, column);
            return;
        }
        if (col > indents_.back()) {
            if (alt <= alt_indents_.back())
                fail("inconsistent use of tabs and spaces in indentation", line_, column);
            indents_.push_back(col);
            alt_indents_.push_back(alt);
            emit(LexKind::Indent, "", line_, 1);
            return;
        }
        while (indents_.size() > 1 && col < indents_.back()) {
            indents_.pop_back();
            alt_indents_.pop_back();
            emit(LexKind::Dedent, "", line_, column);
        }
        if (col != indents_.back()) {
            fail("unindent does not match any outer indentation level", line_, column);
            // Recover by treating this line as a new indentation level.
            indents_.push_back(col);
            alt_indents_.push_back(alt);
        } else if (alt != alt_indents_.back()) {
            fail("inconsistent use of tabs and spaces in indentation", line_, column);
        }
    }

    void scan_name_or_prefixed_string() {
        const size_t start = pos_;
        while (!at_end() && is_name_char(static_cast<unsigned char>(peek()))) ++pos_;
        const std::string_view word = src_.substr(start, pos_ - start);
        if ((peek() == '\'' || peek() == '"') && is_string_prefix(word)) {
            scan_string(start, pos_);
            return;
        }
        emit(LexKind::Name, std::string(word), line_, column_at(start));
    }

    // Consumes digits accepted by `is_digit`, allowing single underscores between digits.
    // Returns the number of digits consumed; reports misplaced underscores.
    int consume_digits(bool (*is_digit)(char), const char* what) {
        int count = 0;
        while (!at_end()) {
            const char c = peek();
            if (is_digit(c)) {
                ++pos_;
                ++count;
            } else if (c == '_' && count > 0 && is_digit(peek(1))) {
                ++pos_;
            } else if (c == '_') {
                fail(std::string("invalid ") + what + " literal", line_, column_at(pos_));
                ++pos_;
            } else {
                break;
            }
        }
        return count;
    }

    static bool is_dec(char c) { return c >= '0' && c <= '9'; }
    static bool is_hex(char c) { return std::isxdigit(static_cast<unsigned char>(c)) != 0; }
    static bool is_oct(char c) { return c >= '0' && c <= '7'; }
    static bool is_bin(char c) { return c == '0' || c == '1'; }

    void scan_number() {
        const size_t start = pos_;
        const int line = line_;
        const int col = column_at(start);
        const char c0 = peek();
        const char c1 = static_cast<char>(std::tolower(static_cast<unsigned char>(peek(1))));
        if (c0 == '0' && (c1 == 'x' || c1 == 'o' || c1 == 'b')) {
            pos_ += 2;
            if (peek() == '_') ++pos_;
            int digits = 0;
            const char* what = c1 == 'x' ? "hexadecimal" : (c1 == 'o' ? "octal" : "binary");
            if (c1 == 'x') digits = consume_digits(is_hex, what);
            else if (c1 == 'o') digits = consume_digits(is_oct, what);
            else digits = consume_digits(is_bin, what);
            if (digits == 0 || std::isalnum(static_cast<unsigned char>(peek())))
                fail(std::string("invalid ") + what + " literal", line, col);
            while (!at_end() && is_name_char(static_cast<unsigned char>(peek())) && tolerant_) ++pos_;
        } else {
            bool is_float = false;
            bool nonzero_int_digit = false;
            bool leading_zero = c0 == '0';
            if (c0 != '.') {
                const size_t int_start = pos_;
                consume_digits(is_dec, "decimal");
                for (size_t i = int_start; i < pos_; ++i)
                    if (src_[i] != '0' && src_[i] != '_') nonzero_int_digit = true;
            }
            if (peek() == '.') {
                is_float = true;
                ++pos_;
                if (is_dec(peek())) consume_digits(is_dec, "decimal");
            }
            if (peek() == 'e' || peek() == 'E') {
                const char sign = peek(1);
                const bool has_sign = sign == '+' || sign == '-';
                if (is_dec(peek(has_sign ? 2 : 1))) {
                    is_float = true;
                    pos_ += has_sign ? 2 : 1;
                    consume_digits(is_dec, "decimal");
                } else {
                    fail("invalid decimal literal", line, col);
                }
            }
            bool imaginary = false;
            if (peek() == 'j' || peek() == 'J') {
                imaginary = true;
                ++pos_;
            }
            if (!is_float && !imaginary && leading_zero && nonzero_int_digit)
                fail("leading zeros in decimal integer literals are not permitted", line, col);
        }
        if (!at_end() && is_name_start(static_cast<unsigned char>(peek()))) {
            size_t e = pos_;
            while (e < src_.size() && is_name_char(static_cast<unsigned char>(src_[e]))) ++e;
            const std::string_view word = src_.substr(pos_, e - pos_);
            const bool glued_keyword = std::any_of(
                kGlueKeywords.begin(), kGlueKeywords.end(),
                [&](std::string_view kw) { return word.substr(0, kw.size()) == kw; });
            if (!glued_keyword) {
                fail("invalid decimal literal", line, col);
                pos_ = e;
            }
        }
        emit(LexKind::Number, std::string(src_.substr(start, pos_ - start)), line, col);
    }

    // `start` is the token start (prefix included), `quote_pos` the opening quote.
    void scan_string(size_t start, size_t quote_pos) {
        const int line = line_;
        const int col = column_at(start);
        pos_ = quote_pos;
        const char q = peek();
        const bool triple = peek(1) == q && peek(2) == q;
        pos_ += triple ? 3 : 1;
        while (true) {
            if (at_end()) {
                fail(triple ? "unterminated triple-quoted string literal"
                            : "unterminated string literal",
                     line, col);
                break;
            }
            const char c = peek();
            if (c == '\\') {
                ++pos_;
                if (at_end()) continue;
                if (peek() == '\n' || peek() == '\r') consume_newline();
                else ++pos_;
                continue;
            }
            if (c == '\n' || c == '\r') {
                if (!triple) {
                    fail("unterminated string literal", line, col);
                    break;
                }
                consume_newline();
                continue;
            }
            if (c == q) {
                if (!triple) {
                    ++pos_;
                    break;
                }
                if (peek(1) == q && peek(2) == q) {
                    pos_ += 3;
                    break;
                }
            }
            ++pos_;
        }
        emit(LexKind::String, std::string(src_.substr(start, pos_ - start)), line, col);
    }

    void scan_operator() {
        const int col = column_at(pos_);
        auto matches = [&](std::string_view op) { return src_.substr(pos_, op.size()) == op; };
        for (auto op : kThreeCharOps) {
            if (matches(op)) {
                emit(LexKind::Op, std::string(op), line_, col);
                pos_ += 3;
                return;
            }
        }
        for (auto op : kTwoCharOps) {
            if (matches(op)) {
                if (op == "<>") break;  // only valid under barry_as_FLUFL
                emit(LexKind::Op, std::string(op), line_, col);
                pos_ += 2;
                return;
            }
        }
        const char c = peek();
        if (kOneCharOps.find(c) == std::string_view::npos) {
            fail(std::string("invalid character '") + c + "'", line_, col);
            emit(LexKind::Op, std::string(1, c), line_, col);
            ++pos_;
            return;
        }
        if (c == '(' || c == '[' || c == '{') {
            brackets_.push_back(c);
        } else if (c == ')' || c == ']' || c == '}') {
            if (brackets_.empty()) {
                fail(std::string("unmatched '") + c + "'", line_, col);
            } else if (closing_for(brackets_.back()) != c) {
                fail(std::string("closing parenthesis '") + c +
                         "' does not match opening parenthesis '" + brackets_.back() + "'",
                     line_, col);
                brackets_.pop_back();
            } else {
                brackets_.pop_back();
            }
        }
        emit(LexKind::Op, std::string(1, c), line_, col);
        ++pos_;
    }

    void finish() {
        if (!brackets_.empty()) {
            fail("unexpected EOF while parsing", line_, column_at(pos_));
            brackets_.clear();
        }
        if (!tokens_.empty() && tokens_.back().kind != LexKind::Newline &&
            tokens_.back().kind != LexKind::Dedent && tokens_.back().kind != LexKind::Indent) {
            emit(LexKind::Newline, "", line_, column_at(pos_));
        }
        while (indents_.size() > 1) {
            indents_.pop_back();
            emit(LexKind::Dedent, "", line_ + 1, 1);
        }
        emit(LexKind::EndMarker, "", line_ + 1, 1);
    }
};

}  // namespace

bool is_python_keyword(std::string_view word) {
    return std::find(kKeywords.begin(), kKeywords.end(), word) != kKeywords.end();
}

LexResult lex_python(std::string_view source, bool tolerant) {
    return Lexer(source, tolerant).run();
}

}  // namespace stusim::analysis
