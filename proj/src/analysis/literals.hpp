#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace stusim::analysis::detail {

/// Canonical rendering of a numeric literal: integers in decimal, floats in
/// shortest round-trip form with a mandatory fraction or exponent, complex
/// literals with a trailing `j`.
std::string canonical_number(std::string_view literal);

struct StringPiece {
    bool bytes = false;
    bool formatted = false;
    std::string value;  // decoded value (raw token body for f-strings)
};

/// Decodes one string token (prefix and quotes included). Returns nullopt
/// and sets `error` when an escape sequence is malformed.
std::optional<StringPiece> decode_string_token(std::string_view token, std::string& error);

/// Quote-and-escape rendering used as the Constant leaf text.
std::string render_string_constant(const std::string& value, bool bytes);

}  // namespace stusim::analysis::detail
