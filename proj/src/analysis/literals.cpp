#include "literals.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace stusim::analysis::detail {
namespace {

std::string canonical_float(double value) {
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    if (std::isnan(value)) return "nan";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    std::string out(buf, end);
    if (out.find_first_of(".e") == std::string::npos) out += ".0";
    return out;
}

double parse_double(std::string_view digits) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec == std::errc::result_out_of_range) {
        // from_chars leaves value untouched on overflow; mirror float('1e999')
        const bool tiny = digits.find("e-") != std::string_view::npos;
        return tiny ? 0.0 : HUGE_VAL;
    }
    return value;
}

void append_utf8(std::string& out, unsigned long cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

bool read_hex(std::string_view body, size_t at, size_t count, unsigned long& out) {
    if (at + count > body.size()) return false;
    out = 0;
    for (size_t i = 0; i < count; ++i) {
        const char c = body[at + i];
        if (!std::isxdigit(static_cast<unsigned char>(c))) return false;
        out = out * 16 + static_cast<unsigned long>(std::isdigit(static_cast<unsigned char>(c))
                                                        ? c - '0'
                                                        : std::tolower(c) - 'a' + 10);
    }
    return true;
}

bool decode_escapes(std::string_view body, bool bytes, std::string& out, std::string& error) {
    for (size_t k = 0; k < body.size(); ++k) {
        const char c = body[k];
        if (bytes && static_cast<unsigned char>(c) >= 0x80) {
            error = "bytes can only contain ASCII literal characters";
            return false;
        }
        if (c != '\\' || k + 1 >= body.size()) {
            out += c;
            continue;
        }
        const char e = body[++k];
        switch (e) {
            case '\n': break;
            case '\\': out += '\\'; break;
            case '\'': out += '\''; break;
            case '"': out += '"'; break;
            case 'a': out += '\a'; break;
            case 'b': out += '\b'; break;
            case 'f': out += '\f'; break;
            case 'n': out += '\n'; break;
            case 'r': out += '\r'; break;
            case 't': out += '\t'; break;
            case 'v': out += '\v'; break;
            case 'x': {
                unsigned long cp = 0;
                if (!read_hex(body, k + 1, 2, cp)) {
                    error = "(unicode error) truncated \\xXX escape";
                    return false;
                }
                k += 2;
                if (bytes) out += static_cast<char>(cp);
                else append_utf8(out, cp);
                break;
            }
            case 'u':
            case 'U': {
                if (bytes) {
                    out += '\\';
                    out += e;
                    break;
                }
                const size_t n = e == 'u' ? 4 : 8;
                unsigned long cp = 0;
                if (!read_hex(body, k + 1, n, cp) || cp > 0x10FFFF) {
                    error = "(unicode error) truncated \\uXXXX escape";
                    return false;
                }
                k += n;
                append_utf8(out, cp);
                break;
            }
            default:
                if (e >= '0' && e <= '7') {
                    unsigned long cp = static_cast<unsigned long>(e - '0');
                    for (int d = 0; d < 2 && k + 1 < body.size() && body[k + 1] >= '0' && body[k + 1] <= '7'; ++d)
                        cp = cp * 8 + static_cast<unsigned long>(body[++k] - '0');
                    if (bytes) out += static_cast<char>(cp & 0xFF);
                    else append_utf8(out, cp);
                } else if (e == '\r') {
                    if (k + 1 < body.size() && body[k + 1] == '\n') ++k;
                } else {
                    // Unknown escapes (including \N{...}) are kept verbatim.
                    out += '\\';
                    out += e;
                }
        }
    }
    return true;
}

}  // namespace

std::string canonical_number(std::string_view literal) {
    std::string text;
    for (char c : literal)
        if (c != '_') text += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (!text.empty() && text.back() == 'j') {
        text.pop_back();
        return canonical_float(parse_double(text)) + "j";
    }
    if (text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'o' || text[1] == 'b')) {
        const int base = text[1] == 'x' ? 16 : (text[1] == 'o' ? 8 : 2);
        // Decimal digits, least significant first; literals may exceed 64 bits.
        std::string digits = "0";
        for (size_t i = 2; i < text.size(); ++i) {
            const char c = text[i];
            int carry = std::isdigit(static_cast<unsigned char>(c)) ? c - '0' : c - 'a' + 10;
            for (auto& d : digits) {
                const int v = (d - '0') * base + carry;
                d = static_cast<char>('0' + v % 10);
                carry = v / 10;
            }
            while (carry > 0) {
                digits += static_cast<char>('0' + carry % 10);
                carry /= 10;
            }
        }
        while (digits.size() > 1 && digits.back() == '0') digits.pop_back();
        return std::string(digits.rbegin(), digits.rend());
    }
    if (text.find_first_of(".e") != std::string::npos) return canonical_float(parse_double(text));
    const size_t nz = text.find_first_not_of('0');
    return nz == std::string::npos ? "0" : text.substr(nz);
}

std::optional<StringPiece> decode_string_token(std::string_view token, std::string& error) {
    StringPiece piece;
    bool raw = false;
    size_t i = 0;
    while (i < token.size() && token[i] != '\'' && token[i] != '"') {
        const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(token[i])));
        if (c == 'r') raw = true;
        if (c == 'b') piece.bytes = true;
        if (c == 'f') piece.formatted = true;
        ++i;
    }
    const char q = token[i];
    const bool triple = token.size() - i >= 6 && token[i + 1] == q && token[i + 2] == q;
    const size_t quote_len = triple ? 3 : 1;
    std::string_view body = token.substr(i + quote_len);
    body = body.substr(0, body.size() >= quote_len ? body.size() - quote_len : 0);

    if (raw) {
        piece.value = std::string(body);
        return piece;
    }
    if (!piece.formatted) {
        if (!decode_escapes(body, piece.bytes, piece.value, error)) return std::nullopt;
        return piece;
    }
    // f-string: escapes are decoded in the literal text, replacement fields
    // are kept verbatim.
    int depth = 0;
    size_t literal_start = 0;
    for (size_t k = 0; k < body.size(); ++k) {
        const char c = body[k];
        if (depth == 0 && c == '\\') {
            ++k;
            continue;
        }
        if (depth == 0 && (c == '{' || c == '}') && k + 1 < body.size() && body[k + 1] == c) {
            ++k;
            continue;
        }
        if (c == '{') {
            if (depth == 0) {
                if (!decode_escapes(body.substr(literal_start, k - literal_start), false, piece.value, error))
                    return std::nullopt;
                literal_start = k;
            }
            ++depth;
        } else if (c == '}' && depth > 0) {
            if (--depth == 0) {
                piece.value.append(body.substr(literal_start, k + 1 - literal_start));
                literal_start = k + 1;
            }
        }
    }
    if (depth > 0) piece.value.append(body.substr(literal_start));
    else if (!decode_escapes(body.substr(literal_start), false, piece.value, error)) return std::nullopt;
    return piece;
}

std::string render_string_constant(const std::string& value, bool bytes) {
    std::string out = bytes ? "b'" : "'";
    for (char c : value) {
        const auto uc = static_cast<unsigned char>(c);
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\'': out += "\\'"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (uc < 0x20 || uc == 0x7F || (bytes && uc >= 0x80)) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\x%02x", uc);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    out += '\'';
    return out;
}

}  // namespace stusim::analysis::detail
