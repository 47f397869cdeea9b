#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace stusim::analysis {

/// Syntax tree node. Node kinds follow Python's `ast` module names
/// (Module, FunctionDef, Assign, BinOp, Name, Constant, ...), with operator
/// nodes (Add, Lt, ...) as leaves and a few wrapper kinds (Body, OrElse,
/// Lower, ...) that keep optional fields positionally unambiguous.
///
/// Leaves and only leaves carry text. Constant leaves hold a canonical
/// rendering of the literal value, so `'a'` and `"a"` compare equal.
struct AstNode {
    std::string kind;
    std::string text;
    std::vector<AstNode> children;

    bool is_leaf() const { return children.empty(); }
    size_t size() const;  // number of nodes in this subtree
    bool operator==(const AstNode&) const = default;
};

using Ast = AstNode;

struct ParseError {
    std::string message;
    int line = 0;
    int column = 0;
};

using ParseResult = std::variant<Ast, ParseError>;

/// Parses a Python 3 program. Comments, formatting and redundant
/// parentheses do not appear in the tree. Failure is returned as a value.
ParseResult parse_ast(std::string_view program);

inline bool parsed(const ParseResult& r) { return std::holds_alternative<Ast>(r); }

/// True iff both programs parse and their trees are identical, leaf texts
/// included. Any parse failure yields false.
bool ast_equal(std::string_view p, std::string_view q);

/// Structure-only s-expression ("(BinOp Name Add Constant)"); leaf text is
/// omitted. A positive `max_depth` truncates the subtree below that depth.
std::string structure_sexp(const AstNode& node, int max_depth = 0);

/// Full s-expression including leaf texts, for debugging and diagnostics.
std::string to_sexp(const AstNode& node);

}  // namespace stusim::analysis
