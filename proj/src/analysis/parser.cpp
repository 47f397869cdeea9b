#include <algorithm>
#include <set>
#include <string>
#include <utility>

#include "literals.hpp"
#include "stusim/analysis/ast.hpp"
#include "stusim/analysis/lexer.hpp"

namespace stusim::analysis {
namespace {

struct ParseFailure {
    ParseError error;
};

std::string empty_text(const std::string& kind) {
    if (kind == "Module") return "<module>";
    if (kind == "List") return "[]";
    if (kind == "Tuple") return "()";
    if (kind == "Dict") return "{}";
    if (kind == "Slice") return ":";
    std::string lower = kind;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return lower;
}

AstNode leaf(std::string kind, std::string text) {
    return AstNode{std::move(kind), std::move(text), {}};
}

// A node without children becomes a leaf carrying a canonical text.
AstNode make(std::string kind, std::vector<AstNode> children) {
    if (children.empty()) {
        std::string text = empty_text(kind);
        return AstNode{std::move(kind), std::move(text), {}};
    }
    return AstNode{std::move(kind), "", std::move(children)};
}

AstNode wrap(std::string kind, AstNode child) {
    std::vector<AstNode> children;
    children.push_back(std::move(child));
    return make(std::move(kind), std::move(children));
}

struct OpInfo {
    std::string_view token;
    std::string_view kind;
};

constexpr OpInfo kAugOps[] = {{"+=", "Add"},     {"-=", "Sub"},   {"*=", "Mult"},
                              {"/=", "Div"},     {"//=", "FloorDiv"}, {"%=", "Mod"},
                              {"**=", "Pow"},    {"<<=", "LShift"}, {">>=", "RShift"},
                              {"&=", "BitAnd"},  {"|=", "BitOr"},  {"^=", "BitXor"},
                              {"@=", "MatMult"}};

std::string describe_invalid_target(const AstNode& n) {
    const std::string& k = n.kind;
    if (k == "Constant" || k == "JoinedStr") return "literal";
    if (k == "Call") return "function call";
    if (k == "Compare") return "comparison";
    if (k == "Lambda") return "lambda";
    if (k == "IfExp") return "conditional expression";
    if (k == "NamedExpr") return "named expression";
    if (k == "Await") return "await expression";
    if (k == "Yield" || k == "YieldFrom") return "yield expression";
    if (k == "ListComp") return "list comprehension";
    if (k == "SetComp") return "set comprehension";
    if (k == "DictComp") return "dict comprehension";
    if (k == "GeneratorExp") return "generator expression";
    if (k == "Dict") return "dict literal";
    if (k == "Set") return "set display";
    return "expression";
}

struct FunctionContext {
    bool in_function = false;
    bool is_async = false;
    int loop_depth = 0;
};

constexpr int kMaxNesting = 200;

class Parser {
  public:
    explicit Parser(std::vector<LexToken> tokens) : toks_(std::move(tokens)) {
        contexts_.push_back(FunctionContext{});
    }

    AstNode parse_module() {
        std::vector<AstNode> body;
        while (cur().kind != LexKind::EndMarker) {
            if (cur().kind == LexKind::Newline) {
                advance();
                continue;
            }
            if (cur().kind == LexKind::Indent) fail("unexpected indent");
            if (cur().kind == LexKind::Dedent) fail("unindent does not match any outer indentation level");
            parse_statement(body);
        }
        return make("Module", std::move(body));
    }

  private:
    std::vector<LexToken> toks_;
    size_t pos_ = 0;
    std::vector<FunctionContext> contexts_;
    int nesting_ = 0;

    // ---- token helpers -------------------------------------------------
    const LexToken& cur() const { return toks_[pos_]; }
    const LexToken& peek_tok(size_t ahead = 1) const {
        return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
    }
    void advance() {
        if (pos_ + 1 < toks_.size()) ++pos_;
    }

    [[noreturn]] void fail_at(const LexToken& tok, std::string message) const {
        throw ParseFailure{ParseError{std::move(message), tok.line, tok.column}};
    }
    [[noreturn]] void fail(std::string message) const { fail_at(cur(), std::move(message)); }

    static bool is_op(const LexToken& t, std::string_view op) {
        return t.kind == LexKind::Op && t.text == op;
    }
    static bool is_kw(const LexToken& t, std::string_view kw) {
        return t.kind == LexKind::Name && t.text == kw;
    }
    static bool is_plain_name(const LexToken& t) {
        return t.kind == LexKind::Name && !is_python_keyword(t.text);
    }
    bool at_op(std::string_view op) const { return is_op(cur(), op); }
    bool at_kw(std::string_view kw) const { return is_kw(cur(), kw); }
    bool at_name() const { return is_plain_name(cur()); }

    bool accept_op(std::string_view op) {
        if (!at_op(op)) return false;
        advance();
        return true;
    }
    bool accept_kw(std::string_view kw) {
        if (!at_kw(kw)) return false;
        advance();
        return true;
    }
    void expect_op(std::string_view op) {
        if (!accept_op(op)) {
            if (cur().kind == LexKind::Newline && op == ":") fail("expected ':'");
            fail("invalid syntax");
        }
    }
    void expect_kw(std::string_view kw) {
        if (!accept_kw(kw)) fail("invalid syntax");
    }
    std::string expect_name() {
        if (!at_name()) fail("invalid syntax");
        std::string name = cur().text;
        advance();
        return name;
    }

    bool at_statement_end() const {
        return cur().kind == LexKind::Newline || at_op(";") || cur().kind == LexKind::EndMarker;
    }

    bool at_expression_start() const {
        const LexToken& t = cur();
        switch (t.kind) {
            case LexKind::Number:
            case LexKind::String:
                return true;
            case LexKind::Name:
                return !is_python_keyword(t.text) || t.text == "not" || t.text == "lambda" ||
                       t.text == "await" || t.text == "None" || t.text == "True" ||
                       t.text == "False";
            case LexKind::Op:
                return t.text == "(" || t.text == "[" || t.text == "{" || t.text == "-" ||
                       t.text == "+" || t.text == "~" || t.text == "*" || t.text == "...";
            default:
                return false;
        }
    }

    FunctionContext& ctx() { return contexts_.back(); }

    struct NestingGuard {
        Parser& p;
        explicit NestingGuard(Parser& parser) : p(parser) {
            if (++p.nesting_ > kMaxNesting) p.fail("too many nested parentheses");
        }
        ~NestingGuard() { --p.nesting_; }
    };

    // ---- statements ----------------------------------------------------
    void parse_statement(std::vector<AstNode>& out) {
        const LexToken& t = cur();
        if (is_op(t, "@")) {
            out.push_back(parse_decorated());
            return;
        }
        if (t.kind == LexKind::Name) {
            if (t.text == "def") return out.push_back(parse_funcdef({}, false));
            if (t.text == "class") return out.push_back(parse_classdef({}));
            if (t.text == "if") return out.push_back(parse_if());
            if (t.text == "while") return out.push_back(parse_while());
            if (t.text == "for") return out.push_back(parse_for(false));
            if (t.text == "try") return out.push_back(parse_try());
            if (t.text == "with") return out.push_back(parse_with(false));
            if (t.text == "async") return out.push_back(parse_async());
        }
        parse_simple_statements(out);
    }

    void parse_simple_statements(std::vector<AstNode>& out) {
        out.push_back(parse_simple_statement());
        while (accept_op(";")) {
            if (cur().kind == LexKind::Newline) break;
            out.push_back(parse_simple_statement());
        }
        if (cur().kind != LexKind::Newline) fail("invalid syntax");
        advance();
    }

    std::vector<AstNode> parse_block() {
        std::vector<AstNode> body;
        if (cur().kind == LexKind::Newline) {
            advance();
            if (cur().kind != LexKind::Indent) fail("expected an indented block");
            advance();
            while (cur().kind != LexKind::Dedent && cur().kind != LexKind::EndMarker) {
                if (cur().kind == LexKind::Indent) fail("unexpected indent");
                parse_statement(body);
            }
            if (cur().kind == LexKind::Dedent) advance();
        } else {
            parse_simple_statements(body);
        }
        return body;
    }

    std::vector<AstNode> parse_loop_body() {
        ++ctx().loop_depth;
        auto body = parse_block();
        --ctx().loop_depth;
        return body;
    }

    AstNode parse_simple_statement() {
        const LexToken& t = cur();
        if (t.kind == LexKind::Name) {
            const std::string& w = t.text;
            if (w == "pass") {
                advance();
                return leaf("Pass", "pass");
            }
            if (w == "break" || w == "continue") {
                if (ctx().loop_depth == 0)
                    fail(w == "break" ? "'break' outside loop" : "'continue' not properly in loop");
                advance();
                return leaf(w == "break" ? "Break" : "Continue", w);
            }
            if (w == "return") return parse_return();
            if (w == "raise") return parse_raise();
            if (w == "global" || w == "nonlocal") return parse_global(w);
            if (w == "del") return parse_del();
            if (w == "assert") return parse_assert();
            if (w == "import") return parse_import();
            if (w == "from") return parse_from_import();
        }
        return parse_expression_statement();
    }

    AstNode parse_return() {
        const LexToken start = cur();
        if (!ctx().in_function) fail("'return' outside function");
        advance();
        if (at_statement_end()) return leaf("Return", "return");
        AstNode value = parse_star_expressions();
        reject_bare_starred(value, start);
        return wrap("Return", std::move(value));
    }

    AstNode parse_raise() {
        advance();
        if (at_statement_end()) return leaf("Raise", "raise");
        std::vector<AstNode> children;
        children.push_back(parse_expression());
        if (accept_kw("from")) children.push_back(wrap("Cause", parse_expression()));
        return make("Raise", std::move(children));
    }

    AstNode parse_global(const std::string& word) {
        if (word == "nonlocal" && !ctx().in_function)
            fail("nonlocal declaration not allowed at module level");
        advance();
        std::vector<AstNode> names;
        do {
            names.push_back(leaf("Id", expect_name()));
        } while (accept_op(","));
        return make(word == "global" ? "Global" : "Nonlocal", std::move(names));
    }

    AstNode parse_del() {
        advance();
        std::vector<AstNode> targets;
        do {
            if (at_statement_end()) break;
            AstNode target = parse_bitwise_or();
            validate_del_target(target);
            targets.push_back(std::move(target));
        } while (accept_op(","));
        if (targets.empty()) fail("invalid syntax");
        return make("Delete", std::move(targets));
    }

    AstNode parse_assert() {
        advance();
        std::vector<AstNode> children;
        children.push_back(parse_expression());
        if (accept_op(",")) children.push_back(parse_expression());
        return make("Assert", std::move(children));
    }

    std::string parse_dotted_name() {
        std::string name = expect_name();
        while (accept_op(".")) name += "." + expect_name();
        return name;
    }

    AstNode parse_import() {
        advance();
        std::vector<AstNode> aliases;
        do {
            std::vector<AstNode> parts;
            parts.push_back(leaf("Id", parse_dotted_name()));
            if (accept_kw("as")) parts.push_back(leaf("Id", expect_name()));
            aliases.push_back(make("alias", std::move(parts)));
        } while (accept_op(","));
        return make("Import", std::move(aliases));
    }

    AstNode parse_from_import() {
        advance();
        std::string module;
        while (at_op(".") || at_op("...")) {
            module += cur().text;
            advance();
        }
        if (at_name()) module += parse_dotted_name();
        if (module.empty()) fail("invalid syntax");
        expect_kw("import");
        std::vector<AstNode> children;
        children.push_back(leaf("Id", module));
        if (at_op("*")) {
            if (ctx().in_function) fail("import * only allowed at module level");
            advance();
            children.push_back(wrap("alias", leaf("Id", "*")));
            return make("ImportFrom", std::move(children));
        }
        const bool parenthesized = accept_op("(");
        while (true) {
            std::vector<AstNode> parts;
            parts.push_back(leaf("Id", expect_name()));
            if (accept_kw("as")) parts.push_back(leaf("Id", expect_name()));
            children.push_back(make("alias", std::move(parts)));
            if (!accept_op(",")) break;
            if (parenthesized && at_op(")")) break;
            if (!parenthesized && at_statement_end())
                fail("trailing comma not allowed without surrounding parentheses");
        }
        if (parenthesized) expect_op(")");
        return make("ImportFrom", std::move(children));
    }

    AstNode parse_yield_or_star_expressions() {
        if (at_kw("yield")) return parse_yield_expression();
        return parse_star_expressions();
    }

    AstNode parse_expression_statement() {
        const LexToken start = cur();
        AstNode first = parse_yield_or_star_expressions();

        if (at_op(":")) {
            validate_annotation_target(first, start);
            advance();
            std::vector<AstNode> children;
            children.push_back(std::move(first));
            children.push_back(parse_expression());
            if (accept_op("=")) {
                const LexToken value_start = cur();
                AstNode value = parse_yield_or_star_expressions();
                reject_bare_starred(value, value_start);
                children.push_back(std::move(value));
            }
            return make("AnnAssign", std::move(children));
        }

        for (const auto& aug : kAugOps) {
            if (at_op(aug.token)) {
                if (first.kind != "Name" && first.kind != "Attribute" && first.kind != "Subscript")
                    fail_at(start, "'" + describe_invalid_target(first) +
                                       "' is an illegal expression for augmented assignment");
                advance();
                const LexToken value_start = cur();
                AstNode value = parse_yield_or_star_expressions();
                reject_bare_starred(value, value_start);
                std::vector<AstNode> children;
                children.push_back(std::move(first));
                children.push_back(leaf(std::string(aug.kind), std::string(aug.token.substr(0, aug.token.size() - 1))));
                children.push_back(std::move(value));
                return make("AugAssign", std::move(children));
            }
        }

        if (at_op("=")) {
            std::vector<AstNode> parts;
            std::vector<LexToken> starts;
            parts.push_back(std::move(first));
            starts.push_back(start);
            while (accept_op("=")) {
                starts.push_back(cur());
                parts.push_back(parse_yield_or_star_expressions());
            }
            for (size_t i = 0; i + 1 < parts.size(); ++i) validate_store_target(parts[i], starts[i], true);
            reject_bare_starred(parts.back(), starts.back());
            return make("Assign", std::move(parts));
        }

        reject_bare_starred(first, start);
        return wrap("Expr", std::move(first));
    }

    void reject_bare_starred(const AstNode& value, const LexToken& where) const {
        if (value.kind == "Starred") fail_at(where, "can't use starred expression here");
    }

    void validate_annotation_target(const AstNode& target, const LexToken& where) const {
        if (target.kind == "Name" || target.kind == "Attribute" || target.kind == "Subscript") return;
        if (target.kind == "Tuple") fail_at(where, "only single target (not tuple) can be annotated");
        if (target.kind == "List") fail_at(where, "only single target (not list) can be annotated");
        fail_at(where, "illegal target for annotation");
    }

    void validate_store_target(const AstNode& target, const LexToken& where, bool top) const {
        const std::string& k = target.kind;
        if (k == "Name" || k == "Attribute" || k == "Subscript") return;
        if (k == "Tuple" || k == "List") {
            int starred = 0;
            for (const auto& elt : target.children) {
                if (elt.kind == "Starred") {
                    if (++starred > 1) fail_at(where, "multiple starred expressions in assignment");
                    validate_store_target(elt.children.front(), where, false);
                } else {
                    validate_store_target(elt, where, false);
                }
            }
            return;
        }
        if (k == "Starred") {
            if (top) fail_at(where, "starred assignment target must be in a list or tuple");
            validate_store_target(target.children.front(), where, false);
            return;
        }
        fail_at(where, "cannot assign to " + describe_invalid_target(target));
    }

    void validate_del_target(const AstNode& target) const {
        const std::string& k = target.kind;
        if (k == "Name" || k == "Attribute" || k == "Subscript") return;
        if (k == "Tuple" || k == "List") {
            for (const auto& elt : target.children) validate_del_target(elt);
            return;
        }
        fail("cannot delete " + describe_invalid_target(target));
    }

    // ---- compound statements -------------------------------------------
    AstNode parse_decorated() {
        std::vector<AstNode> decorators;
        while (accept_op("@")) {
            decorators.push_back(parse_named_expression());
            if (cur().kind != LexKind::Newline) fail("invalid syntax");
            advance();
        }
        if (at_kw("def")) return parse_funcdef(std::move(decorators), false);
        if (at_kw("class")) return parse_classdef(std::move(decorators));
        if (at_kw("async") && is_kw(peek_tok(), "def")) {
            advance();
            return parse_funcdef(std::move(decorators), true);
        }
        fail("invalid syntax");
    }

    AstNode parse_async() {
        const LexToken& next = peek_tok();
        if (is_kw(next, "def")) {
            advance();
            return parse_funcdef({}, true);
        }
        if (!ctx().is_async) {
            if (is_kw(next, "for")) fail("'async for' outside async function");
            if (is_kw(next, "with")) fail("'async with' outside async function");
            fail("invalid syntax");
        }
        advance();
        if (at_kw("for")) return parse_for(true);
        if (at_kw("with")) return parse_with(true);
        fail("invalid syntax");
    }

    AstNode parse_funcdef(std::vector<AstNode> decorators, bool is_async) {
        expect_kw("def");
        std::vector<AstNode> children;
        children.push_back(leaf("Id", expect_name()));
        expect_op("(");
        AstNode args = parse_parameters(")", true);
        expect_op(")");
        if (!args.children.empty()) children.push_back(std::move(args));
        if (accept_op("->")) children.push_back(wrap("Returns", parse_expression()));
        expect_op(":");
        contexts_.push_back(FunctionContext{true, is_async, 0});
        children.push_back(make("Body", parse_block()));
        contexts_.pop_back();
        if (!decorators.empty()) children.push_back(make("Decorators", std::move(decorators)));
        return make(is_async ? "AsyncFunctionDef" : "FunctionDef", std::move(children));
    }

    // Parameter list up to (not including) `closing`. Returns an `arguments`
    // node whose children are arg/posonlyarg/vararg/kwonlyarg/kwarg nodes.
    AstNode parse_parameters(std::string_view closing, bool allow_annotations) {
        std::vector<AstNode> params;
        std::set<std::string> names;
        bool seen_default = false;
        bool seen_star = false;
        bool seen_slash = false;
        bool seen_kwarg = false;

        auto param = [&](std::string kind, bool allow_default) {
            const LexToken name_tok = cur();
            std::string name = expect_name();
            if (!names.insert(name).second)
                fail_at(name_tok, "duplicate argument '" + name + "' in function definition");
            std::vector<AstNode> parts;
            parts.push_back(leaf("Id", name));
            if (allow_annotations && accept_op(":")) parts.push_back(wrap("Annotation", parse_expression()));
            bool has_default = false;
            if (allow_default && accept_op("=")) {
                parts.push_back(wrap("Default", parse_expression()));
                has_default = true;
            }
            params.push_back(make(std::move(kind), std::move(parts)));
            return has_default;
        };

        while (!at_op(closing)) {
            if (seen_kwarg) fail("arguments cannot follow var-keyword argument");
            if (at_op("/")) {
                if (seen_slash) fail("/ may appear only once");
                if (seen_star) fail("/ must be ahead of *");
                if (params.empty()) fail("at least one argument must precede /");
                advance();
                seen_slash = true;
                for (auto& p : params) p.kind = "posonlyarg";
            } else if (at_op("*")) {
                if (seen_star) fail("* argument may appear only once");
                advance();
                seen_star = true;
                if (at_name()) {
                    param("vararg", false);
                } else if (at_op(",") && (is_op(peek_tok(), closing) || is_op(peek_tok(), "**"))) {
                    fail("named arguments must follow bare *");
                } else if (at_op(closing)) {
                    fail("named arguments must follow bare *");
                }
            } else if (at_op("**")) {
                advance();
                param("kwarg", false);
                seen_kwarg = true;
            } else {
                const LexToken start = cur();
                const bool has_default = param(seen_star ? "kwonlyarg" : "arg", true);
                if (!seen_star) {
                    if (has_default) seen_default = true;
                    else if (seen_default) fail_at(start, "non-default argument follows default argument");
                }
            }
            if (!accept_op(",")) break;
        }
        return make("arguments", std::move(params));
    }

    AstNode parse_classdef(std::vector<AstNode> decorators) {
        expect_kw("class");
        std::vector<AstNode> children;
        children.push_back(leaf("Id", expect_name()));
        if (accept_op("(")) {
            auto [args, keywords] = parse_call_arguments();
            if (!args.empty()) children.push_back(make("Bases", std::move(args)));
            for (auto& kw : keywords) children.push_back(std::move(kw));
        }
        expect_op(":");
        contexts_.push_back(FunctionContext{false, false, 0});
        children.push_back(make("Body", parse_block()));
        contexts_.pop_back();
        if (!decorators.empty()) children.push_back(make("Decorators", std::move(decorators)));
        return make("ClassDef", std::move(children));
    }

    AstNode parse_if() {
        advance();  // 'if' or 'elif'
        std::vector<AstNode> children;
        children.push_back(parse_named_expression());
        expect_op(":");
        children.push_back(make("Body", parse_block()));
        if (at_kw("elif")) {
            children.push_back(wrap("OrElse", parse_if()));
        } else if (accept_kw("else")) {
            expect_op(":");
            children.push_back(make("OrElse", parse_block()));
        }
        return make("If", std::move(children));
    }

    AstNode parse_while() {
        advance();
        std::vector<AstNode> children;
        children.push_back(parse_named_expression());
        expect_op(":");
        children.push_back(make("Body", parse_loop_body()));
        if (accept_kw("else")) {
            expect_op(":");
            children.push_back(make("OrElse", parse_block()));
        }
        return make("While", std::move(children));
    }

    AstNode parse_for(bool is_async) {
        expect_kw("for");
        std::vector<AstNode> children;
        children.push_back(parse_target_list());
        expect_kw("in");
        children.push_back(parse_star_expressions());
        expect_op(":");
        children.push_back(make("Body", parse_loop_body()));
        if (accept_kw("else")) {
            expect_op(":");
            children.push_back(make("OrElse", parse_block()));
        }
        return make(is_async ? "AsyncFor" : "For", std::move(children));
    }

    AstNode parse_try() {
        advance();
        expect_op(":");
        std::vector<AstNode> children;
        children.push_back(make("Body", parse_block()));
        bool has_handler = false;
        bool bare_seen = false;
        while (at_kw("except")) {
            const LexToken except_tok = cur();
            if (bare_seen) fail_at(except_tok, "default 'except:' must be last");
            advance();
            std::vector<AstNode> parts;
            if (!at_op(":")) {
                parts.push_back(parse_expression());
                if (at_op(",")) fail("multiple exception types must be parenthesized");
                if (accept_kw("as")) parts.push_back(leaf("Id", expect_name()));
            } else {
                bare_seen = true;
            }
            expect_op(":");
            parts.push_back(make("Body", parse_block()));
            children.push_back(make("ExceptHandler", std::move(parts)));
            has_handler = true;
        }
        if (at_kw("else")) {
            if (!has_handler) fail("invalid syntax");
            advance();
            expect_op(":");
            children.push_back(make("OrElse", parse_block()));
        }
        bool has_finally = false;
        if (accept_kw("finally")) {
            expect_op(":");
            children.push_back(make("FinalBody", parse_block()));
            has_finally = true;
        }
        if (!has_handler && !has_finally) fail("expected 'except' or 'finally' block");
        return make("Try", std::move(children));
    }

    AstNode parse_with(bool is_async) {
        expect_kw("with");
        std::vector<AstNode> children;
        do {
            std::vector<AstNode> parts;
            parts.push_back(parse_expression());
            if (accept_kw("as")) {
                const LexToken start = cur();
                AstNode target = parse_single_target();
                validate_store_target(target, start, true);
                parts.push_back(std::move(target));
            }
            children.push_back(make("withitem", std::move(parts)));
        } while (accept_op(","));
        expect_op(":");
        children.push_back(make("Body", parse_block()));
        return make(is_async ? "AsyncWith" : "With", std::move(children));
    }

    // ---- targets -------------------------------------------------------
    AstNode parse_single_target() {
        if (at_op("*")) {
            advance();
            return wrap("Starred", parse_bitwise_or());
        }
        return parse_bitwise_or();
    }

    // Comma-separated assignment targets that stop before `in`.
    AstNode parse_target_list() {
        const LexToken start = cur();
        std::vector<AstNode> elts;
        bool trailing_comma = false;
        elts.push_back(parse_single_target());
        while (accept_op(",")) {
            trailing_comma = true;
            if (at_kw("in") || at_op("=")) break;
            elts.push_back(parse_single_target());
            trailing_comma = false;
        }
        AstNode target = (elts.size() == 1 && !trailing_comma) ? std::move(elts.front())
                                                                : make("Tuple", std::move(elts));
        validate_store_target(target, start, true);
        return target;
    }

    // ---- expressions ---------------------------------------------------
    AstNode parse_star_expressions() {
        AstNode first = parse_star_expression();
        if (!at_op(",")) return first;
        std::vector<AstNode> elts;
        elts.push_back(std::move(first));
        while (accept_op(",")) {
            if (!at_expression_start()) break;
            elts.push_back(parse_star_expression());
        }
        return make("Tuple", std::move(elts));
    }

    AstNode parse_star_expression() {
        if (accept_op("*")) return wrap("Starred", parse_bitwise_or());
        return parse_expression();
    }

    AstNode parse_star_named_expression() {
        if (accept_op("*")) return wrap("Starred", parse_bitwise_or());
        return parse_named_expression();
    }

    AstNode parse_named_expression() {
        if (at_name() && is_op(peek_tok(), ":=")) {
            AstNode target = leaf("Name", cur().text);
            advance();
            advance();
            std::vector<AstNode> children;
            children.push_back(std::move(target));
            children.push_back(parse_expression());
            return make("NamedExpr", std::move(children));
        }
        const LexToken start = cur();
        AstNode expr = parse_expression();
        if (at_op(":="))
            fail_at(start, "cannot use assignment expressions with " + describe_invalid_target(expr));
        return expr;
    }

    AstNode parse_expression() {
        NestingGuard guard(*this);
        if (at_kw("lambda")) return parse_lambda();
        AstNode body = parse_disjunction();
        if (!accept_kw("if")) return body;
        AstNode test = parse_disjunction();
        if (!accept_kw("else")) fail("expected 'else' after 'if' expression");
        AstNode orelse = parse_expression();
        std::vector<AstNode> children;
        children.push_back(std::move(test));
        children.push_back(std::move(body));
        children.push_back(std::move(orelse));
        return make("IfExp", std::move(children));
    }

    AstNode parse_lambda() {
        expect_kw("lambda");
        AstNode args = parse_parameters(":", false);
        expect_op(":");
        std::vector<AstNode> children;
        if (!args.children.empty()) children.push_back(std::move(args));
        contexts_.push_back(FunctionContext{true, false, 0});
        children.push_back(parse_expression());
        contexts_.pop_back();
        return make("Lambda", std::move(children));
    }

    AstNode parse_bool_chain(std::string_view keyword, std::string kind, AstNode (Parser::*next)()) {
        AstNode first = (this->*next)();
        if (!at_kw(keyword)) return first;
        std::vector<AstNode> children;
        children.push_back(leaf(std::move(kind), std::string(keyword)));
        children.push_back(std::move(first));
        while (accept_kw(keyword)) children.push_back((this->*next)());
        return make("BoolOp", std::move(children));
    }

    AstNode parse_disjunction() { return parse_bool_chain("or", "Or", &Parser::parse_conjunction); }
    AstNode parse_conjunction() { return parse_bool_chain("and", "And", &Parser::parse_inversion); }

    AstNode parse_inversion() {
        if (accept_kw("not")) {
            NestingGuard guard(*this);
            std::vector<AstNode> children;
            children.push_back(leaf("Not", "not"));
            children.push_back(parse_inversion());
            return make("UnaryOp", std::move(children));
        }
        return parse_comparison();
    }

    bool read_compare_op(AstNode& op) {
        const LexToken& t = cur();
        static constexpr OpInfo kCmp[] = {{"==", "Eq"}, {"!=", "NotEq"}, {"<", "Lt"},
                                          {"<=", "LtE"}, {">", "Gt"},     {">=", "GtE"}};
        if (t.kind == LexKind::Op) {
            for (const auto& c : kCmp) {
                if (t.text == c.token) {
                    op = leaf(std::string(c.kind), t.text);
                    advance();
                    return true;
                }
            }
            return false;
        }
        if (is_kw(t, "in")) {
            op = leaf("In", "in");
            advance();
            return true;
        }
        if (is_kw(t, "not") && is_kw(peek_tok(), "in")) {
            op = leaf("NotIn", "not in");
            advance();
            advance();
            return true;
        }
        if (is_kw(t, "is")) {
            advance();
            if (accept_kw("not")) op = leaf("IsNot", "is not");
            else op = leaf("Is", "is");
            return true;
        }
        return false;
    }

    AstNode parse_comparison() {
        AstNode left = parse_bitwise_or();
        AstNode op;
        if (!read_compare_op(op)) return left;
        std::vector<AstNode> children;
        children.push_back(std::move(left));
        do {
            children.push_back(std::move(op));
            children.push_back(parse_bitwise_or());
        } while (read_compare_op(op));
        return make("Compare", std::move(children));
    }

    AstNode parse_binary_level(const OpInfo* ops, size_t n, AstNode (Parser::*next)()) {
        AstNode left = (this->*next)();
        while (true) {
            const OpInfo* match = nullptr;
            for (size_t i = 0; i < n; ++i)
                if (at_op(ops[i].token)) match = &ops[i];
            if (!match) return left;
            advance();
            std::vector<AstNode> children;
            children.push_back(std::move(left));
            children.push_back(leaf(std::string(match->kind), std::string(match->token)));
            children.push_back((this->*next)());
            left = make("BinOp", std::move(children));
        }
    }

    AstNode parse_bitwise_or() {
        static constexpr OpInfo ops[] = {{"|", "BitOr"}};
        return parse_binary_level(ops, 1, &Parser::parse_bitwise_xor);
    }
    AstNode parse_bitwise_xor() {
        static constexpr OpInfo ops[] = {{"^", "BitXor"}};
        return parse_binary_level(ops, 1, &Parser::parse_bitwise_and);
    }
    AstNode parse_bitwise_and() {
        static constexpr OpInfo ops[] = {{"&", "BitAnd"}};
        return parse_binary_level(ops, 1, &Parser::parse_shift);
    }
    AstNode parse_shift() {
        static constexpr OpInfo ops[] = {{"<<", "LShift"}, {">>", "RShift"}};
        return parse_binary_level(ops, 2, &Parser::parse_sum);
    }
    AstNode parse_sum() {
        static constexpr OpInfo ops[] = {{"+", "Add"}, {"-", "Sub"}};
        return parse_binary_level(ops, 2, &Parser::parse_term);
    }
    AstNode parse_term() {
        static constexpr OpInfo ops[] = {
            {"*", "Mult"}, {"/", "Div"}, {"//", "FloorDiv"}, {"%", "Mod"}, {"@", "MatMult"}};
        return parse_binary_level(ops, 5, &Parser::parse_factor);
    }

    AstNode parse_factor() {
        static constexpr OpInfo ops[] = {{"+", "UAdd"}, {"-", "USub"}, {"~", "Invert"}};
        for (const auto& op : ops) {
            if (at_op(op.token)) {
                NestingGuard guard(*this);
                advance();
                std::vector<AstNode> children;
                children.push_back(leaf(std::string(op.kind), std::string(op.token)));
                children.push_back(parse_factor());
                return make("UnaryOp", std::move(children));
            }
        }
        return parse_power();
    }

    AstNode parse_power() {
        AstNode base = parse_await_primary();
        if (!accept_op("**")) return base;
        std::vector<AstNode> children;
        children.push_back(std::move(base));
        children.push_back(leaf("Pow", "**"));
        children.push_back(parse_factor());
        return make("BinOp", std::move(children));
    }

    AstNode parse_await_primary() {
        if (at_kw("await")) {
            if (!ctx().in_function) fail("'await' outside function");
            if (!ctx().is_async) fail("'await' outside async function");
            advance();
            return wrap("Await", parse_primary());
        }
        return parse_primary();
    }

    AstNode parse_primary() {
        AstNode node = parse_atom();
        while (true) {
            if (accept_op(".")) {
                std::vector<AstNode> children;
                children.push_back(std::move(node));
                children.push_back(leaf("Id", expect_name()));
                node = make("Attribute", std::move(children));
            } else if (accept_op("(")) {
                NestingGuard guard(*this);
                auto [args, keywords] = parse_call_arguments();
                std::vector<AstNode> children;
                children.push_back(std::move(node));
                for (auto& a : args) children.push_back(std::move(a));
                for (auto& k : keywords) children.push_back(std::move(k));
                node = make("Call", std::move(children));
            } else if (accept_op("[")) {
                NestingGuard guard(*this);
                std::vector<AstNode> children;
                children.push_back(std::move(node));
                children.push_back(parse_slices());
                expect_op("]");
                node = make("Subscript", std::move(children));
            } else {
                return node;
            }
        }
    }

    // After '(' has been consumed; consumes the closing ')'.
    std::pair<std::vector<AstNode>, std::vector<AstNode>> parse_call_arguments() {
        std::vector<AstNode> args;
        std::vector<AstNode> keywords;
        std::set<std::string> keyword_names;
        bool seen_keyword = false;
        bool seen_kwunpack = false;
        while (!at_op(")")) {
            if (accept_op("*")) {
                if (seen_kwunpack) fail("iterable argument unpacking follows keyword argument unpacking");
                args.push_back(wrap("Starred", parse_expression()));
            } else if (accept_op("**")) {
                keywords.push_back(wrap("DoubleStarred", parse_expression()));
                seen_kwunpack = true;
            } else if (at_name() && is_op(peek_tok(), "=")) {
                const LexToken name_tok = cur();
                std::string name = cur().text;
                advance();
                advance();
                if (!keyword_names.insert(name).second)
                    fail_at(name_tok, "keyword argument repeated: " + name);
                std::vector<AstNode> parts;
                parts.push_back(leaf("Id", name));
                parts.push_back(parse_expression());
                keywords.push_back(make("keyword", std::move(parts)));
                seen_keyword = true;
            } else {
                const LexToken start = cur();
                AstNode expr = parse_named_expression();
                if (at_kw("for") || (at_kw("async") && is_kw(peek_tok(), "for"))) {
                    std::vector<AstNode> children;
                    children.push_back(std::move(expr));
                    parse_comprehensions(children);
                    AstNode genexp = make("GeneratorExp", std::move(children));
                    if (!args.empty() || !keywords.empty() || !at_op(")"))
                        fail_at(start, "Generator expression must be parenthesized");
                    args.push_back(std::move(genexp));
                    break;
                }
                if (at_op("=")) fail_at(start, "expression cannot contain assignment, perhaps you meant \"==\"?");
                if (seen_kwunpack) fail_at(start, "positional argument follows keyword argument unpacking");
                if (seen_keyword) fail_at(start, "positional argument follows keyword argument");
                args.push_back(std::move(expr));
            }
            if (!accept_op(",")) break;
        }
        expect_op(")");
        return {std::move(args), std::move(keywords)};
    }

    AstNode parse_slices() {
        AstNode first = parse_slice();
        if (!at_op(",")) return first;
        std::vector<AstNode> elts;
        elts.push_back(std::move(first));
        while (accept_op(",")) {
            if (at_op("]")) break;
            elts.push_back(parse_slice());
        }
        return make("Tuple", std::move(elts));
    }

    AstNode parse_slice() {
        std::vector<AstNode> parts;
        if (!at_op(":")) {
            AstNode lower = parse_named_expression();
            if (!at_op(":")) return lower;
            parts.push_back(wrap("Lower", std::move(lower)));
        }
        expect_op(":");
        if (!at_op(":") && !at_op(",") && !at_op("]")) parts.push_back(wrap("Upper", parse_expression()));
        if (accept_op(":")) {
            if (!at_op(",") && !at_op("]")) parts.push_back(wrap("Step", parse_expression()));
        }
        return make("Slice", std::move(parts));
    }

    void parse_comprehensions(std::vector<AstNode>& out) {
        while (at_kw("for") || (at_kw("async") && is_kw(peek_tok(), "for"))) {
            const bool is_async = accept_kw("async");
            expect_kw("for");
            std::vector<AstNode> parts;
            parts.push_back(parse_target_list());
            expect_kw("in");
            parts.push_back(parse_disjunction());
            while (accept_kw("if")) parts.push_back(wrap("If", parse_disjunction()));
            out.push_back(make(is_async ? "async_comprehension" : "comprehension", std::move(parts)));
        }
    }

    AstNode parse_yield_expression() {
        if (!ctx().in_function) fail("'yield' outside function");
        expect_kw("yield");
        if (accept_kw("from")) return wrap("YieldFrom", parse_expression());
        if (!at_expression_start()) return leaf("Yield", "yield");
        return wrap("Yield", parse_star_expressions());
    }

    AstNode parse_atom() {
        NestingGuard guard(*this);
        const LexToken& t = cur();
        switch (t.kind) {
            case LexKind::Name: {
                if (t.text == "True" || t.text == "False" || t.text == "None") {
                    AstNode c = leaf("Constant", t.text);
                    advance();
                    return c;
                }
                if (is_python_keyword(t.text)) fail("invalid syntax");
                AstNode n = leaf("Name", t.text);
                advance();
                return n;
            }
            case LexKind::Number: {
                AstNode c = leaf("Constant", detail::canonical_number(t.text));
                advance();
                return c;
            }
            case LexKind::String:
                return parse_strings();
            case LexKind::Op:
                if (t.text == "(") return parse_paren();
                if (t.text == "[") return parse_list();
                if (t.text == "{") return parse_brace();
                if (t.text == "...") {
                    advance();
                    return leaf("Constant", "Ellipsis");
                }
                break;
            default:
                break;
        }
        if (t.kind == LexKind::Indent) fail("unexpected indent");
        if (t.kind == LexKind::EndMarker || t.kind == LexKind::Dedent) fail("unexpected EOF while parsing");
        fail("invalid syntax");
    }

    AstNode parse_strings() {
        bool any_bytes = false;
        bool any_text = false;
        bool any_formatted = false;
        std::vector<detail::StringPiece> pieces;
        const LexToken first = cur();
        while (cur().kind == LexKind::String) {
            std::string error;
            auto piece = detail::decode_string_token(cur().text, error);
            if (!piece) fail(error);
            if (piece->bytes) any_bytes = true;
            else any_text = true;
            if (piece->formatted) any_formatted = true;
            pieces.push_back(std::move(*piece));
            advance();
        }
        if (any_bytes && any_text) fail_at(first, "cannot mix bytes and nonbytes literals");
        std::string value;
        for (const auto& piece : pieces) {
            if (!any_formatted || piece.formatted) {
                value += piece.value;
                continue;
            }
            for (char c : piece.value) {
                value += c;
                if (c == '{' || c == '}') value += c;
            }
        }
        if (any_formatted)
            return leaf("JoinedStr", "f" + detail::render_string_constant(canonical_fstring(value, first), false));
        return leaf("Constant", detail::render_string_constant(value, any_bytes));
    }

    // Rewrites every replacement field of an f-string body with the parsed
    // form of its expression, so quoting and spacing inside fields do not
    // affect equality. `{x=}` is expanded to the text "x=" plus `{x!r}`.
    std::string canonical_fstring(std::string_view text, const LexToken& where) const {
        std::string out;
        size_t k = 0;
        while (k < text.size()) {
            const char c = text[k];
            if ((c == '{' || c == '}') && k + 1 < text.size() && text[k + 1] == c) {
                out += text.substr(k, 2);
                k += 2;
                continue;
            }
            if (c == '}') fail_at(where, "f-string: single '}' is not allowed");
            if (c != '{') {
                out += c;
                ++k;
                continue;
            }
            k = canonical_field(text, k + 1, where, out);
        }
        return out;
    }

    // `start` is just past '{'. Appends the canonical field and returns the
    // index after its closing '}'.
    size_t canonical_field(std::string_view text, size_t start, const LexToken& where, std::string& out) const {
        int depth = 0;
        char quote = 0;
        size_t k = start;
        size_t expr_end = std::string_view::npos;
        bool self_doc = false;
        for (; k < text.size(); ++k) {
            const char c = text[k];
            if (quote) {
                if (c == '\\') ++k;
                else if (c == quote) quote = 0;
                continue;
            }
            if (c == '\'' || c == '"') {
                quote = c;
            } else if (c == '(' || c == '[' || c == '{') {
                ++depth;
            } else if ((c == ')' || c == ']' || c == '}') && depth > 0) {
                --depth;
            } else if (depth == 0) {
                if (c == '}' || c == ':') break;
                if (c == '!' && !(k + 1 < text.size() && text[k + 1] == '=')) break;
                if (c == '=' && k + 1 < text.size() && text[k + 1] != '=' && k > start &&
                    std::string_view("=!<>").find(text[k - 1]) == std::string_view::npos) {
                    size_t j = k + 1;
                    while (j < text.size() && (text[j] == ' ' || text[j] == '\t')) ++j;
                    if (j < text.size() && (text[j] == '}' || text[j] == '!' || text[j] == ':')) {
                        expr_end = k;
                        self_doc = true;
                        k = j;
                        break;
                    }
                }
            }
        }
        if (k >= text.size()) fail_at(where, "f-string: expecting '}'");
        if (expr_end == std::string_view::npos) expr_end = k;
        const std::string_view expr = text.substr(start, expr_end - start);
        if (expr.find_first_not_of(" \t\n") == std::string_view::npos)
            fail_at(where, "f-string: empty expression not allowed");

        const ParseResult sub = parse_ast("(" + std::string(expr) + "\n)");
        if (!parsed(sub)) fail_at(where, "f-string: " + std::get<ParseError>(sub).message);
        const AstNode& module = std::get<Ast>(sub);
        if (module.children.size() != 1 || module.children.front().kind != "Expr")
            fail_at(where, "f-string: invalid expression");

        std::string conversion;
        if (text[k] == '!') {
            ++k;
            while (k < text.size() && text[k] != ':' && text[k] != '}') conversion += text[k++];
            if (conversion != "r" && conversion != "s" && conversion != "a")
                fail_at(where, "f-string: invalid conversion character");
        }
        std::string spec;
        bool has_spec = false;
        if (k < text.size() && text[k] == ':') {
            has_spec = true;
            ++k;
            int nested = 0;
            const size_t spec_start = k;
            for (; k < text.size(); ++k) {
                if (text[k] == '{') ++nested;
                else if (text[k] == '}' && nested-- == 0) break;
            }
            spec = canonical_fstring(text.substr(spec_start, k - spec_start), where);
        }
        if (k >= text.size() || text[k] != '}') fail_at(where, "f-string: expecting '}'");
        if (self_doc) {
            out += std::string(expr) + "=";
            if (conversion.empty() && !has_spec) conversion = "r";
        }
        out += "{" + to_sexp(module.children.front().children.front());
        if (!conversion.empty()) out += "!" + conversion;
        if (has_spec) out += ":" + spec;
        out += "}";
        return k + 1;
    }

    AstNode parse_paren() {
        expect_op("(");
        if (accept_op(")")) return leaf("Tuple", "()");
        if (at_kw("yield")) {
            AstNode y = parse_yield_expression();
            expect_op(")");
            return y;
        }
        const LexToken start = cur();
        AstNode first = parse_star_named_expression();
        if (at_kw("for") || (at_kw("async") && is_kw(peek_tok(), "for"))) {
            if (first.kind == "Starred") fail_at(start, "iterable unpacking cannot be used in comprehension");
            std::vector<AstNode> children;
            children.push_back(std::move(first));
            parse_comprehensions(children);
            expect_op(")");
            return make("GeneratorExp", std::move(children));
        }
        if (accept_op(")")) {
            if (first.kind == "Starred") fail_at(start, "cannot use starred expression here");
            return first;
        }
        std::vector<AstNode> elts;
        elts.push_back(std::move(first));
        while (accept_op(",")) {
            if (at_op(")")) break;
            elts.push_back(parse_star_named_expression());
        }
        expect_op(")");
        return make("Tuple", std::move(elts));
    }

    AstNode parse_list() {
        expect_op("[");
        if (accept_op("]")) return leaf("List", "[]");
        const LexToken start = cur();
        AstNode first = parse_star_named_expression();
        if (at_kw("for") || (at_kw("async") && is_kw(peek_tok(), "for"))) {
            if (first.kind == "Starred") fail_at(start, "iterable unpacking cannot be used in comprehension");
            std::vector<AstNode> children;
            children.push_back(std::move(first));
            parse_comprehensions(children);
            expect_op("]");
            return make("ListComp", std::move(children));
        }
        std::vector<AstNode> elts;
        elts.push_back(std::move(first));
        while (accept_op(",")) {
            if (at_op("]")) break;
            elts.push_back(parse_star_named_expression());
        }
        expect_op("]");
        return make("List", std::move(elts));
    }

    AstNode parse_dict_item() {
        if (accept_op("**")) return wrap("DoubleStarred", parse_bitwise_or());
        std::vector<AstNode> pair;
        pair.push_back(parse_expression());
        expect_op(":");
        pair.push_back(parse_expression());
        return make("Pair", std::move(pair));
    }

    AstNode parse_brace() {
        expect_op("{");
        if (accept_op("}")) return leaf("Dict", "{}");
        const LexToken start = cur();
        if (at_op("**")) {
            std::vector<AstNode> items;
            items.push_back(parse_dict_item());
            return finish_dict(std::move(items));
        }
        AstNode first = parse_star_named_expression();
        if (at_op(":") && first.kind != "Starred") {
            advance();
            AstNode value = parse_expression();
            if (at_kw("for") || (at_kw("async") && is_kw(peek_tok(), "for"))) {
                std::vector<AstNode> children;
                children.push_back(std::move(first));
                children.push_back(std::move(value));
                parse_comprehensions(children);
                expect_op("}");
                return make("DictComp", std::move(children));
            }
            std::vector<AstNode> pair;
            pair.push_back(std::move(first));
            pair.push_back(std::move(value));
            std::vector<AstNode> items;
            items.push_back(make("Pair", std::move(pair)));
            return finish_dict(std::move(items));
        }
        if (at_kw("for") || (at_kw("async") && is_kw(peek_tok(), "for"))) {
            if (first.kind == "Starred") fail_at(start, "iterable unpacking cannot be used in comprehension");
            std::vector<AstNode> children;
            children.push_back(std::move(first));
            parse_comprehensions(children);
            expect_op("}");
            return make("SetComp", std::move(children));
        }
        std::vector<AstNode> elts;
        elts.push_back(std::move(first));
        while (accept_op(",")) {
            if (at_op("}")) break;
            elts.push_back(parse_star_named_expression());
        }
        expect_op("}");
        return make("Set", std::move(elts));
    }

    AstNode finish_dict(std::vector<AstNode> items) {
        while (accept_op(",")) {
            if (at_op("}")) break;
            items.push_back(parse_dict_item());
        }
        expect_op("}");
        return make("Dict", std::move(items));
    }
};

void append_structure(const AstNode& node, int depth, int max_depth, std::string& out) {
    if (node.is_leaf() || (max_depth > 0 && depth >= max_depth)) {
        out += node.kind;
        return;
    }
    out += '(';
    out += node.kind;
    for (const auto& child : node.children) {
        out += ' ';
        append_structure(child, depth + 1, max_depth, out);
    }
    out += ')';
}

void append_full(const AstNode& node, std::string& out) {
    if (node.is_leaf()) {
        out += node.kind;
        out += ':';
        out += node.text;
        return;
    }
    out += '(';
    out += node.kind;
    for (const auto& child : node.children) {
        out += ' ';
        append_full(child, out);
    }
    out += ')';
}

std::string normalize_newlines(std::string_view program) {
    std::string out;
    out.reserve(program.size());
    for (size_t i = 0; i < program.size(); ++i) {
        if (program[i] == '\r') {
            out += '\n';
            if (i + 1 < program.size() && program[i + 1] == '\n') ++i;
        } else {
            out += program[i];
        }
    }
    return out;
}

}  // namespace

size_t AstNode::size() const {
    size_t n = 1;
    for (const auto& child : children) n += child.size();
    return n;
}

ParseResult parse_ast(std::string_view program) {
    const std::string source = normalize_newlines(program);
    LexResult lexed = lex_python(source, /*tolerant=*/false);
    if (lexed.error) return ParseError{lexed.error->message, lexed.error->line, lexed.error->column};
    try {
        Parser parser(std::move(lexed.tokens));
        return parser.parse_module();
    } catch (const ParseFailure& failure) {
        return failure.error;
    }
}

bool ast_equal(std::string_view p, std::string_view q) {
    const ParseResult a = parse_ast(p);
    if (!parsed(a)) return false;
    const ParseResult b = parse_ast(q);
    if (!parsed(b)) return false;
    return std::get<Ast>(a) == std::get<Ast>(b);
}

std::string structure_sexp(const AstNode& node, int max_depth) {
    std::string out;
    append_structure(node, 0, max_depth, out);
    return out;
}

std::string to_sexp(const AstNode& node) {
    std::string out;
    append_full(node, out);
    return out;
}

}  // namespace stusim::analysis
