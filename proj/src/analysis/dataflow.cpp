#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "stusim/analysis/codebleu.hpp"

namespace stusim::analysis {
namespace {

const AstNode* child_of_kind(const AstNode& node, std::string_view kind) {
    for (const auto& c : node.children)
        if (c.kind == kind) return &c;
    return nullptr;
}

bool is_comprehension_kind(const std::string& kind) {
    return kind == "ListComp" || kind == "SetComp" || kind == "DictComp" || kind == "GeneratorExp";
}

// Names bound by assignment targets (Name leaves under Tuple/List/Starred).
void collect_bound_names(const AstNode& target, std::vector<std::string>& out) {
    if (target.kind == "Name") {
        out.push_back(target.text);
    } else if (target.kind == "Tuple" || target.kind == "List" || target.kind == "Starred") {
        for (const auto& c : target.children) collect_bound_names(c, out);
    }
}

class Scope {
  public:
    std::vector<DataflowEdge>& edges;

    explicit Scope(std::vector<DataflowEdge>& out) : edges(out) {}

    void run_body(const AstNode& body) {
        if (body.is_leaf()) {
            if (body.kind != "Body" && body.kind != "Module") statement(body);
            return;
        }
        for (const auto& stmt : body.children) statement(stmt);
    }

    void define_params(const AstNode& arguments) {
        for (const auto& param : arguments.children)
            if (!param.children.empty()) define(param.children.front().text, {});
    }

  private:
    std::map<std::string, int> version_;

    std::string current(const std::string& name) const {
        return name + "#" + std::to_string(version_.at(name));
    }

    std::string define(const std::string& name, const std::vector<std::string>& sources) {
        auto it = version_.find(name);
        const int v = it == version_.end() ? 0 : it->second + 1;
        version_[name] = v;
        std::string node = name + "#" + std::to_string(v);
        for (const auto& s : sources) edges.push_back({s, node});
        return node;
    }

    void sink(const std::string& label, const std::vector<std::string>& sources) {
        for (const auto& s : sources) edges.push_back({s, label});
    }

    // Versioned names read by an expression, in source order. Names bound
    // locally inside lambdas and comprehensions are not uses of this scope.
    void uses(const AstNode& expr, std::vector<std::string>& out, const std::set<std::string>& local) {
        if (expr.kind == "Name") {
            if (!local.count(expr.text) && version_.count(expr.text)) out.push_back(current(expr.text));
            return;
        }
        if (expr.is_leaf()) return;
        if (expr.kind == "Attribute") {
            uses(expr.children.front(), out, local);
            return;
        }
        if (expr.kind == "keyword") {
            uses(expr.children.back(), out, local);
            return;
        }
        if (expr.kind == "Lambda") {
            std::set<std::string> inner = local;
            if (const AstNode* args = child_of_kind(expr, "arguments"))
                for (const auto& p : args->children)
                    if (!p.children.empty()) inner.insert(p.children.front().text);
            uses(expr.children.back(), out, inner);
            return;
        }
        if (is_comprehension_kind(expr.kind)) {
            std::set<std::string> inner = local;
            for (const auto& c : expr.children) {
                if (c.kind == "comprehension" || c.kind == "async_comprehension") {
                    std::vector<std::string> bound;
                    collect_bound_names(c.children.front(), bound);
                    inner.insert(bound.begin(), bound.end());
                }
            }
            for (const auto& c : expr.children) {
                if (c.kind == "comprehension" || c.kind == "async_comprehension") {
                    for (size_t i = 1; i < c.children.size(); ++i) uses(c.children[i], out, inner);
                } else {
                    uses(c, out, inner);
                }
            }
            return;
        }
        if (expr.kind == "NamedExpr") {
            std::vector<std::string> value_uses;
            uses(expr.children.back(), value_uses, local);
            out.insert(out.end(), value_uses.begin(), value_uses.end());
            out.push_back(define(expr.children.front().text, value_uses));
            return;
        }
        for (const auto& c : expr.children) uses(c, out, local);
    }

    std::vector<std::string> uses_of(const AstNode& expr) {
        std::vector<std::string> out;
        uses(expr, out, {});
        return out;
    }

    // Binds an assignment target from `sources`. Subscript and attribute
    // stores update the container variable, which then also depends on its
    // previous version and on the index expression.
    void bind_target(const AstNode& target, const std::vector<std::string>& sources) {
        if (target.kind == "Name") {
            define(target.text, sources);
        } else if (target.kind == "Tuple" || target.kind == "List" || target.kind == "Starred") {
            for (const auto& c : target.children) bind_target(c, sources);
        } else if (target.kind == "Subscript" || target.kind == "Attribute") {
            const AstNode* base = &target;
            std::vector<std::string> extra = sources;
            while (base->kind == "Subscript" || base->kind == "Attribute") {
                if (base->kind == "Subscript") {
                    auto idx = uses_of(base->children.back());
                    extra.insert(extra.end(), idx.begin(), idx.end());
                }
                base = &base->children.front();
            }
            if (base->kind == "Name" && version_.count(base->text)) {
                extra.push_back(current(base->text));
                define(base->text, extra);
            }
        }
    }

    void statement(const AstNode& s) {
        const std::string& k = s.kind;
        if (k == "Assign") {
            const auto src = uses_of(s.children.back());
            for (size_t i = 0; i + 1 < s.children.size(); ++i) bind_target(s.children[i], src);
        } else if (k == "AugAssign") {
            auto src = uses_of(s.children.back());
            const AstNode& target = s.children.front();
            if (target.kind == "Name") {
                if (version_.count(target.text)) src.push_back(current(target.text));
                define(target.text, src);
            } else {
                bind_target(target, src);
            }
        } else if (k == "AnnAssign") {
            if (s.children.size() == 3) bind_target(s.children.front(), uses_of(s.children.back()));
        } else if (k == "For" || k == "AsyncFor") {
            bind_target(s.children[0], uses_of(s.children[1]));
            for (size_t i = 2; i < s.children.size(); ++i) run_body(s.children[i]);
        } else if (k == "While" || k == "If") {
            sink("<" + k + ">", uses_of(s.children.front()));
            for (size_t i = 1; i < s.children.size(); ++i) {
                const AstNode& part = s.children[i];
                if (part.kind == "OrElse" && part.children.size() == 1 && part.children.front().kind == "If")
                    statement(part.children.front());
                else
                    run_body(part);
            }
        } else if (k == "With" || k == "AsyncWith") {
            for (const auto& item : s.children) {
                if (item.kind == "withitem") {
                    const auto src = uses_of(item.children.front());
                    if (item.children.size() > 1) bind_target(item.children.back(), src);
                    else sink("<With>", src);
                } else {
                    run_body(item);
                }
            }
        } else if (k == "Try") {
            for (const auto& part : s.children) {
                if (part.kind == "ExceptHandler") {
                    for (const auto& c : part.children) {
                        if (c.kind == "Id") define(c.text, {});
                        else if (c.kind == "Body") run_body(c);
                        else sink("<Except>", uses_of(c));
                    }
                } else {
                    run_body(part);
                }
            }
        } else if (k == "FunctionDef" || k == "AsyncFunctionDef") {
            define(s.children.front().text, {});
            Scope inner(edges);
            if (const AstNode* args = child_of_kind(s, "arguments")) inner.define_params(*args);
            if (const AstNode* body = child_of_kind(s, "Body")) inner.run_body(*body);
        } else if (k == "ClassDef") {
            define(s.children.front().text, {});
            Scope inner(edges);
            if (const AstNode* body = child_of_kind(s, "Body")) inner.run_body(*body);
        } else if (k == "Import" || k == "ImportFrom") {
            for (const auto& alias : s.children) {
                if (alias.kind != "alias") continue;
                std::string name = alias.children.back().text;
                if (alias.children.size() == 1) name = name.substr(0, name.find('.'));
                if (name != "*") define(name, {});
            }
        } else if (k == "Return" || k == "Expr" || k == "Assert" || k == "Raise" || k == "Delete") {
            sink("<" + k + ">", uses_of(s));
        }
    }
};

}  // namespace

std::vector<DataflowEdge> extract_dataflow(const Ast& tree) {
    std::vector<DataflowEdge> edges;
    Scope module(edges);
    module.run_body(tree);
    return edges;
}

double dataflow_match(std::string_view candidate, std::string_view reference) {
    const ParseResult ref = parse_ast(reference);
    const ParseResult cand = parse_ast(candidate);
    if (!parsed(ref) || !parsed(cand)) return 0.0;
    auto ref_edges = extract_dataflow(std::get<Ast>(ref));
    auto cand_edges = extract_dataflow(std::get<Ast>(cand));
    if (ref_edges.empty()) return cand_edges.empty() ? 1.0 : 0.0;

    std::map<DataflowEdge, int> available;
    for (const auto& e : cand_edges) ++available[e];
    size_t matched = 0;
    for (const auto& e : ref_edges) {
        auto it = available.find(e);
        if (it != available.end() && it->second > 0) {
            --it->second;
            ++matched;
        }
    }
    return static_cast<double>(matched) / static_cast<double>(ref_edges.size());
}

}  // namespace stusim::analysis
