#include "stusim/serializer.hpp"

#include "stusim/common.hpp"
#include "stusim/errors.hpp"

namespace stusim {

using nlohmann::json;

namespace {
const std::string kFenceOpen = "```python\n";
const std::string kFenceClose = "\n```";
}  // namespace

const char* role_name(Role role) {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

Role role_from_name(const std::string& name) {
    if (name == "system") return Role::System;
    if (name == "user") return Role::User;
    if (name == "assistant") return Role::Assistant;
    throw DataError("unknown message role '" + name + "'");
}

const char* feedback_mode_name(FeedbackMode mode) {
    return mode == FeedbackMode::WithFeedback ? "with_feedback" : "code_only";
}

FeedbackMode feedback_mode_from_name(const std::string& name) {
    if (name == "with_feedback") return FeedbackMode::WithFeedback;
    if (name == "code_only") return FeedbackMode::CodeOnly;
    throw ConfigError("feedback mode must be with_feedback or code_only, got '" + name + "'");
}

std::size_t heuristic_token_count(std::string_view text) { return (text.size() + 3) / 4; }

std::string fence_code(const std::string& code) { return kFenceOpen + code + kFenceClose; }

std::string assignment_turn(const Assignment& assignment) {
    std::string content = assignment.description;
    if (assignment.context && !assignment.context->empty()) content += "\n\n" + *assignment.context;
    return content;
}

Dialogue serialize_prefix(const Assignment& assignment, const Trajectory& traj, int t, const SerializeMode& mode) {
    if (mode.system_prompt.empty()) throw SerializeError("system prompt is empty");
    if (t < 0 || t > traj.length()) throw SerializeError("prefix length out of range", t);
    Dialogue d;
    d.messages.push_back({Role::System, mode.system_prompt});
    d.messages.push_back({Role::User, assignment_turn(assignment)});
    for (int i = 0; i < t; ++i) {
        const Submission& s = traj.entries[static_cast<size_t>(i)];
        d.messages.push_back({Role::Assistant, fence_code(s.code)});
        if (mode.feedback == FeedbackMode::WithFeedback) {
            if (!s.logged_feedback || s.logged_feedback->empty())
                throw SerializeError("submission " + std::to_string(s.index) + " has no feedback text; regrade first",
                                     s.index);
            d.messages.push_back({Role::User, *s.logged_feedback});
        }
    }
    return d;
}

Dialogue serialize_trajectory(const Assignment& assignment, const Trajectory& traj, const SerializeMode& mode) {
    return serialize_prefix(assignment, traj, traj.length(), mode);
}

std::size_t dialogue_tokens(const Dialogue& dialogue, const TokenCounter& counter) {
    std::size_t total = 0;
    for (const auto& m : dialogue.messages) total += counter(m.content);
    return total;
}

Dialogue truncate_dialogue(const Dialogue& dialogue, std::size_t budget, const TokenCounter& counter) {
    const auto& msgs = dialogue.messages;
    if (msgs.size() < 2) throw SerializeError("dialogue lacks system and assignment turns");
    const std::size_t fixed = counter(msgs[0].content) + counter(msgs[1].content);
    if (fixed >= budget)
        throw CannotFit("budget " + std::to_string(budget) + " does not exceed the system and assignment turns (" +
                        std::to_string(fixed) + " tokens)");

    // Unit boundaries: each unit starts at an assistant turn.
    std::vector<std::size_t> starts;
    std::vector<std::size_t> unit_cost;
    for (std::size_t i = 2; i < msgs.size(); ++i) {
        if (msgs[i].role == Role::Assistant || starts.empty()) {
            starts.push_back(i);
            unit_cost.push_back(0);
        }
        unit_cost.back() += counter(msgs[i].content);
    }
    std::size_t total = fixed;
    for (auto c : unit_cost) total += c;
    std::size_t first = 0;
    while (total > budget && first < starts.size()) {
        if (first + 1 == starts.size())
            throw CannotFit("most recent submission alone needs " + std::to_string(fixed + unit_cost[first]) +
                            " tokens, budget is " + std::to_string(budget));
        total -= unit_cost[first];
        ++first;
    }
    if (first == 0) return dialogue;
    Dialogue out;
    out.messages.push_back(msgs[0]);
    out.messages.push_back(msgs[1]);
    out.messages.insert(out.messages.end(), msgs.begin() + static_cast<long>(starts[first]), msgs.end());
    return out;
}

ParsedDialogue parse_dialogue(const Dialogue& dialogue) {
    const auto& msgs = dialogue.messages;
    if (msgs.empty() || msgs[0].role != Role::System) throw SerializeError("message 0 must be the system turn", 0);
    if (msgs.size() < 2 || msgs[1].role != Role::User) throw SerializeError("message 1 must be the assignment turn", 1);
    ParsedDialogue out;
    out.assignment = msgs[1].content;
    for (std::size_t i = 2; i < msgs.size(); ++i) {
        const Message& m = msgs[i];
        if (m.role == Role::Assistant) {
            const std::string& c = m.content;
            std::string code;
            if (c.size() >= kFenceOpen.size() + kFenceClose.size() && c.compare(0, kFenceOpen.size(), kFenceOpen) == 0 &&
                c.compare(c.size() - kFenceClose.size(), kFenceClose.size(), kFenceClose) == 0)
                code = c.substr(kFenceOpen.size(), c.size() - kFenceOpen.size() - kFenceClose.size());
            else
                code = extract_code(c);
            out.turns.emplace_back(std::move(code), std::nullopt);
        } else if (m.role == Role::User && msgs[i - 1].role == Role::Assistant) {
            out.turns.back().second = m.content;
        } else {
            throw SerializeError("unexpected " + std::string(role_name(m.role)) + " turn at message " + std::to_string(i),
                                 static_cast<int>(i));
        }
    }
    return out;
}

std::string extract_code(std::string_view content) {
    if (trim(content).empty()) throw EmptyGeneration();
    const size_t open = content.find("```");
    if (open != std::string_view::npos) {
        const size_t line_end = content.find('\n', open);
        if (line_end != std::string_view::npos) {
            const size_t body = line_end + 1;
            size_t close = content.find("```", body);
            std::string_view inner = content.substr(body, close == std::string_view::npos ? std::string_view::npos
                                                                                          : close - body);
            if (!inner.empty() && inner.back() == '\n') inner.remove_suffix(1);
            if (!inner.empty() && inner.back() == '\r') inner.remove_suffix(1);
            if (!trim(inner).empty()) return std::string(inner);
        }
    }
    return trim(content);
}

json messages_to_json(const Dialogue& dialogue) {
    json arr = json::array();
    for (const auto& m : dialogue.messages) arr.push_back({{"role", role_name(m.role)}, {"content", m.content}});
    return arr;
}

Dialogue messages_from_json(const json& messages) {
    Dialogue d;
    try {
        for (const auto& m : messages)
            d.messages.push_back({role_from_name(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed messages array: ") + e.what());
    }
    return d;
}

}  // namespace stusim
