#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stusim/corpus.hpp"

namespace stusim {

enum class Role { System, User, Assistant };

const char* role_name(Role role);
/// Throws DataError on an unknown role name.
Role role_from_name(const std::string& name);

struct Message {
    Role role;
    std::string content;
    bool operator==(const Message&) const = default;
};

struct Dialogue {
    std::vector<Message> messages;
    bool operator==(const Dialogue&) const = default;
};

enum class FeedbackMode { WithFeedback, CodeOnly };

const char* feedback_mode_name(FeedbackMode mode);
/// Accepts "with_feedback" and "code_only"; throws ConfigError otherwise.
FeedbackMode feedback_mode_from_name(const std::string& name);

inline constexpr const char* kDefaultSystemPrompt =
    "You are a first-year novice student learning programming in Python. Solve the given programming "
    "assignment(s). You will be interacting with a learning environment which will provide you with summative "
    "feedback.";

struct SerializeMode {
    FeedbackMode feedback = FeedbackMode::WithFeedback;
    std::string system_prompt = kDefaultSystemPrompt;
};

/// Token count of a text. Must return 0 for "" and be monotone under
/// concatenation.
using TokenCounter = std::function<std::size_t(std::string_view)>;

/// ceil(bytes / 4).
std::size_t heuristic_token_count(std::string_view text);

/// Wraps code in a ```python fence.
std::string fence_code(const std::string& code);

/// Content of the assignment turn: description, plus "\n\n" and the context
/// when one is set.
std::string assignment_turn(const Assignment& assignment);

/// System prompt, assignment turn, then one assistant turn per submission,
/// each followed by its logged feedback in with_feedback mode. Throws
/// SerializeError naming the submission index when feedback is missing.
Dialogue serialize_trajectory(const Assignment& assignment, const Trajectory& traj, const SerializeMode& mode);

/// Serialization of the first `t` submissions only.
Dialogue serialize_prefix(const Assignment& assignment, const Trajectory& traj, int t, const SerializeMode& mode);

std::size_t dialogue_tokens(const Dialogue& dialogue, const TokenCounter& counter);

/// Drops whole submission units (an assistant turn and the feedback turn
/// that answers it) from the oldest end until the token total fits.
/// The system and assignment turns always stay. Throws CannotFit when the
/// fixed prefix plus the most recent unit exceeds the budget.
Dialogue truncate_dialogue(const Dialogue& dialogue, std::size_t budget, const TokenCounter& counter);

struct ParsedDialogue {
    std::string assignment;
    std::vector<std::pair<std::string, std::optional<std::string>>> turns;  // (code, feedback)
};

/// Inverse of serialize_trajectory. Throws SerializeError carrying the index
/// of the first message that breaks the role pattern.
ParsedDialogue parse_dialogue(const Dialogue& dialogue);

/// Interior of the first fenced code block, or the whole text trimmed when
/// there is none. Throws EmptyGeneration for all-whitespace input.
std::string extract_code(std::string_view content);

nlohmann::json messages_to_json(const Dialogue& dialogue);
Dialogue messages_from_json(const nlohmann::json& messages);

}  // namespace stusim
