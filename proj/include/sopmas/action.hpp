#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>

#include "sopmas/domain.hpp"

namespace sopmas {

struct ToolCall {
  std::string tool;
  std::string arguments;
  bool operator==(const ToolCall&) const = default;
};

struct SendMessage {
  std::string recipient;
  MessageKind kind = MessageKind::task;
  std::string content;
  std::optional<std::string> outcome;
  bool operator==(const SendMessage&) const = default;
};

struct FinalAnswer {
  std::string content;
  bool operator==(const FinalAnswer&) const = default;
};

struct AgentAction {
  std::string thought;
  std::variant<ToolCall, SendMessage, FinalAnswer> act;
  bool operator==(const AgentAction&) const = default;
};

enum class ActionErrorCode { MalformedAction, UnknownRecipient, RecipientNotReachable, UnknownTool, ToolNotGranted };

std::string_view to_string(ActionErrorCode code);

class ActionError : public Error {
 public:
  ActionError(ActionErrorCode code, const std::string& detail)
      : Error(std::string(to_string(code)) + ": " + detail), code_(code) {}
  ActionErrorCode code() const { return code_; }

 private:
  ActionErrorCode code_;
};

/// Parses one ReAct step:
///
///   Thought: <free text>
///   Action: tool: <name> | args: <payload>
///   Action: message: <recipient> | <content>   [outcome: <label>]
///   Action: final: <content>
///
/// `prior_senders` are the agents that have messaged `sender` so far; they
/// may be addressed upstream even without an edge.
AgentAction parse_action(std::string_view text, const OperatingProcedure& op, std::string_view sender,
                         const std::set<std::string>& prior_senders = {});

/// The legality rule applied by parse_action, exposed for transcript replay.
/// Returns the message kind the edge implies, or nullopt if the hop is illegal.
std::optional<MessageKind> classify_hop(const CommunicationStructure& structure, std::string_view sender,
                                        std::string_view recipient, const std::optional<std::string>& outcome,
                                        const std::set<std::string>& prior_senders, std::optional<std::string>* resolved_outcome = nullptr);

/// One-paragraph description of the action grammar for agent prompts.
std::string action_grammar();

}  // namespace sopmas
