#include "sopmas/action.hpp"

#include <algorithm>

#include "sopmas/text.hpp"

namespace sopmas {

std::string_view to_string(ActionErrorCode code) {
  switch (code) {
    case ActionErrorCode::MalformedAction: return "MalformedAction";
    case ActionErrorCode::UnknownRecipient: return "UnknownRecipient";
    case ActionErrorCode::RecipientNotReachable: return "RecipientNotReachable";
    case ActionErrorCode::UnknownTool: return "UnknownTool";
    case ActionErrorCode::ToolNotGranted: return "ToolNotGranted";
  }
  return "ActionError";
}

std::optional<MessageKind> classify_hop(const CommunicationStructure& structure, std::string_view sender,
                                        std::string_view recipient, const std::optional<std::string>& outcome,
                                        const std::set<std::string>& prior_senders,
                                        std::optional<std::string>* resolved_outcome) {
  const Edge* plain = nullptr;
  const Edge* labelled = nullptr;
  const Edge* first_labelled = nullptr;
  for (const auto& e : structure.edges) {
    if (e.from != sender || e.to != recipient) continue;
    if (!e.condition) {
      if (!plain) plain = &e;
    } else {
      if (!first_labelled) first_labelled = &e;
      if (outcome && *e.condition == *outcome && !labelled) labelled = &e;
    }
  }
  const bool upstream = prior_senders.contains(std::string(recipient));
  std::optional<std::string> resolved;
  std::optional<MessageKind> kind;
  if (labelled) {
    resolved = labelled->condition;
    kind = upstream ? MessageKind::feedback : MessageKind::task;
  } else if (plain) {
    kind = MessageKind::task;
  } else if (first_labelled && !outcome) {
    resolved = first_labelled->condition;
    kind = upstream ? MessageKind::feedback : MessageKind::task;
  } else if (!first_labelled && upstream) {
    kind = MessageKind::clarification;
  }
  if (kind && resolved_outcome) *resolved_outcome = resolved;
  return kind;
}

namespace {

std::vector<std::size_t> find_all_icase(std::string_view text, std::string_view needle) {
  std::string lower = to_lower(text);
  std::string n = to_lower(needle);
  std::vector<std::size_t> out;
  for (auto pos = lower.find(n); pos != std::string::npos; pos = lower.find(n, pos + n.size())) out.push_back(pos);
  return out;
}

bool is_team_member(const OperatingProcedure& op, std::string_view name) {
  return std::find(op.sop.team.begin(), op.sop.team.end(), name) != op.sop.team.end();
}

bool tool_in_op(const OperatingProcedure& op, const std::string& tool) {
  for (const auto& a : op.sop.agents) {
    if (std::find(a.tools.begin(), a.tools.end(), tool) != a.tools.end()) return true;
  }
  return false;
}

[[noreturn]] void fail(ActionErrorCode code, const std::string& detail) { throw ActionError(code, detail); }

}  // namespace

AgentAction parse_action(std::string_view text, const OperatingProcedure& op, std::string_view sender,
                         const std::set<std::string>& prior_senders) {
  auto marks = find_all_icase(text, "Action:");
  if (marks.empty()) fail(ActionErrorCode::MalformedAction, "no 'Action:' found");
  if (marks.size() > 1) {
    fail(ActionErrorCode::MalformedAction, "expected exactly one 'Action:', found " + std::to_string(marks.size()));
  }

  AgentAction action;
  action.thought = trim(text.substr(0, marks[0]));
  if (starts_with_icase(action.thought, "Thought:")) action.thought = trim(std::string_view(action.thought).substr(8));
  std::string body = trim(text.substr(marks[0] + 7));

  if (starts_with_icase(body, "tool:")) {
    std::string_view rest = std::string_view(body).substr(5);
    auto bar = rest.find('|');
    ToolCall call;
    call.tool = trim(rest.substr(0, bar));
    if (bar != std::string_view::npos) {
      call.arguments = trim(rest.substr(bar + 1));
      if (starts_with_icase(call.arguments, "args:")) call.arguments = trim(std::string_view(call.arguments).substr(5));
    }
    if (call.tool.empty()) fail(ActionErrorCode::MalformedAction, "tool name is empty");
    if (!tool_in_op(op, call.tool)) fail(ActionErrorCode::UnknownTool, "'" + call.tool + "' is not a tool of this team");
    action.act = std::move(call);
    return action;
  }

  if (starts_with_icase(body, "message:")) {
    std::string_view rest = std::string_view(body).substr(8);
    auto bar = rest.find('|');
    if (bar == std::string_view::npos) fail(ActionErrorCode::MalformedAction, "message needs '<recipient> | <content>'");
    SendMessage msg;
    msg.recipient = trim(rest.substr(0, bar));
    std::string content;
    for (const auto& line : split(rest.substr(bar + 1), '\n')) {
      if (starts_with_icase(trim(line), "outcome:")) {
        msg.outcome = trim(std::string_view(trim(line)).substr(8));
        if (msg.outcome->empty()) msg.outcome.reset();
        continue;
      }
      content += line;
      content += '\n';
    }
    msg.content = trim(content);
    if (msg.recipient.empty()) fail(ActionErrorCode::MalformedAction, "recipient is empty");
    if (msg.content.empty()) fail(ActionErrorCode::MalformedAction, "message content is empty");
    if (msg.recipient == kUserNode || msg.recipient == kEndNode) {
      fail(ActionErrorCode::RecipientNotReachable,
           "'" + msg.recipient + "' cannot be messaged; use 'final:' to deliver the answer");
    }
    if (!is_team_member(op, msg.recipient)) {
      fail(ActionErrorCode::UnknownRecipient, "'" + msg.recipient + "' is not a team member");
    }
    std::optional<std::string> resolved;
    auto kind = classify_hop(op.sop.structure, sender, msg.recipient, msg.outcome, prior_senders, &resolved);
    if (!kind) {
      std::string why = "'" + msg.recipient + "' is neither a successor of '" + std::string(sender) +
                        "' nor an agent that messaged it";
      if (msg.outcome) why += " (outcome '" + *msg.outcome + "')";
      fail(ActionErrorCode::RecipientNotReachable, why);
    }
    msg.kind = *kind;
    msg.outcome = resolved;
    action.act = std::move(msg);
    return action;
  }

  if (starts_with_icase(body, "final:")) {
    FinalAnswer answer{trim(std::string_view(body).substr(6))};
    if (answer.content.empty()) fail(ActionErrorCode::MalformedAction, "final answer is empty");
    bool reaches_end = std::any_of(op.sop.structure.edges.begin(), op.sop.structure.edges.end(),
                                   [&](const Edge& e) { return e.from == sender && e.to == kEndNode; });
    if (!reaches_end) {
      fail(ActionErrorCode::RecipientNotReachable, "'" + std::string(sender) + "' has no edge to End");
    }
    action.act = std::move(answer);
    return action;
  }

  fail(ActionErrorCode::MalformedAction, "action must start with 'tool:', 'message:' or 'final:'");
}

std::string action_grammar() {
  return "Reply with a short reasoning step followed by exactly one action, in this format:\n"
         "Thought: <your reasoning>\n"
         "Action: <one of>\n"
         "  tool: <tool name> | args: <arguments>\n"
         "  message: <recipient> | <content>\n"
         "  final: <final answer>\n"
         "A message to a recipient reached through a conditional edge may add a line 'outcome: <condition>'.\n"
         "Write 'Action:' once only.";
}

}  // namespace sopmas
