#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sopmas {

// Pseudo-nodes of every communication structure.
inline constexpr std::string_view kUserNode = "User";
inline constexpr std::string_view kEndNode = "End";
// Sender name used for supervision messages; never a team member.
inline constexpr std::string_view kWatcherNode = "Watcher";

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskKind { planning, qa, coding, other };

std::string_view to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view text);

/// Tool-rich task kinds, where answering without touching a tool is suspicious.
bool task_kind_requires_tools(TaskKind kind);

struct Query {
  std::string id;
  std::string text;
  TaskKind kind = TaskKind::other;

  bool operator==(const Query&) const = default;
};

struct NeedAnalysis {
  std::string text;

  bool empty() const { return text.empty(); }
  bool operator==(const NeedAnalysis&) const = default;
};

struct AgentSpec {
  std::string name;
  std::string responsibility;
  std::string instruction;
  std::vector<std::string> tools;

  bool operator==(const AgentSpec&) const = default;
};

struct Edge {
  std::string from;
  std::string to;
  // Opaque label matched verbatim against the outcome chosen by the sender.
  std::optional<std::string> condition;

  bool operator==(const Edge&) const = default;
};

struct CommunicationStructure {
  std::vector<Edge> edges;
  std::string description;

  bool has_node(std::string_view node) const;
  bool operator==(const CommunicationStructure&) const = default;
};

struct Sop {
  std::vector<std::string> team;
  std::vector<AgentSpec> agents;
  CommunicationStructure structure;

  const AgentSpec* find_agent(std::string_view name) const;
  AgentSpec* find_agent(std::string_view name);
  bool operator==(const Sop&) const = default;
};

struct SopCase {
  std::string id;
  Query query;
  NeedAnalysis need;
  Sop sop;
  std::vector<double> query_embedding;
  std::vector<double> need_embedding;
  std::string created_at;  // ISO-8601 UTC

  bool operator==(const SopCase&) const = default;
};

struct OperatingProcedure {
  Sop sop;
  Query bound_query;
  std::vector<std::string> provenance;

  bool operator==(const OperatingProcedure&) const = default;
};

enum class MessageKind { task, clarification, feedback, watcher_guidance, final_answer };

std::string_view to_string(MessageKind kind);
MessageKind message_kind_from_string(std::string_view text);

struct Message {
  std::uint64_t id = 0;
  std::string sender;
  std::string recipient;
  // Agent incarnation; bumped when the Watcher replaces an agent. Zero for pseudo-nodes.
  std::uint32_t sender_generation = 0;
  std::uint32_t recipient_generation = 0;
  int round = 0;
  MessageKind kind = MessageKind::task;
  std::string content;
  std::optional<std::uint64_t> cause;
  std::optional<std::string> outcome;
  std::uint64_t seq = 0;  // commit order across messages, tool records and interventions

  bool operator==(const Message&) const = default;
};

enum class ToolOutcome { ok, error };

struct ToolCallRecord {
  std::string agent;
  std::uint32_t generation = 0;
  std::string tool;
  std::string arguments;
  std::string observation;
  int step = 1;
  int round = 0;
  ToolOutcome outcome = ToolOutcome::ok;
  std::uint64_t seq = 0;

  bool operator==(const ToolCallRecord&) const = default;
};

struct AgentExperience {
  std::string agent;
  std::string error_attribution;
  std::string improvement_strategy;

  bool operator==(const AgentExperience&) const = default;
};

struct PepRecord {
  std::string id;
  Query query;
  std::string failure_cause;
  std::vector<AgentExperience> experiences;
  std::vector<double> query_embedding;

  bool operator==(const PepRecord&) const = default;
};

enum class InterventionKind { guidance, replacement };

struct Intervention {
  InterventionKind kind = InterventionKind::guidance;
  std::string target;
  std::uint32_t target_generation = 0;  // incarnation that was reviewed
  std::string guidance;                 // guidance payload
  std::optional<AgentSpec> replacement;  // replacement payload
  int round = 0;
  std::vector<std::string> pep_refs;
  std::string finding;
  int repairs = 0;
  std::size_t messages_purged = 0;
  std::size_t tool_records_purged = 0;
  std::uint64_t seq = 0;

  bool operator==(const Intervention&) const = default;
};

enum class Termination { final_answer, round_cap, stalled, fatal_error };

std::string_view to_string(Termination t);
Termination termination_from_string(std::string_view text);

struct ExecutionTranscript {
  OperatingProcedure op;
  std::vector<Message> messages;
  std::vector<ToolCallRecord> tool_calls;
  std::vector<Intervention> interventions;
  std::optional<std::string> final_answer;
  std::string final_answer_by;
  int rounds_used = 0;
  int max_rounds = 0;
  int intervention_cap = 0;
  std::size_t actions = 0;
  std::chrono::milliseconds wall_time{0};
  Termination terminated_by = Termination::round_cap;
  std::string fatal_detail;
};

enum class Evaluator { checker, model_judge };

struct Verdict {
  bool passed = false;
  std::string detail;
  Evaluator evaluator = Evaluator::checker;
};

// ---------------------------------------------------------------------------
// Structural validation

enum class DiagnosticKind {
  EmptyTeam,
  EmptyAgentName,
  DuplicateAgent,
  TeamMismatch,
  UnknownTool,
  UnknownEndpoint,
  NoEntryEdge,
  NoExitEdge,
  EdgeIntoUser,
  EdgeOutOfEnd,
  UnconditionedCycle,
};

std::string_view to_string(DiagnosticKind kind);

struct Diagnostic {
  DiagnosticKind kind;
  std::string element;              // offending agent, tool or edge
  std::vector<std::string> nodes;   // cycle members, in team order
  std::string message;

  bool operator==(const Diagnostic&) const = default;
};

/// Checks every SOP and communication-structure invariant. Returns an empty
/// list iff the SOP is well formed and every tool it references is in
/// `registry_tools`.
std::vector<Diagnostic> validate_sop(const Sop& sop, const std::set<std::string>& registry_tools);

std::string format_diagnostics(const std::vector<Diagnostic>& diagnostics);

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Diagnostic> diagnostics)
      : Error("validation failed:\n" + format_diagnostics(diagnostics)), diagnostics_(std::move(diagnostics)) {}
  const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<Diagnostic> diagnostics_;
};

class UnknownNodeError : public Error {
 public:
  explicit UnknownNodeError(std::string node)
      : Error("unknown node: " + node), node_(std::move(node)) {}
  const std::string& node() const { return node_; }

 private:
  std::string node_;
};

/// Targets of edges leaving `node`, in edge order without duplicates.
/// Unconditioned edges always match; a conditioned edge matches only when
/// `outcome` equals its label.
std::vector<std::string> successors(const CommunicationStructure& structure, std::string_view node,
                                    const std::optional<std::string>& outcome = std::nullopt);

/// Parses the textual edge notation used by SOP fixtures, e.g.
/// "1. User -> A; 2. A -> B (if errors) | End (if correct)."
/// followed by an optional "**Description:**" section.
CommunicationStructure parse_structure_text(std::string_view text);

/// Inverse of parse_structure_text for display.
std::string render_edge(const Edge& edge);

OperatingProcedure bind_sop(const Sop& sop, const Query& query, std::vector<std::string> provenance);

}  // namespace sopmas
