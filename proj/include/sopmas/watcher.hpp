#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sopmas/engine.hpp"
#include "sopmas/repository.hpp"

namespace sopmas {

struct InterventionPolicy {
  std::optional<int> interval;  // overrides the team-size default
  int env_threshold = 5;
  int cap = 8;  // negative means unlimited
  bool enabled = true;
  bool use_pep = true;
  std::size_t pep_k = 2;
  std::size_t window = 30;
  int repair_budget = 2;

  /// Rounds between reviews: the override, else max(1, floor(team_size / 2)).
  int interval_for(std::size_t team_size) const;
  double frequency(std::size_t team_size) const { return 1.0 / interval_for(team_size); }
  void validate() const;
};

enum class FindingVerdict { normal, anomaly };
enum class AnomalyLevel { inter_agent, agent_environment };
enum class Severity { recoverable, critical };

std::string_view to_string(AnomalyLevel level);
std::string_view to_string(Severity severity);

struct Finding {
  FindingVerdict verdict = FindingVerdict::normal;
  AnomalyLevel level = AnomalyLevel::inter_agent;
  std::string agent;
  std::string description;
  Severity severity = Severity::recoverable;
  bool model_reviewed = false;

  bool anomaly() const { return verdict == FindingVerdict::anomaly; }
  std::string summary() const;
};

struct TriggerCounters {
  int round = 0;  // zero outside round barriers
  std::map<std::string, int> env_steps;
  std::size_t interventions_used = 0;
};

struct Trigger {
  bool round = false;
  std::vector<std::string> env_agents;
};

std::optional<Trigger> should_intervene(const TriggerCounters& counters, const InterventionPolicy& policy,
                                        std::size_t team_size);

struct ReviewWindow {
  std::vector<Message> messages;
  std::vector<ToolCallRecord> tool_calls;
};

/// Rule checks first (repeated identical messages; a tool-less final answer on
/// a tool-requiring task), then a model review. Model errors yield a normal
/// finding. `tool_history` is the full tool history of the run.
Finding review(Gateway& gateway, const PromptSet& prompts, const ReviewWindow& window, const OperatingProcedure& op,
               const std::vector<PepRecord>& pep_hits, const std::vector<ToolCallRecord>& tool_history);

/// Parses "VERDICT: / LEVEL: / AGENT: / SEVERITY: / DESCRIPTION:" lines.
Finding parse_finding(std::string_view reply, const OperatingProcedure& op);

class CapExceeded : public Error {
 public:
  CapExceeded() : Error("intervention cap reached") {}
};

class ReplacementFailed : public Error {
 public:
  using Error::Error;
};

struct ReviewEvent {
  int round = 0;
  bool round_trigger = false;
  std::vector<std::string> env_agents;
  Finding finding;
};

class Watcher : public Supervisor {
 public:
  Watcher(Gateway& gateway, InterventionPolicy policy, const Repository* experience = nullptr,
          PromptSet prompts = PromptSet::defaults());

  void checkpoint(Execution& execution, int round) override;
  int intervention_cap() const override { return policy_.cap; }

  /// Applies guidance (recoverable) or replacement (critical). Throws
  /// CapExceeded without touching the execution when the cap is reached.
  Intervention intervene(Execution& execution, const Finding& finding, const std::vector<PepRecord>& pep_hits);

  /// Generates a fresh specification for `agent`'s role, repairing invalid
  /// replies up to the policy's budget.
  AgentSpec replacement_spec(const OperatingProcedure& op, const std::set<std::string>& registry_tools,
                             const std::string& agent, const Finding& finding, const std::vector<PepRecord>& pep_hits,
                             int* repairs = nullptr);

  const std::vector<ReviewEvent>& reviews() const { return reviews_; }
  const InterventionPolicy& policy() const { return policy_; }

 private:
  std::vector<PepRecord> experiences_for(const Query& query) const;

  Gateway& gateway_;
  InterventionPolicy policy_;
  const Repository* experience_;
  PromptSet prompts_;
  std::vector<ReviewEvent> reviews_;
  std::uint64_t watermark_ = 0;
};

/// "- [agent] attribution -> strategy" lines for prompts.
std::string format_experiences(const std::vector<PepRecord>& records);

}  // namespace sopmas
