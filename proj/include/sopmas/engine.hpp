#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sopmas/action.hpp"
#include "sopmas/domain.hpp"
#include "sopmas/gateway.hpp"
#include "sopmas/pool.hpp"
#include "sopmas/prompts.hpp"
#include "sopmas/tools.hpp"

namespace sopmas {

struct EnginePolicy {
  int max_rounds = 30;
  bool parallel = false;
  std::uint64_t seed = 0;
  // Re-prompts after an unparseable or illegal action before the step is dropped.
  int action_retries = 2;
  // Tool calls an agent may chain inside one round before yielding.
  int max_tool_steps_per_turn = 8;
  std::size_t history_window = 10;

  void validate() const;
};

/// Runs the handler for `call` on behalf of `agent`. Handler exceptions are
/// folded into an error observation.
ToolResult invoke_tool(const ToolRegistry& registry, const AgentSpec& agent, const ToolCall& call);

class Execution;

class Supervisor {
 public:
  virtual ~Supervisor() = default;
  /// Called with exclusive access to the execution at every round barrier
  /// (round > 0) and after every tool call (round == 0).
  virtual void checkpoint(Execution& execution, int round) = 0;
  /// Upper bound on interventions; negative means unlimited.
  virtual int intervention_cap() const = 0;
};

/// Mutable state of one run, shared by the engine and its supervisor.
class Execution {
 public:
  Execution(OperatingProcedure op, const ToolRegistry& tools, EnginePolicy policy);

  const OperatingProcedure& op() const { return op_; }
  const OperatingProcedure& original_op() const { return original_op_; }
  const Query& query() const { return op_.bound_query; }
  const EnginePolicy& policy() const { return policy_; }
  const ToolRegistry& tools() const { return tools_; }
  MessagePool& pool() { return pool_; }
  const MessagePool& pool() const { return pool_; }

  int round() const { return round_; }
  std::uint32_t generation(const std::string& agent) const;
  /// Consecutive tool steps of each agent since it last sent a message.
  const std::map<std::string, int>& env_steps() const { return env_steps_; }
  const std::vector<Intervention>& interventions() const { return interventions_; }
  std::size_t actions() const { return actions_; }
  std::optional<Message> pending_final() const;

  /// Senders that have messaged the current incarnation of `agent`.
  std::set<std::string> prior_senders(const std::string& agent) const;

  // Supervisor handles.
  std::uint64_t post_guidance(const std::string& target, const std::string& content);
  struct ReplacementReport {
    PurgeReport purge;
    std::uint32_t old_generation = 0;
    std::optional<std::uint64_t> reposted;
  };
  /// Installs `spec` for `target` under a new generation, purges the old
  /// incarnation and re-posts its last task-bearing message to the new one.
  ReplacementReport replace_agent(const std::string& target, AgentSpec spec);
  void record_intervention(Intervention intervention);

  // Engine internals, public for the scheduler in engine.cpp.
  void seed_query();
  void set_round(int round) { round_ = round; }
  int bump_env_steps(const std::string& agent) { return ++env_steps_[agent]; }
  void reset_env_steps(const std::string& agent) { env_steps_[agent] = 0; }
  void remember(const std::string& agent, std::string entry);
  const std::deque<std::string>& history(const std::string& agent) const;
  void count_action() { ++actions_; }
  void set_pending_final(std::uint64_t id);
  void clear_pending_final_if_purged();

  std::recursive_mutex& mutex() { return mu_; }

 private:
  OperatingProcedure original_op_;
  OperatingProcedure op_;
  const ToolRegistry& tools_;
  EnginePolicy policy_;
  MessagePool pool_;
  std::map<std::string, std::uint32_t> generations_;
  std::map<std::string, int> env_steps_;
  std::map<std::string, std::deque<std::string>> history_;
  std::vector<Intervention> interventions_;
  std::optional<std::uint64_t> pending_final_;
  std::size_t actions_ = 0;
  int round_ = 0;
  std::recursive_mutex mu_;
};

class Engine {
 public:
  Engine(Gateway& gateway, const ToolRegistry& tools, PromptSet prompts = PromptSet::defaults());

  ExecutionTranscript run(const OperatingProcedure& op, const EnginePolicy& policy,
                          Supervisor* supervisor = nullptr);

  /// Renders the prompt an agent sees at its next step.
  ChatPrompt agent_prompt(const Execution& execution, const std::string& agent) const;

 private:
  void turn(Execution& execution, const std::string& agent, Supervisor* supervisor);

  Gateway& gateway_;
  const ToolRegistry& tools_;
  PromptSet prompts_;
};

}  // namespace sopmas
