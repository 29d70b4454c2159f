#include "sopmas/engine.hpp"

#include <algorithm>
#include <future>

#include "sopmas/text.hpp"

namespace sopmas {

void EnginePolicy::validate() const {
  if (max_rounds < 1) throw Error("engine.max_rounds must be at least 1");
  if (action_retries < 0) throw Error("engine.action_retries must be non-negative");
  if (max_tool_steps_per_turn < 1) throw Error("engine.max_tool_steps_per_turn must be at least 1");
}

ToolResult invoke_tool(const ToolRegistry& registry, const AgentSpec& agent, const ToolCall& call) {
  const ToolInfo* info = registry.find(call.tool);
  if (!info) throw ActionError(ActionErrorCode::UnknownTool, "'" + call.tool + "' is not registered");
  if (std::find(agent.tools.begin(), agent.tools.end(), call.tool) == agent.tools.end()) {
    throw ActionError(ActionErrorCode::ToolNotGranted, "'" + agent.name + "' may not use '" + call.tool + "'");
  }
  try {
    return info->handler(call.arguments);
  } catch (const std::exception& e) {
    return ToolResult{std::string("tool error: ") + e.what(), false};
  }
}

// ---------------------------------------------------------------------------

Execution::Execution(OperatingProcedure op, const ToolRegistry& tools, EnginePolicy policy)
    : original_op_(op), op_(std::move(op)), tools_(tools), policy_(policy) {
  for (const auto& name : op_.sop.team) {
    generations_[name] = 0;
    env_steps_[name] = 0;
  }
}

std::uint32_t Execution::generation(const std::string& agent) const {
  auto it = generations_.find(agent);
  return it == generations_.end() ? 0 : it->second;
}

std::optional<Message> Execution::pending_final() const {
  if (!pending_final_) return std::nullopt;
  return pool_.find(*pending_final_);
}

std::set<std::string> Execution::prior_senders(const std::string& agent) const {
  std::set<std::string> out;
  const auto gen = generation(agent);
  for (const auto& m : pool_.messages()) {
    if (m.recipient == agent && m.recipient_generation == gen && generations_.contains(m.sender)) out.insert(m.sender);
  }
  return out;
}

void Execution::seed_query() {
  for (const auto& target : successors(op_.sop.structure, kUserNode)) {
    Message m;
    m.sender = kUserNode;
    m.recipient = target;
    m.recipient_generation = generation(target);
    m.round = round_;
    m.kind = MessageKind::task;
    m.content = op_.bound_query.text;
    pool_.post(std::move(m));
  }
}

std::uint64_t Execution::post_guidance(const std::string& target, const std::string& content) {
  Message m;
  m.sender = kWatcherNode;
  m.recipient = target;
  m.recipient_generation = generation(target);
  m.round = round_;
  m.kind = MessageKind::watcher_guidance;
  m.content = content;
  return pool_.post(std::move(m));
}

Execution::ReplacementReport Execution::replace_agent(const std::string& target, AgentSpec spec) {
  AgentSpec* slot = op_.sop.find_agent(target);
  if (!slot) throw UnknownNodeError(target);
  ReplacementReport report;
  report.old_generation = generation(target);

  std::optional<Message> last_task;
  for (const auto& m : pool_.messages()) {
    if (m.recipient == target && m.recipient_generation == report.old_generation && m.sender != target &&
        (m.kind == MessageKind::task || m.kind == MessageKind::feedback)) {
      last_task = m;
    }
  }

  report.purge = pool_.purge_agent(target, report.old_generation);
  generations_[target] = report.old_generation + 1;
  env_steps_[target] = 0;
  history_[target].clear();
  spec.name = target;
  *slot = std::move(spec);
  clear_pending_final_if_purged();

  if (last_task) {
    Message m = *last_task;
    m.sender_generation = generation(m.sender);
    m.recipient_generation = generation(target);
    m.round = round_;
    if (m.cause && !pool_.find(*m.cause)) m.cause.reset();
    report.reposted = pool_.post(std::move(m));
  } else {
    auto entry = successors(op_.sop.structure, kUserNode);
    if (std::find(entry.begin(), entry.end(), target) != entry.end()) {
      Message m;
      m.sender = kUserNode;
      m.recipient = target;
      m.recipient_generation = generation(target);
      m.round = round_;
      m.kind = MessageKind::task;
      m.content = op_.bound_query.text;
      report.reposted = pool_.post(std::move(m));
    }
  }
  return report;
}

void Execution::record_intervention(Intervention intervention) {
  intervention.seq = pool_.next_seq();
  interventions_.push_back(std::move(intervention));
}

void Execution::remember(const std::string& agent, std::string entry) {
  auto& h = history_[agent];
  h.push_back(std::move(entry));
  while (h.size() > policy_.history_window) h.pop_front();
}

const std::deque<std::string>& Execution::history(const std::string& agent) const {
  static const std::deque<std::string> empty;
  auto it = history_.find(agent);
  return it == history_.end() ? empty : it->second;
}

void Execution::set_pending_final(std::uint64_t id) {
  if (!pending_final_) pending_final_ = id;
}

void Execution::clear_pending_final_if_purged() {
  if (pending_final_ && !pool_.find(*pending_final_)) pending_final_.reset();
}

// ---------------------------------------------------------------------------

Engine::Engine(Gateway& gateway, const ToolRegistry& tools, PromptSet prompts)
    : gateway_(gateway), tools_(tools), prompts_(std::move(prompts)) {}

ChatPrompt Engine::agent_prompt(const Execution& ex, const std::string& agent) const {
  const AgentSpec* spec = ex.op().sop.find_agent(agent);
  if (!spec) throw UnknownNodeError(agent);
  const auto& structure = ex.op().sop.structure;

  std::string tools;
  for (const auto& t : spec->tools) {
    const ToolInfo* info = tools_.find(t);
    tools += "- " + t + ": " + (info ? info->usage : "unavailable") + "\n";
  }
  if (tools.empty()) tools = "(none)\n";

  std::vector<std::string> contacts;
  for (const auto& e : structure.edges) {
    if (e.from != agent) continue;
    if (e.to == kEndNode) {
      contacts.push_back("End (deliver with 'final:')" + std::string(e.condition ? " (if " + *e.condition + ")" : ""));
    } else {
      contacts.push_back(e.to + (e.condition ? " (if " + *e.condition + ", add 'outcome: " + *e.condition + "')" : ""));
    }
  }
  for (const auto& s : ex.prior_senders(agent)) {
    bool listed = std::any_of(structure.edges.begin(), structure.edges.end(),
                              [&](const Edge& e) { return e.from == agent && e.to == s; });
    if (!listed) contacts.push_back(s + " (reply upstream)");
  }
  std::string contact_list;
  for (const auto& c : contacts) contact_list += (contact_list.empty() ? "" : "; ") + c;
  if (contact_list.empty()) contact_list = "(nobody)";

  std::string inbox;
  for (const auto& m : ex.pool().inbox(agent, ex.generation(agent))) {
    inbox += "[#" + std::to_string(m.id) + " from " + m.sender + ", " + std::string(to_string(m.kind));
    if (m.outcome) inbox += ", outcome " + *m.outcome;
    inbox += "]\n" + m.content + "\n";
  }
  if (inbox.empty()) inbox = "(empty)\n";

  std::string history;
  for (const auto& h : ex.history(agent)) history += h + "\n";
  if (history.empty()) history = "(none)\n";

  return prompts_.render(gateway_, "agent",
                         {{"name", agent},
                          {"round", std::to_string(ex.round())},
                          {"responsibility", spec->responsibility},
                          {"instruction", spec->instruction},
                          {"tools", tools},
                          {"grammar", action_grammar()},
                          {"query", ex.query().text},
                          {"contacts", contact_list},
                          {"inbox", inbox},
                          {"history", history}});
}

void Engine::turn(Execution& ex, const std::string& agent, Supervisor* supervisor) {
  std::unique_lock lock(ex.mutex());
  const auto gen = ex.generation(agent);
  int tool_steps = 0;

  for (;;) {
    if (ex.generation(agent) != gen || !ex.pool().has_mail(agent, gen)) return;
    ChatPrompt prompt = agent_prompt(ex, agent);
    auto senders = ex.prior_senders(agent);
    const AgentSpec spec = *ex.op().sop.find_agent(agent);
    const OperatingProcedure op = ex.op();

    std::optional<AgentAction> action;
    std::string last_error;
    for (int attempt = 0; attempt <= ex.policy().action_retries; ++attempt) {
      lock.unlock();
      std::string text = gateway_.complete(prompt).text;
      lock.lock();
      try {
        AgentAction parsed = parse_action(text, op, agent, senders);
        if (auto* call = std::get_if<ToolCall>(&parsed.act)) {
          if (!tools_.contains(call->tool)) {
            throw ActionError(ActionErrorCode::UnknownTool, "'" + call->tool + "' is not registered");
          }
          if (std::find(spec.tools.begin(), spec.tools.end(), call->tool) == spec.tools.end()) {
            throw ActionError(ActionErrorCode::ToolNotGranted, "'" + agent + "' may not use '" + call->tool + "'");
          }
        }
        action = std::move(parsed);
        break;
      } catch (const ActionError& e) {
        last_error = e.what();
        append_repair(prompt, text, last_error);
      }
    }
    if (ex.generation(agent) != gen) return;
    if (!action) {
      ex.remember(agent, "invalid action dropped: " + last_error);
      return;
    }

    const auto inbox = ex.pool().inbox(agent, gen);
    std::optional<std::uint64_t> cause;
    std::vector<std::uint64_t> ids;
    for (const auto& m : inbox) {
      ids.push_back(m.id);
      cause = m.id;
    }

    if (auto* call = std::get_if<ToolCall>(&action->act)) {
      lock.unlock();
      ToolResult result = invoke_tool(tools_, spec, *call);
      lock.lock();
      if (ex.generation(agent) != gen) return;
      ToolCallRecord rec;
      rec.agent = agent;
      rec.generation = gen;
      rec.tool = call->tool;
      rec.arguments = call->arguments;
      rec.observation = result.observation;
      rec.step = ex.bump_env_steps(agent);
      rec.round = ex.round();
      rec.outcome = result.ok ? ToolOutcome::ok : ToolOutcome::error;
      ex.pool().record(rec);
      ex.count_action();
      ex.remember(agent, "tool " + call->tool + "(" + clip(call->arguments, 300) + ") -> " +
                             (result.ok ? "" : "[error] ") + clip(result.observation, 2000));
      if (supervisor) supervisor->checkpoint(ex, 0);
      if (++tool_steps >= ex.policy().max_tool_steps_per_turn) return;
      continue;
    }

    Message m;
    m.sender = agent;
    m.sender_generation = gen;
    m.round = ex.round();
    m.cause = cause;
    if (auto* send = std::get_if<SendMessage>(&action->act)) {
      m.recipient = send->recipient;
      m.recipient_generation = ex.generation(send->recipient);
      m.kind = send->kind;
      m.content = send->content;
      m.outcome = send->outcome;
      ex.remember(agent, "message to " + send->recipient + (send->outcome ? " (outcome " + *send->outcome + ")" : "") +
                             ": " + clip(send->content, 500));
    } else {
      const auto& final_answer = std::get<FinalAnswer>(action->act);
      m.recipient = kEndNode;
      m.kind = MessageKind::final_answer;
      m.content = final_answer.content;
      ex.remember(agent, "final answer: " + clip(final_answer.content, 500));
    }
    const bool is_final = m.kind == MessageKind::final_answer;
    auto id = ex.pool().post(std::move(m));
    ex.pool().consume(ids);
    ex.reset_env_steps(agent);
    ex.count_action();
    if (is_final) ex.set_pending_final(id);
    return;
  }
}

ExecutionTranscript Engine::run(const OperatingProcedure& op, const EnginePolicy& policy, Supervisor* supervisor) {
  policy.validate();
  const auto started = std::chrono::steady_clock::now();
  Execution ex(op, tools_, policy);

  ExecutionTranscript t;
  t.max_rounds = policy.max_rounds;
  t.intervention_cap = supervisor ? supervisor->intervention_cap() : 0;
  t.terminated_by = Termination::round_cap;

  ex.seed_query();
  try {
    for (int round = 1; round <= policy.max_rounds; ++round) {
      ex.set_round(round);
      std::vector<std::string> ready;
      for (const auto& name : ex.op().sop.team) {
        if (ex.pool().has_mail(name, ex.generation(name))) ready.push_back(name);
      }
      if (ready.empty()) {
        t.terminated_by = Termination::stalled;
        break;
      }
      if (policy.parallel && ready.size() > 1) {
        std::vector<std::future<void>> turns;
        for (const auto& name : ready) {
          turns.push_back(std::async(std::launch::async, [&, name] { turn(ex, name, supervisor); }));
        }
        std::exception_ptr failure;
        for (auto& f : turns) {
          try {
            f.get();
          } catch (...) {
            if (!failure) failure = std::current_exception();
          }
        }
        if (failure) std::rethrow_exception(failure);
      } else {
        for (const auto& name : ready) turn(ex, name, supervisor);
      }
      t.rounds_used = round;
      {
        std::lock_guard lock(ex.mutex());
        if (supervisor) supervisor->checkpoint(ex, round);
        ex.clear_pending_final_if_purged();
      }
      if (auto fin = ex.pending_final()) {
        t.terminated_by = Termination::final_answer;
        t.final_answer = fin->content;
        t.final_answer_by = fin->sender;
        break;
      }
    }
  } catch (const std::exception& e) {
    t.terminated_by = Termination::fatal_error;
    t.fatal_detail = e.what();
    t.rounds_used = std::max(t.rounds_used, std::min(ex.round(), policy.max_rounds));
  }

  ex.pool().close();
  t.op = ex.original_op();
  t.messages = ex.pool().messages();
  t.tool_calls = ex.pool().tool_records();
  t.interventions = ex.interventions();
  t.actions = ex.actions();
  t.wall_time = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
  return t;
}

}  // namespace sopmas
