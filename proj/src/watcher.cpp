#include "sopmas/watcher.hpp"

#include <algorithm>
#include <iostream>

#include "sopmas/serialize.hpp"
#include "sopmas/text.hpp"

namespace sopmas {

int InterventionPolicy::interval_for(std::size_t team_size) const {
  if (interval) return *interval;
  return std::max(1, static_cast<int>(team_size / 2));
}

void InterventionPolicy::validate() const {
  if (interval && *interval < 1) throw Error("watcher.interval must be at least 1");
  if (env_threshold < 1) throw Error("watcher.env_threshold must be at least 1");
  if (repair_budget < 0) throw Error("watcher.repair_budget must be non-negative");
}

std::string_view to_string(AnomalyLevel level) {
  return level == AnomalyLevel::inter_agent ? "inter_agent" : "agent_environment";
}

std::string_view to_string(Severity severity) {
  return severity == Severity::recoverable ? "recoverable" : "critical";
}

std::string Finding::summary() const {
  if (!anomaly()) return "normal";
  return std::string(to_string(level)) + "/" + std::string(to_string(severity)) + " " + agent + ": " + description;
}

std::optional<Trigger> should_intervene(const TriggerCounters& counters, const InterventionPolicy& policy,
                                        std::size_t team_size) {
  if (policy.cap >= 0 && counters.interventions_used >= static_cast<std::size_t>(policy.cap)) return std::nullopt;
  Trigger t;
  const int m = policy.interval_for(team_size);
  t.round = counters.round > 0 && counters.round % m == 0;
  for (const auto& [agent, steps] : counters.env_steps) {
    if (steps >= policy.env_threshold) t.env_agents.push_back(agent);
  }
  if (!t.round && t.env_agents.empty()) return std::nullopt;
  return t;
}

std::string format_experiences(const std::vector<PepRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    for (const auto& e : r.experiences) {
      out += "- [" + e.agent + "] " + e.error_attribution + " -> " + e.improvement_strategy + " (" + r.id + ")\n";
    }
  }
  return out.empty() ? "(none)" : out;
}

namespace {

std::string render_window(const ReviewWindow& w) {
  std::vector<std::pair<std::uint64_t, std::string>> lines;
  for (const auto& m : w.messages) {
    std::string line = "[#" + std::to_string(m.id) + " round " + std::to_string(m.round) + "] " + m.sender + " -> " +
                       m.recipient + " (" + std::string(to_string(m.kind));
    if (m.outcome) line += ", outcome " + *m.outcome;
    line += "):\n" + clip(m.content, 1500);
    lines.emplace_back(m.seq, std::move(line));
  }
  for (const auto& r : w.tool_calls) {
    lines.emplace_back(r.seq, "[tool round " + std::to_string(r.round) + "] " + r.agent + " called " + r.tool + "(" +
                                  clip(r.arguments, 300) + ") step " + std::to_string(r.step) + " -> " +
                                  (r.outcome == ToolOutcome::ok ? "" : "[error] ") + clip(r.observation, 800));
  }
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& [_, l] : lines) out += l + "\n";
  return out.empty() ? "(no activity)" : out;
}

bool is_member(const OperatingProcedure& op, const std::string& name) {
  return std::find(op.sop.team.begin(), op.sop.team.end(), name) != op.sop.team.end();
}

}  // namespace

Finding parse_finding(std::string_view reply, const OperatingProcedure& op) {
  std::map<std::string, std::string> fields;
  for (const auto& raw : split(reply, '\n')) {
    std::string line = trim(raw);
    auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = to_lower(trim(std::string_view(line).substr(0, colon)));
    std::erase(key, '*');
    std::string value = trim(std::string_view(line).substr(colon + 1));
    while (!value.empty() && (value.front() == '*' || value.front() == ' ')) value.erase(value.begin());
    while (!value.empty() && (value.back() == '*' || value.back() == ' ')) value.pop_back();
    fields.try_emplace(trim(key), value);
  }
  Finding f;
  std::string verdict = to_lower(fields["verdict"]);
  if (verdict.find("anomaly") == std::string::npos) return f;
  std::string agent = fields["agent"];
  if (!is_member(op, agent)) return f;
  f.verdict = FindingVerdict::anomaly;
  f.agent = agent;
  f.level = to_lower(fields["level"]).find("env") != std::string::npos ? AnomalyLevel::agent_environment
                                                                       : AnomalyLevel::inter_agent;
  f.severity = to_lower(fields["severity"]).find("critical") != std::string::npos ? Severity::critical
                                                                                 : Severity::recoverable;
  f.description = fields["description"].empty() ? "anomaly reported by reviewer" : fields["description"];
  return f;
}

Finding review(Gateway& gateway, const PromptSet& prompts, const ReviewWindow& window, const OperatingProcedure& op,
               const std::vector<PepRecord>& pep_hits, const std::vector<ToolCallRecord>& tool_history) {
  std::map<std::pair<std::string, std::string>, int> repeats;
  for (const auto& m : window.messages) {
    if (!is_member(op, m.sender)) continue;
    if (++repeats[{m.sender, m.content}] >= 3) {
      Finding f;
      f.verdict = FindingVerdict::anomaly;
      f.level = AnomalyLevel::inter_agent;
      f.severity = Severity::recoverable;
      f.agent = m.sender;
      f.description = m.sender + " repeated the same message " + std::to_string(repeats[{m.sender, m.content}]) +
                      " times without progress";
      return f;
    }
  }

  if (task_kind_requires_tools(op.bound_query.kind)) {
    for (const auto& m : window.messages) {
      if (m.kind != MessageKind::final_answer) continue;
      const AgentSpec* spec = op.sop.find_agent(m.sender);
      if (!spec || spec->tools.empty()) continue;
      bool used = std::any_of(tool_history.begin(), tool_history.end(), [&](const ToolCallRecord& r) {
        return r.agent == m.sender && r.generation == m.sender_generation;
      });
      if (!used) {
        Finding f;
        f.verdict = FindingVerdict::anomaly;
        f.level = AnomalyLevel::agent_environment;
        f.severity = Severity::critical;
        f.agent = m.sender;
        f.description = m.sender + " gave a final answer without invoking any of its tools";
        return f;
      }
    }
  }

  ChatPrompt prompt = prompts.render(gateway, "watcher_review",
                                     {{"query", op.bound_query.text},
                                      {"op", canonical_dump(to_json(op.sop))},
                                      {"window", render_window(window)},
                                      {"experiences", format_experiences(pep_hits)}});
  try {
    Finding f = parse_finding(gateway.complete(prompt).text, op);
    f.model_reviewed = true;
    return f;
  } catch (const ModelError& e) {
    std::cerr << "watcher: review failed open: " << e.what() << "\n";
    Finding f;
    f.model_reviewed = true;
    return f;
  }
}

// ---------------------------------------------------------------------------

Watcher::Watcher(Gateway& gateway, InterventionPolicy policy, const Repository* experience, PromptSet prompts)
    : gateway_(gateway), policy_(std::move(policy)), experience_(experience), prompts_(std::move(prompts)) {
  policy_.validate();
}

std::vector<PepRecord> Watcher::experiences_for(const Query& query) const {
  std::vector<PepRecord> out;
  if (!policy_.use_pep || !experience_) return out;
  for (auto& hit : experience_->pep_lookup(query, policy_.pep_k)) out.push_back(std::move(hit.record));
  return out;
}

void Watcher::checkpoint(Execution& ex, int round) {
  if (!policy_.enabled) return;
  TriggerCounters counters{round, ex.env_steps(), ex.interventions().size()};
  auto trigger = should_intervene(counters, policy_, ex.op().sop.team.size());
  if (!trigger) return;

  ReviewWindow window;
  auto tool_history = ex.pool().tool_records();
  auto messages = ex.pool().messages();
  for (const auto& m : messages) {
    if (m.seq > watermark_) window.messages.push_back(m);
  }
  for (const auto& r : tool_history) {
    if (r.seq > watermark_) window.tool_calls.push_back(r);
  }
  // Keep only the most recent entries.
  while (window.messages.size() + window.tool_calls.size() > policy_.window) {
    bool drop_message = !window.messages.empty() &&
                        (window.tool_calls.empty() || window.messages.front().seq < window.tool_calls.front().seq);
    if (drop_message) {
      window.messages.erase(window.messages.begin());
    } else {
      window.tool_calls.erase(window.tool_calls.begin());
    }
  }

  auto pep_hits = experiences_for(ex.query());
  Finding finding = review(gateway_, prompts_, window, ex.op(), pep_hits, tool_history);
  reviews_.push_back(ReviewEvent{ex.round(), trigger->round, trigger->env_agents, finding});
  if (!finding.anomaly()) return;
  intervene(ex, finding, pep_hits);
}

Intervention Watcher::intervene(Execution& ex, const Finding& finding, const std::vector<PepRecord>& pep_hits) {
  if (policy_.cap >= 0 && ex.interventions().size() >= static_cast<std::size_t>(policy_.cap)) throw CapExceeded();
  if (!finding.anomaly()) throw Error("intervene called with a normal finding");
  if (!ex.op().sop.find_agent(finding.agent)) throw UnknownNodeError(finding.agent);

  Intervention iv;
  iv.target = finding.agent;
  iv.target_generation = ex.generation(finding.agent);
  iv.round = ex.round();
  iv.finding = finding.summary();

  if (finding.severity == Severity::recoverable) {
    std::vector<std::string> strategies;
    for (const auto& r : pep_hits) {
      bool used = false;
      for (const auto& e : r.experiences) {
        if (e.agent == finding.agent) {
          strategies.push_back(e.improvement_strategy);
          used = true;
        }
      }
      if (used) iv.pep_refs.push_back(r.id);
    }
    if (strategies.empty()) {
      for (const auto& r : pep_hits) {
        for (const auto& e : r.experiences) strategies.push_back(e.improvement_strategy);
        if (!r.experiences.empty()) iv.pep_refs.push_back(r.id);
      }
    }
    iv.kind = InterventionKind::guidance;
    iv.guidance = "The Watcher noticed a problem: " + finding.description + "\nCorrect it in your next step.";
    if (!strategies.empty()) {
      iv.guidance += "\nStrategies that helped on similar tasks:";
      for (const auto& s : strategies) iv.guidance += "\n- " + s;
    }
    ex.post_guidance(finding.agent, iv.guidance);
  } else {
    for (const auto& r : pep_hits) iv.pep_refs.push_back(r.id);
    AgentSpec spec = replacement_spec(ex.op(), ex.tools().names(), finding.agent, finding, pep_hits, &iv.repairs);
    auto report = ex.replace_agent(finding.agent, spec);
    iv.kind = InterventionKind::replacement;
    iv.replacement = std::move(spec);
    iv.messages_purged = report.purge.messages_removed;
    iv.tool_records_purged = report.purge.tool_records_removed;
  }
  ex.record_intervention(iv);
  watermark_ = iv.seq;
  return ex.interventions().back();
}

AgentSpec Watcher::replacement_spec(const OperatingProcedure& op, const std::set<std::string>& registry_tools,
                                    const std::string& agent, const Finding& finding,
                                    const std::vector<PepRecord>& pep_hits, int* repairs) {
  const AgentSpec* old = op.sop.find_agent(agent);
  if (!old) throw UnknownNodeError(agent);
  ChatPrompt prompt = prompts_.render(gateway_, "agent_replacement",
                                      {{"agent", agent},
                                       {"finding", finding.description},
                                       {"query", op.bound_query.text},
                                       {"op", canonical_dump(to_json(op.sop))},
                                       {"spec", canonical_dump(to_json(*old))},
                                       {"experiences", format_experiences(pep_hits)}});
  int used = 0;
  for (int attempt = 0;; ++attempt) {
    std::string reply;
    try {
      reply = gateway_.complete(prompt).text;
    } catch (const ModelError& e) {
      throw ReplacementFailed("replacement of '" + agent + "' failed: " + e.what());
    }
    std::string error;
    try {
      Json j = extract_json_object(reply);
      if (!j.contains("tools")) j["tools"] = old->tools;
      if (!j.contains("name")) j["name"] = agent;
      AgentSpec spec = agent_from_json(j, "agent");
      spec.name = agent;
      Sop trial = op.sop;
      *trial.find_agent(agent) = spec;
      auto diagnostics = validate_sop(trial, registry_tools);
      if (diagnostics.empty()) {
        if (repairs) *repairs = used;
        return spec;
      }
      error = format_diagnostics(diagnostics);
    } catch (const SchemaError& e) {
      error = e.what();
    }
    if (attempt >= policy_.repair_budget) {
      throw ReplacementFailed("replacement of '" + agent + "' failed after " + std::to_string(used) +
                              " repairs: " + error);
    }
    ++used;
    append_repair(prompt, reply, error);
  }
}

}  // namespace sopmas
