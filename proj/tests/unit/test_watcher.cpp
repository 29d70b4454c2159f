#include <catch_amalgamated.hpp>

#include <algorithm>

#include "sopmas/transcript.hpp"
#include "sopmas/watcher.hpp"
#include "scenarios.hpp"
#include "support.hpp"

using namespace sopmas;
using namespace sopmas::testing;

namespace {

InterventionPolicy unlimited() {
  InterventionPolicy p;
  p.cap = -1;
  return p;
}

Query coding_query() {
  return Query{"add", "Implement add(a, b) in Python so that it returns the sum of a and b.", TaskKind::coding};
}

Message message(std::string from, std::string to, std::string content, MessageKind kind = MessageKind::task) {
  Message m;
  m.sender = std::move(from);
  m.recipient = std::move(to);
  m.content = std::move(content);
  m.kind = kind;
  return m;
}

PepRecord pep(std::string id, std::string agent, std::string strategy) {
  PepRecord r;
  r.id = std::move(id);
  r.query = Query{"p", "past query", TaskKind::qa};
  r.failure_cause = "cause";
  r.experiences.push_back(AgentExperience{std::move(agent), "attribution", std::move(strategy)});
  return r;
}

}  // namespace

TEST_CASE("interval defaults to half the team") {
  InterventionPolicy p;
  CHECK(p.interval_for(1) == 1);
  CHECK(p.interval_for(2) == 1);
  CHECK(p.interval_for(3) == 1);
  CHECK(p.interval_for(6) == 3);
  CHECK(p.interval_for(7) == 3);
  CHECK(p.frequency(8) == Catch::Approx(0.25));
  p.interval = 5;
  CHECK(p.interval_for(2) == 5);
  p.interval = 0;
  CHECK_THROWS(p.validate());
  p.interval.reset();
  p.env_threshold = 0;
  CHECK_THROWS(p.validate());
}

TEST_CASE("trigger rules") {
  InterventionPolicy p;
  TriggerCounters c;
  c.round = 3;
  auto t = should_intervene(c, p, 6);
  REQUIRE(t);
  CHECK(t->round);
  CHECK(t->env_agents.empty());

  c.round = 2;
  c.env_steps = {{"A", 4}, {"B", 1}};
  CHECK_FALSE(should_intervene(c, p, 6));

  c.env_steps["A"] = 5;
  t = should_intervene(c, p, 6);
  REQUIRE(t);
  CHECK_FALSE(t->round);
  CHECK(t->env_agents == std::vector<std::string>{"A"});

  c.round = 3;
  c.interventions_used = 8;
  CHECK_FALSE(should_intervene(c, p, 6));

  c.round = 0;
  c.env_steps.clear();
  c.interventions_used = 0;
  CHECK_FALSE(should_intervene(c, p, 6));

  p.cap = -1;
  c.round = 6;
  c.interventions_used = 1000;
  CHECK(should_intervene(c, p, 6));
}

TEST_CASE("trigger property over random counters") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 2000; ++i) {
    InterventionPolicy p;
    p.cap = static_cast<int>(rng() % 10) - 1;
    p.env_threshold = 1 + static_cast<int>(rng() % 6);
    std::size_t team = 1 + rng() % 8;
    TriggerCounters c;
    c.round = static_cast<int>(rng() % 25);
    c.interventions_used = rng() % 10;
    int max_steps = 0;
    for (int a = 0; a < 3; ++a) {
      int s = static_cast<int>(rng() % 8);
      c.env_steps["A" + std::to_string(a)] = s;
      max_steps = std::max(max_steps, s);
    }
    const int m = std::max(1, static_cast<int>(team / 2));
    bool capped = p.cap >= 0 && c.interventions_used >= static_cast<std::size_t>(p.cap);
    bool expect = !capped && ((c.round > 0 && c.round % m == 0) || max_steps >= p.env_threshold);
    CHECK(should_intervene(c, p, team).has_value() == expect);
  }
}

TEST_CASE("reviews happen exactly every M rounds") {
  for (int n = 2; n <= 8; ++n) {
    auto gw = make_scripted_gateway(ring_rules(n));
    ToolRegistry tools;
    Engine engine(*gw, tools);
    Watcher watcher(*gw, unlimited());
    EnginePolicy policy;
    policy.max_rounds = 20;
    auto t = engine.run(bind_sop(ring(n), Query{"r", "ring", TaskKind::other}, {}), policy, &watcher);
    CHECK(t.rounds_used == 20);
    const int m = std::max(1, n / 2);
    std::vector<int> expected;
    for (int r = m; r <= 20; r += m) expected.push_back(r);
    std::vector<int> seen;
    for (const auto& e : watcher.reviews()) {
      CHECK(e.round_trigger);
      CHECK_FALSE(e.finding.anomaly());
      seen.push_back(e.round);
    }
    CHECK(seen == expected);
    CHECK(t.interventions.empty());
  }
}

TEST_CASE("five consecutive tool steps trigger an environment review") {
  Sop s = linear_sop(4);
  s.agents[0].tools = {"echo"};
  // Each observation names its call number, which the rules read back from history.
  ToolRegistry tools;
  int calls = 0;
  tools.add("echo", "echo", [&calls](const std::string&) { return ToolResult{"step " + std::to_string(++calls) + " ", true}; });
  auto gw = make_scripted_gateway({
      sub("### WATCHER REVIEW", "VERDICT: NORMAL"),
      re(R"(\[agent=Agent0\][\s\S]*step 5 )", "Thought: enough\nAction: message: Agent1 | done"),
      re(R"(\[agent=Agent0\][\s\S]*step (\d) )", "Thought: more\nAction: tool: echo | args: again"),
      sub("[agent=Agent0]", "Thought: start\nAction: tool: echo | args: first"),
      sub("[agent=", "Thought: stop\nAction: final: x"),
  });
  Engine engine(*gw, tools);
  Watcher watcher(*gw, unlimited());
  EnginePolicy policy;
  policy.max_rounds = 1;
  auto t = engine.run(bind_sop(s, Query{"e", "e", TaskKind::other}, {}), policy, &watcher);
  REQUIRE(t.tool_calls.size() == 5);
  REQUIRE(watcher.reviews().size() == 1);
  const auto& e = watcher.reviews().front();
  CHECK_FALSE(e.round_trigger);
  CHECK(e.env_agents == std::vector<std::string>{"Agent0"});
  CHECK(e.round == 1);
}

TEST_CASE("repeated identical messages are flagged without a model call") {
  auto gw = make_scripted_gateway({});
  auto op = bind_sop(websearch_sop(), capital_query(), {});
  ReviewWindow w;
  for (int i = 0; i < 3; ++i) w.messages.push_back(message("Planner", "WebSearcher", "search again"));
  auto f = review(*gw, PromptSet::defaults(), w, op, {}, {});
  CHECK(f.anomaly());
  CHECK(f.level == AnomalyLevel::inter_agent);
  CHECK(f.severity == Severity::recoverable);
  CHECK(f.agent == "Planner");
  CHECK_FALSE(f.model_reviewed);
  CHECK(gw->stats().calls == 0);
}

TEST_CASE("a tool-less final answer on a tool task is critical") {
  auto gw = make_scripted_gateway({});
  Sop s = websearch_sop();
  s.structure.edges.push_back({"WebSearcher", "End", {}});
  auto op = bind_sop(s, capital_query(), {});
  ReviewWindow w;
  w.messages.push_back(message("WebSearcher", "End", "Paris", MessageKind::final_answer));
  auto f = review(*gw, PromptSet::defaults(), w, op, {}, {});
  CHECK(f.anomaly());
  CHECK(f.level == AnomalyLevel::agent_environment);
  CHECK(f.severity == Severity::critical);
  CHECK(f.agent == "WebSearcher");

  ToolCallRecord used;
  used.agent = "WebSearcher";
  auto gw2 = make_scripted_gateway({sub("### WATCHER REVIEW", "VERDICT: NORMAL")});
  CHECK_FALSE(review(*gw2, PromptSet::defaults(), w, op, {}, {used}).anomaly());

  // Coding tasks do not require tools.
  auto coding = bind_sop(s, Query{"c", "code", TaskKind::coding}, {});
  CHECK_FALSE(review(*gw2, PromptSet::defaults(), w, coding, {}, {}).anomaly());
}

TEST_CASE("model review verdicts") {
  auto op = bind_sop(websearch_sop(), capital_query(), {});
  ReviewWindow w;
  w.messages.push_back(message("Planner", "WebSearcher", "plan"));

  auto normal = make_scripted_gateway({sub("### WATCHER REVIEW", "NORMAL")});
  auto f = review(*normal, PromptSet::defaults(), w, op, {}, {});
  CHECK_FALSE(f.anomaly());
  CHECK(f.model_reviewed);

  auto failing = make_scripted_gateway({});
  CHECK_FALSE(review(*failing, PromptSet::defaults(), w, op, {}, {}).anomaly());

  auto flagged = make_scripted_gateway({sub("### WATCHER REVIEW",
                                            "VERDICT: ANOMALY\nLEVEL: agent_environment\nAGENT: WebSearcher\n"
                                            "SEVERITY: critical\nDESCRIPTION: made up results")});
  f = review(*flagged, PromptSet::defaults(), w, op, {pep("pep-1", "WebSearcher", "always search")}, {});
  CHECK(f.anomaly());
  CHECK(f.agent == "WebSearcher");
  CHECK(f.severity == Severity::critical);
  CHECK(f.description == "made up results");
}

TEST_CASE("review prompt carries the window and experiences") {
  auto gw = make_scripted_gateway(
      {re(R"(### WATCHER REVIEW[\s\S]*Planner -> WebSearcher \(task\):\nplan[\s\S]*always search)", "VERDICT: NORMAL")});
  auto op = bind_sop(websearch_sop(), capital_query(), {});
  ReviewWindow w;
  w.messages.push_back(message("Planner", "WebSearcher", "plan"));
  review(*gw, PromptSet::defaults(), w, op, {pep("pep-1", "WebSearcher", "always search")}, {});
  CHECK(gw->stats().failures == 0);
  CHECK(gw->stats().calls == 1);
}

TEST_CASE("parse_finding tolerates formatting and rejects strangers") {
  auto op = bind_sop(websearch_sop(), capital_query(), {});
  auto f = parse_finding("**Verdict:** anomaly\n**Agent:** Summarizer\nSeverity: Recoverable\nLevel: inter-agent", op);
  CHECK(f.anomaly());
  CHECK(f.agent == "Summarizer");
  CHECK(f.level == AnomalyLevel::inter_agent);
  CHECK(f.severity == Severity::recoverable);
  CHECK_FALSE(parse_finding("VERDICT: ANOMALY\nAGENT: Mallory", op).anomaly());
  CHECK_FALSE(parse_finding("", op).anomaly());
}

// ---------------------------------------------------------------------------

TEST_CASE("recoverable findings send guidance quoting matched strategies") {
  auto gw = make_scripted_gateway({});
  ToolRegistry tools;
  Execution ex(bind_sop(linear_sop(2), Query{"g", "g", TaskKind::other}, {}), tools, EnginePolicy{});
  ex.seed_query();
  Watcher watcher(*gw, InterventionPolicy{});
  Finding f{FindingVerdict::anomaly, AnomalyLevel::inter_agent, "Agent1", "loops", Severity::recoverable, false};
  auto iv = watcher.intervene(ex, f, {pep("pep-7", "Agent1", "Summarize before replying."), pep("pep-8", "Other", "x")});
  CHECK(iv.kind == InterventionKind::guidance);
  CHECK(iv.pep_refs == std::vector<std::string>{"pep-7"});
  CHECK(iv.guidance.find("Summarize before replying.") != std::string::npos);
  auto inbox = ex.pool().inbox("Agent1");
  REQUIRE(inbox.size() == 1);
  CHECK(inbox[0].sender == "Watcher");
  CHECK(inbox[0].kind == MessageKind::watcher_guidance);
  CHECK(inbox[0].content == iv.guidance);
  CHECK(ex.interventions().size() == 1);
}

TEST_CASE("critical findings replace the agent in place") {
  auto gw = make_scripted_gateway({sub("### AGENT REPLACEMENT",
                                       R"({"name": "Agent1", "responsibility": "fresh", "instruction": "do better", "tools": []})")});
  ToolRegistry tools;
  auto op = bind_sop(linear_sop(3), Query{"g", "g", TaskKind::other}, {});
  Execution ex(op, tools, EnginePolicy{});
  ex.seed_query();
  Message m = message("Agent0", "Agent1", "work");
  ex.pool().post(m);
  Watcher watcher(*gw, InterventionPolicy{});
  Finding f{FindingVerdict::anomaly, AnomalyLevel::agent_environment, "Agent1", "bad", Severity::critical, true};
  auto iv = watcher.intervene(ex, f, {});
  CHECK(iv.kind == InterventionKind::replacement);
  REQUIRE(iv.replacement);
  CHECK(iv.replacement->instruction == "do better");
  CHECK(iv.messages_purged == 1);
  CHECK(iv.repairs == 0);
  CHECK(ex.op().sop.team == op.sop.team);
  CHECK(ex.op().sop.structure == op.sop.structure);
  CHECK(ex.generation("Agent1") == 1);
}

TEST_CASE("replacement specs are repaired and keep the slot") {
  auto gw = make_scripted_gateway({
      sub("### REPAIR", R"({"responsibility": "fixed", "instruction": "ok", "tools": ["bash"]})"),
      sub("### AGENT REPLACEMENT", R"({"name": "Other", "responsibility": "r", "instruction": "i", "tools": ["sql"]})"),
  });
  Watcher watcher(*gw, InterventionPolicy{});
  auto op = bind_sop(linear_sop(2, {"bash"}), Query{"g", "g", TaskKind::other}, {});
  Finding f{FindingVerdict::anomaly, AnomalyLevel::agent_environment, "Agent0", "bad", Severity::critical, true};
  int repairs = -1;
  auto spec = watcher.replacement_spec(op, {"bash"}, "Agent0", f, {}, &repairs);
  CHECK(repairs == 1);
  CHECK(spec.name == "Agent0");
  CHECK(spec.tools == std::vector<std::string>{"bash"});

  // Missing tools fall back to the old grant.
  auto gw2 = make_scripted_gateway({sub("### AGENT REPLACEMENT", R"({"responsibility": "r", "instruction": "i"})")});
  Watcher w2(*gw2, InterventionPolicy{});
  CHECK(w2.replacement_spec(op, {"bash"}, "Agent0", f, {}).tools == std::vector<std::string>{"bash"});

  auto gw3 = make_scripted_gateway({sub("### AGENT REPLACEMENT", "no json here")});
  Watcher w3(*gw3, InterventionPolicy{});
  CHECK_THROWS_AS(w3.replacement_spec(op, {"bash"}, "Agent0", f, {}), ReplacementFailed);
  CHECK(gw3->stats().calls == 3);
}

TEST_CASE("the cap blocks interventions without touching the run") {
  auto gw = make_scripted_gateway({});
  ToolRegistry tools;
  Execution ex(bind_sop(linear_sop(2), Query{"g", "g", TaskKind::other}, {}), tools, EnginePolicy{});
  ex.seed_query();
  InterventionPolicy p;
  p.cap = 0;
  Watcher watcher(*gw, p);
  Finding f{FindingVerdict::anomaly, AnomalyLevel::inter_agent, "Agent1", "loops", Severity::critical, false};
  auto before = ex.pool().messages();
  CHECK_THROWS_AS(watcher.intervene(ex, f, {}), CapExceeded);
  CHECK(ex.pool().messages() == before);
  CHECK(ex.interventions().empty());
  CHECK(gw->stats().calls == 0);
}

TEST_CASE("loops get guidance and the cap bounds interventions") {
  Sop s = linear_sop(2);
  s.structure.edges.push_back({"Agent1", "Agent0", std::string("again")});
  auto gw = make_scripted_gateway({
      sub("### WATCHER REVIEW", "VERDICT: NORMAL"),
      sub("[agent=Agent0]", "Thought: same\nAction: message: Agent1 | same thing"),
      sub("[agent=Agent1]", "Thought: same\nAction: message: Agent0 | same reply\noutcome: again"),
  });
  ToolRegistry tools;
  Engine engine(*gw, tools);
  InterventionPolicy p;
  p.cap = 2;
  Watcher watcher(*gw, p);
  EnginePolicy policy;
  policy.max_rounds = 30;
  auto t = engine.run(bind_sop(s, Query{"l", "l", TaskKind::other}, {}), policy, &watcher);
  CHECK(t.terminated_by == Termination::round_cap);
  REQUIRE(t.interventions.size() == 2);
  for (const auto& iv : t.interventions) CHECK(iv.kind == InterventionKind::guidance);
  CHECK(t.intervention_cap == 2);
  CHECK(validate_transcript(t).passed());
}

TEST_CASE("watcher recovers the prompt-attack scenario") {
  auto tools = fixture_tools();
  auto op = bind_sop(coding_sop(), coding_query(), {});

  auto gw = script_gateway("attack.json");
  Engine engine(*gw, tools);
  Watcher watcher(*gw, InterventionPolicy{});
  auto t = engine.run(op, EnginePolicy{}, &watcher);
  CHECK(t.terminated_by == Termination::final_answer);
  REQUIRE(t.final_answer);
  CHECK(t.final_answer->find("return a + b") != std::string::npos);
  REQUIRE(t.interventions.size() == 1);
  CHECK(t.interventions[0].kind == InterventionKind::replacement);
  CHECK(t.interventions[0].target == "Programming Expert");
  CHECK(validate_transcript(t).passed());
  bool replacement_spoke = std::any_of(t.messages.begin(), t.messages.end(), [](const Message& m) {
    return m.sender == "Programming Expert" && m.sender_generation == 1;
  });
  CHECK(replacement_spoke);
  for (const auto& m : t.messages) CHECK(m.content.find("    pass") == std::string::npos);

  auto gw2 = script_gateway("attack.json");
  Engine unsupervised(*gw2, tools);
  auto t2 = unsupervised.run(op, EnginePolicy{});
  CHECK(t2.terminated_by == Termination::final_answer);
  REQUIRE(t2.final_answer);
  CHECK(t2.final_answer->find("pass") != std::string::npos);
}

TEST_CASE("replacement failures end the run as fatal") {
  auto gw = make_scripted_gateway({
      sub("### WATCHER REVIEW",
          "VERDICT: ANOMALY\nLEVEL: agent_environment\nAGENT: Agent0\nSEVERITY: critical\nDESCRIPTION: broken"),
      sub("### AGENT REPLACEMENT", "nonsense"),
      sub("### REPAIR", "still nonsense"),
      sub("[agent=Agent0]", "Thought: t\nAction: message: Agent1 | hi"),
  });
  ToolRegistry tools;
  Engine engine(*gw, tools);
  Watcher watcher(*gw, InterventionPolicy{});
  auto t = engine.run(bind_sop(linear_sop(2), Query{"f", "f", TaskKind::other}, {}), EnginePolicy{}, &watcher);
  CHECK(t.terminated_by == Termination::fatal_error);
  CHECK(t.fatal_detail.find("replacement of 'Agent0' failed") != std::string::npos);
  CHECK(t.interventions.empty());
  CHECK(validate_transcript(t).passed());
}

TEST_CASE("disabled watcher never reviews") {
  auto gw = make_scripted_gateway(ring_rules(2));
  ToolRegistry tools;
  Engine engine(*gw, tools);
  InterventionPolicy p;
  p.enabled = false;
  Watcher watcher(*gw, p);
  EnginePolicy policy;
  policy.max_rounds = 6;
  engine.run(bind_sop(ring(2), Query{"r", "r", TaskKind::other}, {}), policy, &watcher);
  CHECK(watcher.reviews().empty());
}
