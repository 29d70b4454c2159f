#include <catch_amalgamated.hpp>

#include "sopmas/reflection.hpp"
#include "support.hpp"

using namespace sopmas;
using namespace sopmas::testing;

namespace {

ScriptRule rule(std::string pattern, std::string response, ScriptRule::Match match = ScriptRule::Match::substring) {
  ScriptRule r;
  r.match = match;
  r.pattern = std::move(pattern);
  r.response = std::move(response);
  return r;
}

ExecutionTranscript answered(std::string answer) {
  ExecutionTranscript t;
  t.op = bind_sop(websearch_sop(), capital_query(), {});
  t.terminated_by = Termination::final_answer;
  t.final_answer = std::move(answer);
  return t;
}

TrainingTask checked(std::string command, std::string expected) {
  TrainingTask task;
  task.query = capital_query();
  task.checker = CheckerSpec{std::move(command), std::move(expected)};
  return task;
}

TrainingTask labelled(std::string label) {
  TrainingTask task;
  task.query = capital_query();
  task.label = std::move(label);
  return task;
}

const std::set<std::string> kTools = {"GOOGLE Search", "bash", "file_read", "search_stub"};

Json solver_sop(const std::string& instruction) {
  Json agent = {{"name", "Solver"}, {"responsibility", "Solves the request."}, {"instruction", instruction},
                {"tools", Json::array()}};
  return Json{{"team", {"Solver"}},
              {"agents", Json::array({agent})},
              {"communication_structure",
               {{"edges", Json::array({Json{{"from", "User"}, {"to", "Solver"}}, Json{{"from", "Solver"}, {"to", "End"}}})}}}};
}

std::string diagnosis_reply(const std::string& agent, const Json& revised) {
  Json j = {{"failure_cause", "The answer was wrong."},
            {"experiences", Json::array({Json{{"agent", agent},
                                              {"error_attribution", "Did not check the answer."},
                                              {"improvement_strategy", "Check the answer before sending it."}}})},
            {"revised_op", revised}};
  return j.dump();
}

// Scripted runtime whose single Solver answers with `first` until its
// instruction says "Revised", then with `second`.
struct LoopFixture {
  TempDir dir;
  Config config;

  LoopFixture(const std::string& first, const std::string& second) {
    Json rules = Json::array();
    auto add = [&](std::string kind, std::string match, std::string response) {
      rules.push_back({{"kind", kind}, {"match", match}, {"response", response}});
    };
    add("substring", "### NEED ANALYSIS", "Produce a token.");
    add("substring", "### OP INSTANTIATION", solver_sop("Answer.").dump());
    add("substring", "### WATCHER REVIEW", "VERDICT: NORMAL");
    add("substring", "### SOP DISTILLATION", solver_sop("Answer the request exactly.").dump());
    add("substring", "### FAILURE DIAGNOSIS", diagnosis_reply("Solver", solver_sop("Revised: answer carefully.")));
    add("regex", "Revised[\\s\\S]*\\[agent=Solver\\]", "Action: final: " + second);
    add("substring", "[agent=Solver]", "Action: final: " + first);
    write_text(dir / "rules.json", Json{{"rules", rules}}.dump(2));
    config.script = dir / "rules.json";
    config.store = dir / "store";
  }

  TrainingTask task(int max_iterations = 3) const {
    TrainingTask t;
    t.query = make_query("Print the token GOOD.", TaskKind::coding);
    t.checker = CheckerSpec{"cat answer.txt", "GOOD"};
    t.max_iterations = max_iterations;
    return t;
  }
};

}  // namespace

TEST_CASE("manifests are parsed and checked", "[reflection]") {
  auto tasks = parse_manifest(Json::parse(R"([
    {"query": "q1", "task_kind": "coding", "checker": {"command": "true", "expected": "ok"}},
    {"query": "q2", "label": "Paris", "max_iterations": 1}
  ])"));
  REQUIRE(tasks.size() == 2);
  CHECK(tasks[0].query.kind == TaskKind::coding);
  CHECK(tasks[0].query.id == query_id("q1"));
  CHECK(tasks[0].checker->expected == "ok");
  CHECK(tasks[0].max_iterations == 3);
  CHECK(tasks[1].query.kind == TaskKind::other);
  CHECK(*tasks[1].label == "Paris");
  CHECK(tasks[1].max_iterations == 1);
  CHECK(parse_manifest(Json::array()).empty());

  CHECK_THROWS_AS(parse_manifest(Json::object()), ManifestError);
  CHECK_THROWS_AS(parse_manifest(Json::parse(R"([{"label": "x"}])")), ManifestError);
  CHECK_THROWS_AS(parse_manifest(Json::parse(R"([{"query": "q"}])")), ManifestError);
  CHECK_THROWS_AS(parse_manifest(Json::parse(R"([{"query": "q", "label": "x", "max_iterations": 0}])")), ManifestError);
  CHECK_THROWS_AS(parse_manifest(Json::parse(R"([{"query": "q", "label": "x", "task_kind": "poetry"}])")),
                  ManifestError);
  CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.json"), ManifestError);

  auto fixture = load_manifest(source_dir() / "fixtures" / "bootstrap" / "manifest.json");
  CHECK(fixture.size() == 5);
}

TEST_CASE("code is taken from the first fence", "[reflection]") {
  CHECK(extract_code("plain") == "plain");
  CHECK(extract_code("Here:\n```python\ndef f():\n    return 1\n```\ntrailing") == "def f():\n    return 1\n");
  CHECK(extract_code("```\nx = 1\n") == "x = 1\n");
}

TEST_CASE("judge uses the checker when present", "[reflection]") {
  auto gw = make_scripted_gateway({});
  const auto& prompts = PromptSet::defaults();

  auto pass = judge(*gw, prompts, answered("Paris"), checked("cat answer.txt", "Paris"));
  CHECK(pass.passed);
  CHECK(pass.evaluator == Evaluator::checker);

  auto wrong = judge(*gw, prompts, answered("Lyon"), checked("cat answer.txt", "Paris"));
  CHECK_FALSE(wrong.passed);
  CHECK(wrong.detail.find("checker failed") != std::string::npos);

  auto nonzero = judge(*gw, prompts, answered("Paris"), checked("cat answer.txt; exit 3", "Paris"));
  CHECK_FALSE(nonzero.passed);

  auto code = judge(*gw, prompts, answered("```python\nprint(6 * 7)\n```"), checked("python3 solution.py", "42"));
  CHECK(code.passed);

  ExecutionTranscript capped;
  capped.terminated_by = Termination::round_cap;
  auto none = judge(*gw, prompts, capped, checked("true", ""));
  CHECK_FALSE(none.passed);
  CHECK(none.detail == "no deliverable");
  CHECK(gw->stats().calls == 0);
}

TEST_CASE("judge falls back to the model", "[reflection]") {
  auto fail = make_scripted_gateway({rule("### ANSWER JUDGE", "FAIL: wrong date")});
  auto v = judge(*fail, PromptSet::defaults(), answered("1999"), labelled("2001"));
  CHECK_FALSE(v.passed);
  CHECK(v.evaluator == Evaluator::model_judge);
  CHECK(v.detail == "FAIL: wrong date");

  auto pass = make_scripted_gateway({rule("Reference answer: Paris", "PASS: same city")});
  CHECK(judge(*pass, PromptSet::defaults(), answered("Paris."), labelled("Paris")).passed);

  TrainingTask bare;
  bare.query = capital_query();
  CHECK_THROWS_AS(judge(*pass, PromptSet::defaults(), answered("x"), bare), NoEvaluator);
}

TEST_CASE("distillation returns a generalized case", "[reflection]") {
  auto general = coding_sop();
  general.agents[0].instruction = "Write the requested function and nothing else.";
  auto gw = make_scripted_gateway({rule("### SOP DISTILLATION", canonical_dump(to_json(general)))});
  auto op = bind_sop(coding_sop(), Query{"q", "Implement add(a, b).", TaskKind::coding}, {});
  auto c = distill_sop(*gw, PromptSet::defaults(), op, op.bound_query, NeedAnalysis{"need"}, kTools);
  CHECK(c.sop == general);
  CHECK(c.query == op.bound_query);
  CHECK(c.need.text == "need");

  auto identity = make_scripted_gateway({rule("### SOP DISTILLATION", fixture_text("sop_coding_loop.json"))});
  CHECK(distill_sop(*identity, PromptSet::defaults(), op, op.bound_query, {}, kTools).sop == coding_sop());
}

TEST_CASE("distillation failures leave the store alone", "[reflection]") {
  TempDir dir;
  auto gw = make_scripted_gateway({rule("### SOP DISTILLATION", "{\"team\": [\"A\"]")});
  Repository repo(dir / "store", *gw);
  auto op = bind_sop(coding_sop(), capital_query(), {});
  try {
    repo.add_case(distill_sop(*gw, PromptSet::defaults(), op, capital_query(), {}, kTools, 1), kTools);
    FAIL("expected InstantiationError");
  } catch (const InstantiationError& e) {
    CHECK(e.code() == InstantiationErrorCode::ParseFailed);
  }
  CHECK(gw->stats().calls == 2);
  CHECK(repo.case_count() == 0);
}

TEST_CASE("trajectory lists activity in commit order", "[reflection]") {
  auto t = answered("Paris");
  Message m;
  m.sender = "Planner";
  m.recipient = "WebSearcher";
  m.content = "search it";
  m.round = 1;
  m.seq = 3;
  t.messages.push_back(m);
  ToolCallRecord r;
  r.agent = "WebSearcher";
  r.tool = "GOOGLE Search";
  r.arguments = "capital of France";
  r.observation = "Paris";
  r.round = 2;
  r.seq = 1;
  t.tool_calls.push_back(r);
  auto text = render_trajectory(t);
  CHECK(text.find("WebSearcher used GOOGLE Search(capital of France) -> Paris") < text.find("Planner -> WebSearcher"));
  CHECK(text.find("Final answer: Paris") != std::string::npos);
}

TEST_CASE("diagnosis attributes failures to team members", "[reflection]") {
  auto t = answered("Lyon");
  Verdict v;
  v.detail = "checker failed";

  Json revised = to_json(websearch_sop());
  Json reviewer = {{"name", "Reviewer"}, {"responsibility", "Checks the summary."}, {"instruction", "Verify."},
                   {"tools", Json::array()}};
  revised["team"].push_back("Reviewer");
  revised["agents"].push_back(reviewer);
  auto edges = parse_structure_text("1. User -> Planner; 2. Planner -> WebSearcher; 3. WebSearcher -> Summarizer; "
                                    "4. Summarizer -> Reviewer; 5. Reviewer -> End.");
  revised["communication_structure"] = to_json(edges);

  Json reply = Json::parse(diagnosis_reply("Summarizer", revised));
  reply["experiences"].push_back({{"agent", "Ghost"}, {"error_attribution", "x"}, {"improvement_strategy", "y"}});
  auto gw = make_scripted_gateway({rule("Evaluation: checker failed", reply.dump())});
  auto d = diagnose(*gw, PromptSet::defaults(), t, v, kTools);
  CHECK(d.failure_cause == "The answer was wrong.");
  REQUIRE(d.experiences.size() == 1);
  CHECK(d.experiences[0].agent == "Summarizer");
  CHECK(d.revised_op.sop.team.size() == 4);
  CHECK(d.revised_op.bound_query == capital_query());
  CHECK(validate_sop(d.revised_op.sop, kTools).empty());

  Json empty = Json::parse(diagnosis_reply("Summarizer", to_json(websearch_sop())));
  empty["experiences"] = Json::array();
  auto bad = make_scripted_gateway({rule("### FAILURE DIAGNOSIS", empty.dump())});
  try {
    diagnose(*bad, PromptSet::defaults(), t, v, kTools);
    FAIL("expected InstantiationError");
  } catch (const InstantiationError& e) {
    CHECK(e.code() == InstantiationErrorCode::ParseFailed);
  }
  CHECK(bad->stats().calls == 3);
}

TEST_CASE("reflective loop stores a case on the first pass", "[reflection]") {
  LoopFixture fx("GOOD", "GOOD");
  Runtime runtime(fx.config, StoreAccess::read_write);
  auto r = reflective_loop(runtime, fx.task());
  CHECK(r.verdict.passed);
  CHECK(r.executions == 1);
  CHECK(r.cases_added.size() == 1);
  CHECK(r.records_added.empty());
  auto stored = runtime.repository()->find_case(r.cases_added[0]);
  REQUIRE(stored);
  CHECK(stored->sop.agents[0].instruction == "Answer the request exactly.");
  CHECK(stored->query == fx.task().query);
  CHECK(stored->need.text == "Produce a token.");
}

TEST_CASE("reflective loop revises after a failure", "[reflection]") {
  LoopFixture fx("BAD", "GOOD");
  Runtime runtime(fx.config, StoreAccess::read_write);
  auto r = reflective_loop(runtime, fx.task());
  CHECK(r.verdict.passed);
  CHECK(r.executions == 2);
  CHECK(r.cases_added.size() == 1);
  REQUIRE(r.records_added.size() == 1);
  auto record = runtime.repository()->find_record(r.records_added[0]);
  REQUIRE(record);
  CHECK(record->experiences[0].agent == "Solver");
  CHECK(record->query == fx.task().query);
}

TEST_CASE("reflective loop stops at the iteration bound", "[reflection]") {
  LoopFixture fx("BAD", "STILL BAD");
  Runtime runtime(fx.config, StoreAccess::read_write);
  auto r = reflective_loop(runtime, fx.task(3));
  CHECK_FALSE(r.verdict.passed);
  CHECK(r.executions == 3);
  CHECK(r.cases_added.empty());
  CHECK(r.records_added.size() == 3);
  CHECK(runtime.repository()->case_count() == 0);
  CHECK(runtime.repository()->record_count() == 3);
}

TEST_CASE("reflective loop needs a writable store", "[reflection]") {
  LoopFixture fx("GOOD", "GOOD");
  Runtime runtime(fx.config, StoreAccess::read_only);
  CHECK_THROWS_AS(reflective_loop(runtime, fx.task()), StorageError);
}

TEST_CASE("reflective loop propagates fatal runs", "[reflection]") {
  LoopFixture fx("GOOD", "GOOD");
  write_text(fx.dir / "rules.json", Json{{"rules", Json::array({
      {{"kind", "substring"}, {"match", "### NEED ANALYSIS"}, {"response", "need"}},
      {{"kind", "substring"}, {"match", "### OP INSTANTIATION"}, {"response", solver_sop("Answer.").dump()}},
  })}}.dump());
  Runtime runtime(fx.config, StoreAccess::read_write);
  CHECK_THROWS_AS(reflective_loop(runtime, fx.task()), ExecutionFailed);
  CHECK(runtime.repository()->case_count() == 0);
}

TEST_CASE("bootstrap fills the stores from the fixture manifest", "[reflection]") {
  TempDir dir;
  auto config = load_config(source_dir() / "fixtures" / "bootstrap" / "config.json");
  config.store = dir / "store";
  config.prompt_log = dir / "prompts.jsonl";
  auto tasks = load_manifest(source_dir() / "fixtures" / "bootstrap" / "manifest.json");
  {
    Runtime runtime(config, StoreAccess::read_write);
    auto summary = bootstrap_repository(runtime, tasks);
    CHECK(summary.cases_added == 5);
    CHECK(summary.records_added == 2);
    REQUIRE(summary.tasks.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(summary.tasks[i].verdict.passed);
      CHECK(summary.tasks[i].executions == (i < 3 ? 1 : 2));
    }
    for (const auto& c : runtime.repository()->cases()) CHECK(c.sop.team.size() == 1);
    auto empty = bootstrap_repository(runtime, {});
    CHECK(empty.cases_added == 0);
    CHECK(runtime.repository()->case_count() == 5);
  }
  auto log = read_text(dir / "prompts.jsonl");
  CHECK(log.find("single agent") != std::string::npos);

  auto gw = make_scripted_gateway({});
  Repository reopened(dir / "store", *gw, StoreAccess::read_only);
  CHECK(reopened.case_count() == 5);
  CHECK(reopened.record_count() == 2);
}
