#include <catch_amalgamated.hpp>

#include <sstream>

#include "sopmas/cli.hpp"
#include "sopmas/pipeline.hpp"
#include "sopmas/text.hpp"
#include "sopmas/transcript.hpp"
#include "support.hpp"

using namespace sopmas;
using namespace sopmas::testing;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = run_cli(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string script(const std::string& name) { return (source_dir() / "fixtures" / "scripts" / name).string(); }

std::vector<std::string> websearch_run(const TempDir& dir, const std::string& out) {
  write_text(dir / "config.json",
             Json{{"tools", {{"search_corpus", (source_dir() / "fixtures" / "search_corpus.json").string()}}}}.dump());
  return {"run",      "What is the capital of France?", "--kind", "qa", "--config", (dir / "config.json").string(),
          "--script", script("websearch.json"),         "--store", (dir / "store").string(), "--out", out};
}

}  // namespace

TEST_CASE("run prints the answer and writes a transcript", "[cli]") {
  TempDir dir;
  auto first = cli(websearch_run(dir, (dir / "a.jsonl").string()));
  CHECK(first.code == 0);
  CHECK(first.out.rfind("The capital of France is Paris.\n", 0) == 0);
  CHECK(first.out.find("transcript: ") != std::string::npos);
  CHECK(first.out.find("timing: wall ") != std::string::npos);
  CHECK(first.out.find("gateway calls 9") != std::string::npos);

  auto second = cli(websearch_run(dir, (dir / "b.jsonl").string()));
  CHECK(second.code == 0);
  CHECK(read_text(dir / "a.jsonl") == read_text(dir / "b.jsonl"));

  auto replay = cli({"replay", (dir / "a.jsonl").string()});
  CHECK(replay.code == 0);
  CHECK(replay.out.find("PASS causality") != std::string::npos);
}

TEST_CASE("run writes to the runs directory by default", "[cli]") {
  TempDir dir;
  write_text(dir / "config.json", Json{{"script", script("websearch.json")}, {"runs", "out"}}.dump());
  auto o = cli({"run", "What is the capital of France?", "--config", (dir / "config.json").string(), "--store",
                (dir / "store").string()});
  CHECK(o.code == 0);
  auto expected = dir / "out" / (query_id("What is the capital of France?") + ".jsonl");
  CHECK(std::filesystem::exists(expected));
}

TEST_CASE("flags override the config file", "[cli]") {
  TempDir dir;
  write_text(dir / "config.json", Json{{"engine", {{"max_rounds", 4}, {"seed", 3}}}, {"watcher", {{"cap", 1}}}}.dump());
  auto base = std::vector<std::string>{"run", "What is the capital of France?", "--script", script("websearch.json"),
                                       "--store", (dir / "store").string(), "--out", (dir / "t.jsonl").string()};

  auto defaults = base;
  CHECK(cli(defaults).code == 0);
  auto t = read_transcript(dir / "t.jsonl");
  CHECK(t.max_rounds == 30);
  CHECK(t.intervention_cap == 8);

  auto from_file = base;
  from_file.insert(from_file.end(), {"--config", (dir / "config.json").string()});
  CHECK(cli(from_file).code == 0);
  t = read_transcript(dir / "t.jsonl");
  CHECK(t.max_rounds == 4);
  CHECK(t.intervention_cap == 1);

  auto flagged = from_file;
  flagged.insert(flagged.end(), {"--max-rounds", "7", "--cap", "-1"});
  CHECK(cli(flagged).code == 0);
  t = read_transcript(dir / "t.jsonl");
  CHECK(t.max_rounds == 7);
  CHECK(t.intervention_cap == -1);

  auto unsupervised = base;
  unsupervised.push_back("--no-watcher");
  CHECK(cli(unsupervised).code == 0);
  CHECK(read_transcript(dir / "t.jsonl").intervention_cap == 0);
}

TEST_CASE("run reports usage and execution errors", "[cli]") {
  TempDir dir;
  auto base = std::vector<std::string>{"run", "q", "--script", script("websearch.json"), "--store",
                                       (dir / "store").string(), "--out", (dir / "t.jsonl").string()};
  auto unknown = base;
  unknown.insert(unknown.end(), {"--fixed-sop", "sop-000404"});
  CHECK(cli(unknown).code == 2);

  for (auto bad : std::vector<std::vector<std::string>>{
           {"--lambda", "1.5"}, {"--mode", "fuzzy"}, {"--k", "0"}, {"--backend", "smoke"}, {"--bogus"}}) {
    auto args = base;
    args.insert(args.end(), bad.begin(), bad.end());
    CHECK(cli(args).code == 2);
  }
  CHECK(cli({"run", "q", "--script", (dir / "missing.json").string()}).code == 2);
  CHECK(cli({"run", "q", "--config", (dir / "missing.json").string()}).code == 2);
  CHECK(cli({}).code == 2);
  CHECK(cli({"launch"}).code == 2);

  // Need analysis and instantiation succeed; no agent rule matches, so the run is fatal.
  write_text(dir / "fatal.json", Json{{"rules", Json::array({
      {{"match", "### NEED ANALYSIS"}, {"response", "need"}},
      {{"match", "### OP INSTANTIATION"}, {"response", fixture_text("sop_websearch.json")}},
      {{"match", "### WATCHER REVIEW"}, {"response", "VERDICT: NORMAL"}},
  })}}.dump());
  auto fatal = cli({"run", "q", "--script", (dir / "fatal.json").string(), "--store", (dir / "store").string(),
                    "--out", (dir / "fatal.jsonl").string()});
  CHECK(fatal.code == 1);
  CHECK(std::filesystem::exists(dir / "fatal.jsonl"));
  CHECK(read_transcript(dir / "fatal.jsonl").terminated_by == Termination::fatal_error);
}

TEST_CASE("run without SOP retrieval works on an empty store", "[cli]") {
  TempDir dir;
  auto args = websearch_run(dir, (dir / "t.jsonl").string());
  args.push_back("--no-sop-rag");
  auto o = cli(args);
  CHECK(o.code == 0);
  CHECK(o.out.find("Paris") != std::string::npos);
}

TEST_CASE("replay flags corrupted transcripts", "[cli]") {
  TempDir dir;
  REQUIRE(cli(websearch_run(dir, (dir / "t.jsonl").string())).code == 0);
  auto lines = split(read_text(dir / "t.jsonl"), '\n');
  std::string corrupted;
  bool done = false;
  for (auto& line : lines) {
    if (line.empty()) continue;
    Json j = Json::parse(line);
    if (!done && j.value("type", "") == "message" && j.contains("cause") && !j["cause"].is_null()) {
      j["cause"] = 987654;
      done = true;
    }
    corrupted += j.dump() + "\n";
  }
  REQUIRE(done);
  write_text(dir / "bad.jsonl", corrupted);
  auto o = cli({"replay", (dir / "bad.jsonl").string()});
  CHECK(o.code == 1);
  CHECK(o.out.find("FAIL causality") != std::string::npos);

  write_text(dir / "empty.jsonl", "");
  CHECK(cli({"replay", (dir / "empty.jsonl").string()}).code == 2);
  CHECK(cli({"replay", (dir / "missing.jsonl").string()}).code == 2);
}

TEST_CASE("bootstrap summarises the stores it grew", "[cli]") {
  TempDir dir;
  auto fixture = source_dir() / "fixtures" / "bootstrap";
  auto o = cli({"bootstrap", (fixture / "manifest.json").string(), "--config", (fixture / "config.json").string(),
                "--store", (dir / "store").string()});
  CHECK(o.code == 0);
  CHECK(o.out.find("+5 SOP, +2 PEP\n") != std::string::npos);

  write_text(dir / "empty.json", "[]");
  auto empty = cli({"bootstrap", (dir / "empty.json").string(), "--config", (fixture / "config.json").string(),
                    "--store", (dir / "store").string()});
  CHECK(empty.code == 0);
  CHECK(empty.out == "+0 SOP, +0 PEP\n");

  CHECK(cli({"bootstrap", (dir / "missing.json").string(), "--config", (fixture / "config.json").string()}).code == 2);
  write_text(dir / "broken.json", "[{\"query\": 1}]");
  CHECK(cli({"bootstrap", (dir / "broken.json").string(), "--config", (fixture / "config.json").string(), "--store",
             (dir / "store").string()})
            .code == 2);

  auto listing = cli({"inspect", (dir / "store").string()});
  CHECK(listing.code == 0);
  CHECK(split(trim(listing.out), '\n').size() == 5);
  auto pep = cli({"inspect", (dir / "store").string(), "--pep"});
  CHECK(split(trim(pep.out), '\n').size() == 2);
  CHECK(pep.out.find("agents=Solver") != std::string::npos);
}

TEST_CASE("inspect lists and shows stored SOPs", "[cli]") {
  TempDir dir;
  std::string coding_id;
  {
    Config config;
    config.script = script("websearch.json");
    config.store = dir / "store";
    Runtime runtime(config, StoreAccess::read_write);
    SopCase web;
    web.query = capital_query();
    web.sop = websearch_sop();
    runtime.repository()->add_case(web, runtime.tools().names());
    SopCase coding;
    coding.query = Query{"", "Implement add(a, b).", TaskKind::coding};
    coding.sop = coding_sop();
    coding_id = runtime.repository()->add_case(coding, runtime.tools().names());
  }
  auto listing = cli({"inspect", (dir / "store").string()});
  CHECK(listing.code == 0);
  auto rows = split(trim(listing.out), '\n');
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].find("team=3") != std::string::npos);
  CHECK(rows[0].find("tools=GOOGLE Search") != std::string::npos);

  auto shown = cli({"inspect", (dir / "store").string(), "--show", coding_id});
  CHECK(shown.code == 0);
  CHECK(shown.out.find("Test Analyst -> Programming Expert (if errors) | AnswerAgent (if correct)") != std::string::npos);

  CHECK(cli({"inspect", (dir / "store").string(), "--show", "sop-424242"}).code == 2);
  CHECK(cli({"inspect", (dir / "nowhere").string()}).code == 2);
}
