#include "sopmas/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <sstream>

#include "sopmas/pipeline.hpp"
#include "sopmas/reflection.hpp"
#include "sopmas/text.hpp"
#include "sopmas/transcript.hpp"

namespace sopmas {

namespace fs = std::filesystem;

int cmd_bootstrap(const fs::path& manifest, const Config& config, std::ostream& out, std::ostream& err) {
  std::vector<TrainingTask> tasks;
  std::unique_ptr<Runtime> runtime;
  try {
    tasks = load_manifest(manifest);
    runtime = std::make_unique<Runtime>(config, StoreAccess::read_write);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    auto summary = bootstrap_repository(*runtime, tasks);
    for (std::size_t i = 0; i < summary.tasks.size(); ++i) {
      const auto& t = summary.tasks[i];
      out << "task " << i + 1 << ": " << (t.verdict.passed ? "passed" : "failed") << " after " << t.executions
          << (t.executions == 1 ? " execution" : " executions") << "\n";
    }
    out << "+" << summary.cases_added << " SOP, +" << summary.records_added << " PEP\n";
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int cmd_run(const RunRequest& request, const Config& config, std::ostream& out, std::ostream& err) {
  const auto started = std::chrono::steady_clock::now();
  std::unique_ptr<Runtime> runtime;
  try {
    runtime = std::make_unique<Runtime>(config, StoreAccess::read_only);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  const Query query = make_query(request.query, request.kind);
  PipelineResult result;
  try {
    result = run_pipeline(*runtime, query);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }

  const fs::path path = request.out.value_or(runtime->config().runs / (query.id + ".jsonl"));
  try {
    write_transcript(path, result.transcript);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }

  const auto& t = result.transcript;
  if (t.final_answer) {
    out << *t.final_answer << "\n";
  } else {
    out << "(no final answer)\n";
  }
  out << "transcript: " << path.string() << "\n";
  out << "terminated: " << to_string(t.terminated_by) << " after " << t.rounds_used << " rounds, "
      << t.interventions.size() << " interventions\n";
  const auto stats = runtime->gateway().stats();
  const auto wall =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
  out << "timing: wall " << wall << " ms, execution " << t.wall_time.count() << " ms, gateway calls " << stats.calls
      << ", tokens " << stats.prompt_tokens << " prompt / " << stats.completion_tokens << " completion\n";

  if (t.terminated_by == Termination::fatal_error) {
    err << "error: execution failed: " << t.fatal_detail << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_replay(const fs::path& transcript, std::ostream& out, std::ostream& err) {
  ExecutionTranscript t;
  try {
    t = read_transcript(transcript);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  auto report = validate_transcript(t);
  out << report.render();
  return report.passed() ? kExitOk : kExitFailure;
}

std::string describe_case(const SopCase& c) {
  std::ostringstream os;
  os << "id: " << c.id << "\n";
  os << "query: " << c.query.text << " (" << to_string(c.query.kind) << ")\n";
  if (!c.need.empty()) os << "need: " << c.need.text << "\n";
  if (!c.created_at.empty()) os << "created: " << c.created_at << "\n";
  os << "team: ";
  for (std::size_t i = 0; i < c.sop.team.size(); ++i) os << (i ? ", " : "") << c.sop.team[i];
  os << "\n\nagents:\n";
  for (const auto& a : c.sop.agents) {
    os << "  " << a.name;
    if (!a.tools.empty()) {
      os << " [tools:";
      for (const auto& t : a.tools) os << " " << t;
      os << "]";
    }
    os << "\n    responsibility: " << a.responsibility << "\n    instruction: " << a.instruction << "\n";
  }

  os << "\ncommunication:\n";
  std::vector<std::string> order;
  std::map<std::string, std::vector<const Edge*>> by_sender;
  for (const auto& e : c.sop.structure.edges) {
    if (!by_sender.count(e.from)) order.push_back(e.from);
    by_sender[e.from].push_back(&e);
  }
  int n = 0;
  for (const auto& from : order) {
    os << "  " << ++n << ". " << from << " -> ";
    const auto& edges = by_sender[from];
    for (std::size_t i = 0; i < edges.size(); ++i) {
      os << (i ? " | " : "") << edges[i]->to;
      if (edges[i]->condition) os << " (if " << *edges[i]->condition << ")";
    }
    os << "\n";
  }
  if (!c.sop.structure.description.empty()) os << "\ndescription:\n" << c.sop.structure.description << "\n";
  return os.str();
}

std::string describe_record(const PepRecord& r) {
  std::ostringstream os;
  os << "id: " << r.id << "\n";
  os << "query: " << r.query.text << "\n";
  os << "failure cause: " << r.failure_cause << "\n";
  for (const auto& e : r.experiences) {
    os << "  [" << e.agent << "] " << e.error_attribution << "\n    strategy: " << e.improvement_strategy << "\n";
  }
  return os.str();
}

int cmd_inspect(const InspectRequest& request, const Config& config, std::ostream& out, std::ostream& err) {
  if (!fs::is_directory(request.store)) {
    err << "error: store not found: " << request.store.string() << "\n";
    return kExitUsage;
  }
  Gateway gateway(std::make_unique<ScriptedBackend>(std::vector<ScriptRule>{}),
                  std::make_unique<HashingEmbedder>(config.embedding_dimension));
  std::unique_ptr<Repository> repo;
  try {
    repo = std::make_unique<Repository>(request.store, gateway, StoreAccess::read_only);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (request.show) {
    if (auto c = repo->find_case(*request.show)) {
      out << describe_case(*c);
      return kExitOk;
    }
    if (auto r = repo->find_record(*request.show)) {
      out << describe_record(*r);
      return kExitOk;
    }
    err << "error: no case or record with id '" << *request.show << "'\n";
    return kExitUsage;
  }

  if (request.pep) {
    for (const auto& r : repo->records()) {
      std::set<std::string> agents;
      for (const auto& e : r.experiences) agents.insert(e.agent);
      std::string names;
      for (const auto& a : agents) names += (names.empty() ? "" : ",") + a;
      out << r.id << "  agents=" << names << "  query: " << clip(r.query.text, 60) << "\n";
    }
    return kExitOk;
  }
  for (const auto& c : repo->cases()) {
    std::set<std::string> tools;
    for (const auto& a : c.sop.agents) tools.insert(a.tools.begin(), a.tools.end());
    std::string names;
    for (const auto& t : tools) names += (names.empty() ? "" : ",") + t;
    out << c.id << "  team=" << c.sop.team.size() << "  tools=" << (names.empty() ? "-" : names)
        << "  query: " << clip(c.query.text, 60) << "\n";
  }
  return kExitOk;
}

namespace {

struct Overrides {
  std::optional<std::string> config;
  std::optional<std::string> store;
  std::optional<std::string> backend;
  std::optional<std::string> script;
  std::optional<std::string> prompt_log;
  std::optional<std::size_t> k;
  std::optional<double> lambda;
  std::optional<std::string> mode;
  bool no_sop_rag = false;
  std::optional<std::string> fixed_sop;
  bool no_watcher = false;
  bool no_pep = false;
  std::optional<int> interval;
  std::optional<int> env_threshold;
  std::optional<int> cap;
  std::optional<int> max_rounds;
  std::optional<std::uint64_t> seed;
  bool parallel = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON config file");
  cmd->add_option("--store", o.store, "Store directory");
  cmd->add_option("--backend", o.backend, "Model backend")->check(CLI::IsMember({"scripted", "http"}));
  cmd->add_option("--script", o.script, "Rules file for the scripted backend");
  cmd->add_option("--prompt-log", o.prompt_log, "Append every model call to this JSONL file");
}

void add_run_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--k", o.k, "Exemplar SOPs to retrieve")->check(CLI::PositiveNumber);
  cmd->add_option("--lambda", o.lambda, "Weight of query similarity in retrieval")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--mode", o.mode, "Retriever")->check(CLI::IsMember({"hybrid", "query", "need"}));
  cmd->add_flag("--no-sop-rag", o.no_sop_rag, "Instantiate without retrieved exemplars");
  cmd->add_option("--fixed-sop", o.fixed_sop, "Apply a stored SOP verbatim");
  cmd->add_flag("--no-watcher", o.no_watcher, "Run without supervision");
  cmd->add_flag("--no-pep", o.no_pep, "Supervise without past experiences");
  cmd->add_option("--interval", o.interval, "Rounds between reviews")->check(CLI::PositiveNumber);
  cmd->add_option("--env-threshold", o.env_threshold, "Consecutive tool steps that trigger a review")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--cap", o.cap, "Intervention cap, negative for none");
  cmd->add_option("--max-rounds", o.max_rounds, "Round cap")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "Seed recorded with the run");
  cmd->add_flag("--parallel", o.parallel, "Step ready agents concurrently");
}

Config build_config(const Overrides& o) {
  Config c = o.config ? load_config(*o.config) : Config{};
  if (o.store) c.store = *o.store;
  if (o.backend) c.backend = *o.backend;
  if (o.script) c.script = fs::path(*o.script);
  if (o.prompt_log) c.prompt_log = fs::path(*o.prompt_log);
  if (o.k) c.retrieval.k = *o.k;
  if (o.lambda) c.retrieval.lambda = *o.lambda;
  if (o.mode) c.retrieval.mode = retrieval_mode_from_string(*o.mode);
  if (o.no_sop_rag) c.use_sop_rag = false;
  if (o.fixed_sop) c.fixed_sop = *o.fixed_sop;
  if (o.no_watcher) c.watcher.enabled = false;
  if (o.no_pep) c.watcher.use_pep = false;
  if (o.interval) c.watcher.interval = *o.interval;
  if (o.env_threshold) c.watcher.env_threshold = *o.env_threshold;
  if (o.cap) c.watcher.cap = *o.cap;
  if (o.max_rounds) c.engine.max_rounds = *o.max_rounds;
  if (o.seed) c.engine.seed = *o.seed;
  if (o.parallel) c.engine.parallel = true;
  return c;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SOP-guided multi-agent runner"};
  app.require_subcommand(1);

  Overrides o;
  std::string manifest;
  auto* bootstrap = app.add_subcommand("bootstrap", "Build the SOP repository and experience pool from training tasks");
  bootstrap->add_option("manifest", manifest, "Training task manifest")->required();
  add_common(bootstrap, o);

  RunRequest run;
  std::string kind = "other";
  std::optional<std::string> run_out;
  auto* run_cmd = app.add_subcommand("run", "Answer one query");
  run_cmd->add_option("query", run.query, "Query text")->required();
  run_cmd->add_option("--kind", kind, "Task kind")->check(CLI::IsMember({"planning", "qa", "coding", "other"}));
  run_cmd->add_option("--out", run_out, "Transcript path");
  add_common(run_cmd, o);
  add_run_flags(run_cmd, o);

  std::string transcript;
  auto* replay = app.add_subcommand("replay", "Re-check the invariants of a transcript");
  replay->add_option("transcript", transcript, "Transcript JSONL")->required();

  InspectRequest inspect;
  std::optional<std::string> inspect_store;
  auto* inspect_cmd = app.add_subcommand("inspect", "List or show stored SOPs and experiences");
  inspect_cmd->add_option("store", inspect_store, "Store directory");
  inspect_cmd->add_option("--show", inspect.show, "Print one case or record");
  inspect_cmd->add_flag("--pep", inspect.pep, "List experience records");
  inspect_cmd->add_option("--config", o.config, "JSON config file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    auto parsed = app.get_subcommands();
    err << (parsed.empty() ? app.help() : parsed.front()->help());
    return kExitUsage;
  }

  if (*replay) return cmd_replay(transcript, out, err);

  Config config;
  try {
    config = build_config(o);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (*bootstrap) return cmd_bootstrap(manifest, config, out, err);
  if (*inspect_cmd) {
    inspect.store = inspect_store ? fs::path(*inspect_store) : config.store;
    return cmd_inspect(inspect, config, out, err);
  }
  run.kind = task_kind_from_string(kind);
  run.out = run_out ? std::optional<fs::path>(*run_out) : std::nullopt;
  return cmd_run(run, config, out, err);
}

}  // namespace sopmas
