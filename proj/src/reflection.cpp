#include "sopmas/reflection.hpp"

#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "sopmas/text.hpp"
#include "sopmas/tools.hpp"

namespace sopmas {

namespace fs = std::filesystem;

std::vector<TrainingTask> parse_manifest(const Json& j) {
  if (!j.is_array()) throw ManifestError("manifest must be a JSON list of tasks");
  std::vector<TrainingTask> tasks;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Json& e = j[i];
    const std::string where = "task " + std::to_string(i);
    if (!e.is_object()) throw ManifestError(where + " is not an object");
    try {
      TrainingTask task;
      task.query = make_query(e.at("query").get<std::string>(), task_kind_from_string(e.value("task_kind", "other")));
      if (auto it = e.find(std::string("checker")); it != e.end() && !it->is_null()) {
        CheckerSpec checker;
        checker.command = it->at("command").get<std::string>();
        checker.expected = it->value("expected", "");
        task.checker = std::move(checker);
      }
      if (auto it = e.find(std::string("label")); it != e.end() && !it->is_null()) task.label = it->get<std::string>();
      task.max_iterations = e.value("max_iterations", 3);
      if (task.max_iterations < 1) throw ManifestError(where + ": max_iterations must be at least 1");
      if (!task.checker && !task.label) throw ManifestError(where + ": needs a checker or a label");
      tasks.push_back(std::move(task));
    } catch (const Json::exception& ex) {
      throw ManifestError(where + ": " + ex.what());
    } catch (const ManifestError&) {
      throw;
    } catch (const Error& ex) {
      throw ManifestError(where + ": " + ex.what());
    }
  }
  return tasks;
}

std::vector<TrainingTask> load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot read manifest: " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  Json j = Json::parse(os.str(), nullptr, false);
  if (j.is_discarded()) throw ManifestError("manifest is not valid JSON: " + path.string());
  return parse_manifest(j);
}

std::string extract_code(std::string_view answer) {
  auto open = answer.find("```");
  if (open == std::string_view::npos) return std::string(answer);
  auto body = answer.find('\n', open);
  if (body == std::string_view::npos) return std::string(answer);
  auto close = answer.find("```", body + 1);
  if (close == std::string_view::npos) return std::string(answer.substr(body + 1));
  return std::string(answer.substr(body + 1, close - body - 1));
}

namespace {

class ScratchDir {
 public:
  ScratchDir() {
    static std::mt19937_64 rng{std::random_device{}()};
    path_ = fs::temp_directory_path() / ("sopmas-check-" + std::to_string(rng()));
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace

Verdict judge(Gateway& gateway, const PromptSet& prompts, const ExecutionTranscript& transcript,
              const TrainingTask& task, std::chrono::seconds checker_timeout) {
  if (!task.checker && !task.label) throw NoEvaluator();
  Verdict v;
  v.evaluator = task.checker ? Evaluator::checker : Evaluator::model_judge;
  if (transcript.terminated_by != Termination::final_answer || !transcript.final_answer) {
    v.detail = "no deliverable";
    return v;
  }
  const std::string& answer = *transcript.final_answer;

  if (task.checker) {
    ScratchDir dir;
    write_file(dir.path() / "answer.txt", answer);
    write_file(dir.path() / "solution.py", extract_code(answer));
    SandboxOptions options;
    options.timeout = checker_timeout;
    options.workdir = dir.path();
    auto run = run_sandboxed(task.checker->command, options);
    const bool found = task.checker->expected.empty() || run.output.find(task.checker->expected) != std::string::npos;
    v.passed = run.exit_code == 0 && !run.timed_out && found;
    if (v.passed) {
      v.detail = "checker passed";
    } else if (run.timed_out) {
      v.detail = "checker timed out";
    } else {
      v.detail = "checker failed (exit " + std::to_string(run.exit_code) + "): " + clip(trim(run.output), 400);
    }
    return v;
  }

  ChatPrompt prompt =
      prompts.render(gateway, "judge", {{"query", task.query.text}, {"label", *task.label}, {"answer", answer}});
  v.detail = trim(gateway.complete(prompt).text);
  v.passed = starts_with_icase(v.detail, "PASS");
  return v;
}

SopCase distill_sop(Gateway& gateway, const PromptSet& prompts, const OperatingProcedure& op, const Query& query,
                    const NeedAnalysis& need, const std::set<std::string>& registry_tools, int repair_budget) {
  ChatPrompt prompt =
      prompts.render(gateway, "distillation", {{"query", query.text}, {"op", canonical_dump(to_json(op.sop))}});
  Sop sop = generate_with_repair<Sop>(
      gateway, std::move(prompt), repair_budget,
      [&](const std::string& reply) {
        Sop s = sop_from_json(extract_json_object(reply));
        if (auto diagnostics = validate_sop(s, registry_tools); !diagnostics.empty()) {
          throw ValidationError(std::move(diagnostics));
        }
        return s;
      },
      nullptr);
  SopCase c;
  c.query = query;
  c.need = need;
  c.sop = std::move(sop);
  return c;
}

std::string render_trajectory(const ExecutionTranscript& t) {
  std::map<std::uint64_t, std::string> lines;
  for (const auto& m : t.messages) {
    lines[m.seq] = "[round " + std::to_string(m.round) + "] " + m.sender + " -> " + m.recipient + " (" +
                   std::string(to_string(m.kind)) + (m.outcome ? ", " + *m.outcome : "") + "): " + m.content;
  }
  for (const auto& r : t.tool_calls) {
    lines[r.seq] = "[round " + std::to_string(r.round) + "] " + r.agent + " used " + r.tool + "(" + r.arguments +
                   ") -> " + (r.outcome == ToolOutcome::error ? "error: " : "") + r.observation;
  }
  for (const auto& i : t.interventions) {
    lines[i.seq] = "[round " + std::to_string(i.round) + "] Watcher " +
                   (i.kind == InterventionKind::guidance ? "guided " : "replaced ") + i.target + ": " + i.finding;
  }
  std::string out;
  for (const auto& [seq, line] : lines) out += line + "\n";
  out += "Terminated by " + std::string(to_string(t.terminated_by)) + " after " + std::to_string(t.rounds_used) +
         " rounds.";
  if (t.final_answer) out += "\nFinal answer: " + *t.final_answer;
  return out;
}

Diagnosis diagnose(Gateway& gateway, const PromptSet& prompts, const ExecutionTranscript& transcript,
                   const Verdict& verdict, const std::set<std::string>& registry_tools, int repair_budget) {
  const OperatingProcedure& failing = transcript.op;
  ChatPrompt prompt = prompts.render(gateway, "diagnosis",
                                     {{"query", failing.bound_query.text},
                                      {"verdict", verdict.detail},
                                      {"op", canonical_dump(to_json(failing.sop))},
                                      {"trajectory", render_trajectory(transcript)}});
  Diagnosis d = generate_with_repair<Diagnosis>(
      gateway, std::move(prompt), repair_budget,
      [&](const std::string& reply) {
        Json j = extract_json_object(reply);
        Diagnosis out;
        auto cause = j.find(std::string("failure_cause"));
        if (cause == j.end()) throw SchemaError(SchemaErrorCode::MissingField, "failure_cause");
        if (!cause->is_string()) throw SchemaError(SchemaErrorCode::TypeMismatch, "failure_cause");
        out.failure_cause = cause->get<std::string>();

        auto experiences = j.find(std::string("experiences"));
        if (experiences == j.end()) throw SchemaError(SchemaErrorCode::MissingField, "experiences");
        if (!experiences->is_array()) throw SchemaError(SchemaErrorCode::TypeMismatch, "experiences");
        for (std::size_t i = 0; i < experiences->size(); ++i) {
          auto e = experience_from_json((*experiences)[i], "experiences[" + std::to_string(i) + "]");
          if (failing.sop.find_agent(e.agent)) out.experiences.push_back(std::move(e));
        }
        if (out.experiences.empty()) throw SchemaError(SchemaErrorCode::InvalidValue, "experiences");

        auto revised = j.find(std::string("revised_op"));
        if (revised == j.end()) throw SchemaError(SchemaErrorCode::MissingField, "revised_op");
        const Json& body = revised->contains("sop") ? revised->at("sop") : *revised;
        Sop sop = sop_from_json(body);
        if (auto diagnostics = validate_sop(sop, registry_tools); !diagnostics.empty()) {
          throw ValidationError(std::move(diagnostics));
        }
        out.revised_op = bind_sop(sop, failing.bound_query, failing.provenance);
        return out;
      },
      nullptr);
  return d;
}

LoopResult reflective_loop(Runtime& runtime, const TrainingTask& task, TeamStrategy strategy) {
  Repository* repo = runtime.repository();
  if (!repo || !repo->writable()) throw StorageError("reflection needs a writable repository");
  const auto tools = runtime.tools().names();
  const auto timeout = runtime.config().tools.sandbox_timeout;
  const int budget = runtime.config().repair_budget;

  auto first = run_pipeline(runtime, task.query, strategy);
  const NeedAnalysis need = first.need;
  OperatingProcedure op = first.instantiation.op;
  ExecutionTranscript transcript = std::move(first.transcript);

  LoopResult result;
  for (int iteration = 1;; ++iteration) {
    result.executions = iteration;
    if (transcript.terminated_by == Termination::fatal_error) {
      throw ExecutionFailed("training run failed: " + transcript.fatal_detail);
    }
    result.verdict = judge(runtime.gateway(), runtime.prompts(), transcript, task, timeout);
    if (result.verdict.passed) {
      auto distilled = distill_sop(runtime.gateway(), runtime.prompts(), op, task.query, need, tools, budget);
      result.cases_added.push_back(repo->add_case(std::move(distilled), tools));
      break;
    }
    auto diagnosis = diagnose(runtime.gateway(), runtime.prompts(), transcript, result.verdict, tools, budget);
    PepRecord record;
    record.query = task.query;
    record.failure_cause = diagnosis.failure_cause;
    record.experiences = diagnosis.experiences;
    result.records_added.push_back(repo->pep_add(std::move(record)));
    if (iteration >= task.max_iterations) break;
    op = std::move(diagnosis.revised_op);
    transcript = execute(runtime, op);
  }
  return result;
}

BootstrapSummary bootstrap_repository(Runtime& runtime, const std::vector<TrainingTask>& tasks) {
  BootstrapSummary summary;
  for (const auto& task : tasks) {
    auto r = reflective_loop(runtime, task, bootstrap_strategy(task.query.kind));
    summary.cases_added += r.cases_added.size();
    summary.records_added += r.records_added.size();
    summary.tasks.push_back(std::move(r));
  }
  return summary;
}

}  // namespace sopmas
