#pragma once

// Training-time reflection: judge each run, distill passing procedures into
// the SOP repository and turn failures into experience records plus a
// revised procedure for the next attempt.

#include <chrono>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sopmas/domain.hpp"
#include "sopmas/gateway.hpp"
#include "sopmas/instantiation.hpp"
#include "sopmas/pipeline.hpp"
#include "sopmas/prompts.hpp"

namespace sopmas {

struct CheckerSpec {
  std::string command;   // run with /bin/sh in a scratch directory
  std::string expected;  // required substring of the command output; empty accepts any output
};

struct TrainingTask {
  Query query;
  std::optional<CheckerSpec> checker;
  std::optional<std::string> label;  // reference answer for the model judge
  int max_iterations = 3;
};

class ManifestError : public Error {
 public:
  using Error::Error;
};

class NoEvaluator : public Error {
 public:
  NoEvaluator() : Error("task has neither a checker nor a label for the model judge") {}
};

/// A JSON list of {query, task_kind, checker: {command, expected}, label,
/// max_iterations}. Throws ManifestError.
std::vector<TrainingTask> parse_manifest(const Json& j);
std::vector<TrainingTask> load_manifest(const std::filesystem::path& path);

/// The first fenced code block of `answer`, or the whole answer when it has none.
std::string extract_code(std::string_view answer);

/// Checker verdict when the task has a checker, else a model-judge verdict
/// against the label. The checker sees answer.txt and solution.py in its
/// working directory.
Verdict judge(Gateway& gateway, const PromptSet& prompts, const ExecutionTranscript& transcript,
              const TrainingTask& task, std::chrono::seconds checker_timeout = std::chrono::seconds(10));

/// Asks the model to generalize `op` and returns the case to store.
SopCase distill_sop(Gateway& gateway, const PromptSet& prompts, const OperatingProcedure& op, const Query& query,
                    const NeedAnalysis& need, const std::set<std::string>& registry_tools, int repair_budget = 2);

/// Communication log and tool-use trace in commit order.
std::string render_trajectory(const ExecutionTranscript& transcript);

struct Diagnosis {
  std::string failure_cause;
  std::vector<AgentExperience> experiences;  // each names an agent of the failing procedure
  OperatingProcedure revised_op;
  int repairs = 0;
};

Diagnosis diagnose(Gateway& gateway, const PromptSet& prompts, const ExecutionTranscript& transcript,
                   const Verdict& verdict, const std::set<std::string>& registry_tools, int repair_budget = 2);

/// Thrown when a training run ends with a fatal error.
class ExecutionFailed : public Error {
 public:
  using Error::Error;
};

struct LoopResult {
  Verdict verdict;
  int executions = 0;
  std::vector<std::string> cases_added;
  std::vector<std::string> records_added;
};

/// Runs, judges and revises up to task.max_iterations times. Requires a
/// writable repository.
LoopResult reflective_loop(Runtime& runtime, const TrainingTask& task, TeamStrategy strategy = TeamStrategy::standard);

struct BootstrapSummary {
  std::vector<LoopResult> tasks;
  std::size_t cases_added = 0;
  std::size_t records_added = 0;
};

BootstrapSummary bootstrap_repository(Runtime& runtime, const std::vector<TrainingTask>& tasks);

}  // namespace sopmas
