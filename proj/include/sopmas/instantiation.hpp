#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sopmas/domain.hpp"
#include "sopmas/gateway.hpp"
#include "sopmas/prompts.hpp"
#include "sopmas/serialize.hpp"

namespace sopmas {

/// Asks the model for the objective and required capabilities of `query`.
/// An empty reply is retried once; a second empty reply throws
/// ModelError(EmptyReply).
NeedAnalysis analyze_need(Gateway& gateway, const PromptSet& prompts, const Query& query);

/// Extracts the first JSON object from `text` and reads it as an operating
/// procedure bound to `query`. Throws SchemaError.
OperatingProcedure parse_op(std::string_view text, const Query& query = {});

enum class TeamStrategy {
  standard,
  minimal,  // smallest team that can work, grown only after failures
  diverse,  // several specialised roles plus a final-answer submitter
};

/// The strategy used while bootstrapping a repository for this kind of task.
TeamStrategy bootstrap_strategy(TaskKind kind);
std::string strategy_hint(TeamStrategy strategy);

struct InstantiationOptions {
  int repair_budget = 2;
  TeamStrategy strategy = TeamStrategy::standard;
  // Bound verbatim without a model call when set.
  std::optional<SopCase> fixed_sop;
};

struct InstantiationResult {
  OperatingProcedure op;
  int repairs = 0;
  bool model_called = false;
};

enum class InstantiationErrorCode { ParseFailed, ValidationFailed };

class InstantiationError : public Error {
 public:
  InstantiationError(InstantiationErrorCode code, const std::string& detail, int repairs)
      : Error(std::string(code == InstantiationErrorCode::ParseFailed ? "ParseFailed" : "ValidationFailed") +
              " after " + std::to_string(repairs) + " repairs: " + detail),
        code_(code) {}
  InstantiationErrorCode code() const { return code_; }

 private:
  InstantiationErrorCode code_;
};

/// Sends a model-generated JSON reply through parse and validation, re-prompting
/// with the error up to `repair_budget` times. Shared by every step that asks
/// the model for a structure.
template <typename T, typename Parse>
T generate_with_repair(Gateway& gateway, ChatPrompt prompt, int repair_budget, Parse&& parse, int* repairs);

/// Renders the exemplar section of the instantiation prompt.
std::string render_exemplars(const std::vector<SopCase>& exemplars);

InstantiationResult instantiate(Gateway& gateway, const PromptSet& prompts, const Query& query, const NeedAnalysis& need,
                                const std::vector<SopCase>& retrieved, const std::set<std::string>& registry_tools,
                                const InstantiationOptions& options = {});

// ---------------------------------------------------------------------------

template <typename T, typename Parse>
T generate_with_repair(Gateway& gateway, ChatPrompt prompt, int repair_budget, Parse&& parse, int* repairs) {
  InstantiationErrorCode code = InstantiationErrorCode::ParseFailed;
  std::string error;
  for (int attempt = 0;; ++attempt) {
    std::string reply = gateway.complete(prompt).text;
    try {
      T value = parse(reply);
      if (repairs) *repairs = attempt;
      return value;
    } catch (const ValidationError& e) {
      code = InstantiationErrorCode::ValidationFailed;
      error = e.what();
    } catch (const SchemaError& e) {
      code = InstantiationErrorCode::ParseFailed;
      error = e.what();
    }
    if (attempt >= repair_budget) {
      if (repairs) *repairs = attempt;
      throw InstantiationError(code, error, attempt);
    }
    append_repair(prompt, reply, error);
  }
}

}  // namespace sopmas
