#pragma once

// Test-time pipeline: analyze the need, retrieve similar SOPs, instantiate an
// operating procedure and execute it under the Watcher.

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sopmas/config.hpp"
#include "sopmas/engine.hpp"
#include "sopmas/instantiation.hpp"
#include "sopmas/prompts.hpp"
#include "sopmas/repository.hpp"
#include "sopmas/tools.hpp"
#include "sopmas/watcher.hpp"

namespace sopmas {

std::unique_ptr<Gateway> make_gateway(const Config& config, std::shared_ptr<PromptLog> log = nullptr);

/// Everything one command needs, built from a validated config. A read-only
/// runtime over a store that does not exist yet behaves as an empty store.
class Runtime {
 public:
  Runtime(Config config, StoreAccess access);

  const Config& config() const { return config_; }
  Config& config() { return config_; }
  Gateway& gateway() { return *gateway_; }
  const ToolRegistry& tools() const { return tools_; }
  const PromptSet& prompts() const { return prompts_; }
  Repository* repository() { return repository_.get(); }
  const Repository* repository() const { return repository_.get(); }

 private:
  Config config_;
  std::unique_ptr<Gateway> gateway_;
  ToolRegistry tools_;
  PromptSet prompts_;
  std::unique_ptr<Repository> repository_;
};

/// Stable id derived from the query text.
std::string query_id(std::string_view text);
Query make_query(std::string text, TaskKind kind);

struct PipelineResult {
  NeedAnalysis need;
  RetrievalResult retrieval;
  InstantiationResult instantiation;
  ExecutionTranscript transcript;
  std::vector<ReviewEvent> reviews;
};

/// Runs `op` through the engine, supervised unless the watcher is disabled.
ExecutionTranscript execute(Runtime& runtime, const OperatingProcedure& op, std::vector<ReviewEvent>* reviews = nullptr);

/// The full pipeline. Fixed-SOP mode skips need analysis and retrieval;
/// no-RAG mode skips retrieval only. Throws ConfigError for an unknown
/// fixed SOP id.
PipelineResult run_pipeline(Runtime& runtime, const Query& query, TeamStrategy strategy = TeamStrategy::standard);

}  // namespace sopmas
