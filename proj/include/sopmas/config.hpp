#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "sopmas/engine.hpp"
#include "sopmas/gateway.hpp"
#include "sopmas/repository.hpp"
#include "sopmas/serialize.hpp"
#include "sopmas/tools.hpp"
#include "sopmas/watcher.hpp"

namespace sopmas {

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Everything a command needs. Built from defaults, then a JSON config file,
/// then command-line flags, each layer overriding the previous one.
struct Config {
  std::string backend = "scripted";  // scripted | http
  std::optional<std::filesystem::path> script;
  HttpConfig http;
  double temperature = 0.6;
  int max_tokens = 2048;
  std::size_t embedding_dimension = 256;

  std::filesystem::path store = "store";
  std::filesystem::path runs = "runs";
  std::optional<std::filesystem::path> prompts;
  std::optional<std::filesystem::path> prompt_log;

  RetrievalConfig retrieval;
  bool use_sop_rag = true;
  std::optional<std::string> fixed_sop;  // case id applied verbatim (no instantiation)
  int repair_budget = 2;

  EnginePolicy engine;
  InterventionPolicy watcher;
  ToolConfig tools;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Applies the keys of `j` on top of `config`. Relative paths are resolved
/// against `base_dir`. Unknown keys are rejected.
void apply_config_json(Config& config, const Json& j, const std::filesystem::path& base_dir);

/// Defaults overridden by the file at `path`.
Config load_config(const std::filesystem::path& path);

Json config_to_json(const Config& config);

}  // namespace sopmas
