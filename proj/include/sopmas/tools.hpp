#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sopmas/domain.hpp"

namespace sopmas {

struct ToolResult {
  std::string observation;
  bool ok = true;
};

using ToolHandler = std::function<ToolResult(const std::string& arguments)>;

struct ToolInfo {
  std::string name;
  std::string usage;  // shown to agents in their prompt
  ToolHandler handler;
};

class ToolRegistry {
 public:
  /// Throws if `name` is already registered.
  void add(std::string name, std::string usage, ToolHandler handler);
  /// Registers `alias` with the handler and usage of `target`.
  void alias(std::string alias, const std::string& target);

  bool contains(const std::string& name) const { return tools_.contains(name); }
  const ToolInfo* find(const std::string& name) const;
  std::set<std::string> names() const;

 private:
  std::map<std::string, ToolInfo> tools_;
};

struct SandboxResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string output;  // stdout and stderr interleaved
};

struct SandboxOptions {
  std::chrono::seconds timeout{10};
  // Working directory; a fresh temporary directory is used when unset.
  std::optional<std::filesystem::path> workdir;
  bool isolate_network = true;
  std::size_t max_output = 64 * 1024;
};

/// Runs `command` with /bin/sh in a child process: own process group, new
/// network namespace, CPU and file-size limits, killed on timeout.
SandboxResult run_sandboxed(const std::string& command, const SandboxOptions& options = {});

struct SearchEntry {
  std::string query;
  std::string snippet;
};

std::vector<SearchEntry> load_search_corpus(const std::filesystem::path& path);

/// Exact (case-insensitive) query match first, then the entry with the largest
/// token overlap. Returns nullopt when nothing overlaps.
std::optional<std::string> search_corpus(const std::vector<SearchEntry>& corpus, const std::string& query);

struct ToolConfig {
  std::chrono::seconds sandbox_timeout{10};
  std::optional<std::filesystem::path> file_root;
  std::optional<std::filesystem::path> search_corpus;
  std::vector<SearchEntry> inline_corpus;
  // name -> registered tool, e.g. "GOOGLE Search" -> "search_stub"
  std::map<std::string, std::string> aliases = {{"GOOGLE Search", "search_stub"}};
};

/// bash, file_read and search_stub, plus configured aliases.
ToolRegistry default_registry(const ToolConfig& config = {});

}  // namespace sopmas
