#pragma once

// Operator commands. Exit codes: 0 success, 1 execution failure, 2 usage or
// configuration error.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sopmas/config.hpp"
#include "sopmas/domain.hpp"

namespace sopmas {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

int cmd_bootstrap(const std::filesystem::path& manifest, const Config& config, std::ostream& out, std::ostream& err);

struct RunRequest {
  std::string query;
  TaskKind kind = TaskKind::other;
  // Transcript destination; defaults to <runs>/<query id>.jsonl.
  std::optional<std::filesystem::path> out;
};

int cmd_run(const RunRequest& request, const Config& config, std::ostream& out, std::ostream& err);

int cmd_replay(const std::filesystem::path& transcript, std::ostream& out, std::ostream& err);

struct InspectRequest {
  std::filesystem::path store;
  std::optional<std::string> show;  // case or record id
  bool pep = false;                 // list experience records instead of cases
};

int cmd_inspect(const InspectRequest& request, const Config& config, std::ostream& out, std::ostream& err);

/// Human-readable rendering of one stored case, conditional edges grouped by sender.
std::string describe_case(const SopCase& c);
std::string describe_record(const PepRecord& r);

/// Parses `args` (without the program name) and dispatches to a command.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sopmas
