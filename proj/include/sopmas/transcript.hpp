#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sopmas/domain.hpp"

namespace sopmas {

class TranscriptError : public Error {
 public:
  using Error::Error;
};

/// One JSON object per line: every message, tool record and intervention in
/// commit order, then a summary record. Wall time is left out so identical
/// runs produce identical bytes.
std::string transcript_jsonl(const ExecutionTranscript& transcript);
void write_transcript(const std::filesystem::path& path, const ExecutionTranscript& transcript);

/// Throws TranscriptError for empty or unparseable input.
ExecutionTranscript parse_transcript(std::string_view jsonl);
ExecutionTranscript read_transcript(const std::filesystem::path& path);

struct InvariantCheck {
  std::string name;
  bool passed = true;
  std::string detail;
};

struct ReplayReport {
  std::vector<InvariantCheck> checks;

  bool passed() const;
  const InvariantCheck* find(std::string_view name) const;
  std::string render() const;
};

/// Re-checks causality, reachability, the round cap, the intervention cap,
/// purge completeness, final-answer legality and tool-record sanity.
ReplayReport validate_transcript(const ExecutionTranscript& transcript);

}  // namespace sopmas
