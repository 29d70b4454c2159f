#pragma once

// Shared helpers for the unit and acceptance suites.

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "sopmas/domain.hpp"
#include "sopmas/gateway.hpp"
#include "sopmas/serialize.hpp"
#include "sopmas/tools.hpp"

namespace sopmas::testing {

inline std::filesystem::path source_dir() { return SOPMAS_SOURCE_DIR; }

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string fixture_text(const std::string& name) { return read_text(source_dir() / "fixtures" / name); }

inline Sop websearch_sop() { return sop_from_json(extract_json_object(fixture_text("sop_websearch.json"))); }
inline Sop coding_sop() { return sop_from_json(extract_json_object(fixture_text("sop_coding_loop.json"))); }

inline std::unique_ptr<Gateway> script_gateway(const std::string& name) {
  return std::make_unique<Gateway>(ScriptedBackend::from_file(source_dir() / "fixtures" / "scripts" / name),
                                   std::make_unique<HashingEmbedder>(256));
}

inline ToolRegistry fixture_tools() {
  ToolConfig cfg;
  cfg.search_corpus = source_dir() / "fixtures" / "search_corpus.json";
  return default_registry(cfg);
}

inline Query capital_query() { return Query{"capital", "What is the capital of France?", TaskKind::qa}; }

class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng{std::random_device{}()};
    path_ = std::filesystem::temp_directory_path() / ("sopmas-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Random words from a small vocabulary so that hashed embeddings collide and
// overlap often enough to exercise ties and near-ties.
inline std::string random_text(std::mt19937_64& rng, int min_words = 1, int max_words = 8) {
  static const char* vocab[] = {"travel", "plan", "flight", "hotel", "budget", "code", "test", "python",
                                "search", "web", "answer", "city", "museum", "date", "list", "sort",
                                "string", "math", "prime", "graph", "tool", "bash", "review", "summary"};
  std::uniform_int_distribution<int> count(min_words, max_words);
  std::uniform_int_distribution<std::size_t> pick(0, std::size(vocab) - 1);
  std::string out;
  int n = count(rng);
  for (int i = 0; i < n; ++i) {
    if (!out.empty()) out += ' ';
    out += vocab[pick(rng)];
  }
  return out;
}

/// A minimal valid linear SOP: User -> a0 -> a1 -> ... -> End.
inline Sop linear_sop(int team_size, const std::vector<std::string>& tools = {}) {
  Sop s;
  for (int i = 0; i < team_size; ++i) {
    std::string name = "Agent" + std::to_string(i);
    s.team.push_back(name);
    s.agents.push_back(AgentSpec{name, "role " + name, "instruction for " + name, tools});
  }
  s.structure.edges.push_back({std::string(kUserNode), s.team.front(), std::nullopt});
  for (int i = 0; i + 1 < team_size; ++i) s.structure.edges.push_back({s.team[i], s.team[i + 1], std::nullopt});
  s.structure.edges.push_back({s.team.back(), std::string(kEndNode), std::nullopt});
  s.structure.description = "linear pipeline";
  return s;
}

}  // namespace sopmas::testing
