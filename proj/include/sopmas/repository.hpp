#pragma once

// Persistent SOP repository and personalized experience pool.
//
// Layout of a store directory:
//   manifest.json     insertion order of both collections, next ids, embedding dimension
//   sop/<id>.json     one SopCase per file
//   pep/<id>.json     one PepRecord per file
//
// Retrieval is a linear scan. Ties are broken by insertion order.

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "sopmas/domain.hpp"
#include "sopmas/gateway.hpp"

namespace sopmas {

enum class RetrievalMode { hybrid, query_only, need_only };

std::string_view to_string(RetrievalMode mode);
RetrievalMode retrieval_mode_from_string(std::string_view text);

struct RetrievalConfig {
  double lambda = 0.3;
  std::size_t k = 2;
  RetrievalMode mode = RetrievalMode::hybrid;

  void validate() const;
};

class LambdaOutOfRange : public Error {
 public:
  explicit LambdaOutOfRange(double lambda);
};

class StorageError : public Error {
 public:
  using Error::Error;
};

/// lambda * sim_q + (1 - lambda) * sim_n.
double hybrid_score(double sim_q, double sim_n, double lambda);

struct ScoredCase {
  SopCase sop_case;
  double score = 0.0;
  double sim_query = 0.0;
  double sim_need = 0.0;
  std::size_t insertion_index = 0;
};

struct RetrievalResult {
  std::vector<ScoredCase> hits;
  // Set when the repository holds no cases; callers fall back to
  // instantiation without exemplars.
  bool repository_empty = false;
  RetrievalMode effective_mode = RetrievalMode::hybrid;
};

/// Scores every case and returns the top min(k, cases.size()) by descending
/// score, earlier insertion first on ties. An empty `need_embedding` forces
/// query-only scoring.
std::vector<ScoredCase> rank_cases(std::span<const SopCase> cases, std::span<const double> query_embedding,
                                   std::span<const double> need_embedding, const RetrievalConfig& config);

struct ScoredRecord {
  PepRecord record;
  double similarity = 0.0;
};

std::vector<ScoredRecord> rank_records(std::span<const PepRecord> records, std::span<const double> query_embedding,
                                       std::size_t k);

enum class StoreAccess { read_write, read_only };

class Repository {
 public:
  /// Opens (creating when writable) the store at `root`. Cached embeddings
  /// whose dimension differs from the gateway's are recomputed and, when
  /// writable, rewritten.
  Repository(std::filesystem::path root, const Gateway& gateway, StoreAccess access = StoreAccess::read_write);

  Repository(const Repository&) = delete;
  Repository& operator=(const Repository&) = delete;

  /// Validates, embeds when needed, persists, and returns the assigned id.
  /// Throws ValidationError or StorageError; the store is unchanged on failure.
  std::string add_case(SopCase sop_case, const std::set<std::string>& registry_tools);

  RetrievalResult retrieve(const Query& query, const NeedAnalysis& need, const RetrievalConfig& config) const;

  std::string pep_add(PepRecord record);
  std::vector<ScoredRecord> pep_lookup(const Query& query, std::size_t k) const;

  std::size_t case_count() const;
  std::size_t record_count() const;
  std::vector<SopCase> cases() const;
  std::vector<PepRecord> records() const;
  std::optional<SopCase> find_case(std::string_view id) const;
  std::optional<PepRecord> find_record(std::string_view id) const;

  const std::filesystem::path& root() const { return root_; }
  bool writable() const { return access_ == StoreAccess::read_write; }

 private:
  void load();
  void write_manifest() const;
  void write_entry(const std::filesystem::path& path, const std::string& body) const;
  void ensure_embeddings(SopCase& c) const;
  void ensure_embeddings(PepRecord& r) const;
  void require_writable() const;

  std::filesystem::path root_;
  const Gateway& gateway_;
  StoreAccess access_;
  std::vector<SopCase> cases_;
  std::vector<PepRecord> records_;
  std::uint64_t next_case_ = 1;
  std::uint64_t next_record_ = 1;
  mutable std::shared_mutex mu_;
};

}  // namespace sopmas
