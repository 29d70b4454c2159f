#include "sopmas/repository.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>

#include "sopmas/serialize.hpp"

namespace sopmas {

namespace fs = std::filesystem;

std::string_view to_string(RetrievalMode mode) {
  switch (mode) {
    case RetrievalMode::hybrid: return "hybrid";
    case RetrievalMode::query_only: return "query";
    case RetrievalMode::need_only: return "need";
  }
  return "hybrid";
}

RetrievalMode retrieval_mode_from_string(std::string_view text) {
  if (text == "hybrid") return RetrievalMode::hybrid;
  if (text == "query" || text == "query_only") return RetrievalMode::query_only;
  if (text == "need" || text == "need_only") return RetrievalMode::need_only;
  throw Error("unknown retrieval mode: " + std::string(text));
}

LambdaOutOfRange::LambdaOutOfRange(double lambda)
    : Error("lambda must lie in [0, 1], got " + std::to_string(lambda)) {}

void RetrievalConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw LambdaOutOfRange(lambda);
  if (k < 1) throw Error("retrieval k must be at least 1");
}

double hybrid_score(double sim_q, double sim_n, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw LambdaOutOfRange(lambda);
  return lambda * sim_q + (1.0 - lambda) * sim_n;
}

std::vector<ScoredCase> rank_cases(std::span<const SopCase> cases, std::span<const double> query_embedding,
                                   std::span<const double> need_embedding, const RetrievalConfig& config) {
  config.validate();
  RetrievalMode mode = need_embedding.empty() ? RetrievalMode::query_only : config.mode;
  double lambda = mode == RetrievalMode::query_only  ? 1.0
                  : mode == RetrievalMode::need_only ? 0.0
                                                     : config.lambda;
  std::vector<ScoredCase> scored;
  scored.reserve(cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    ScoredCase s;
    s.insertion_index = i;
    s.sim_query = cosine(query_embedding, cases[i].query_embedding);
    s.sim_need = need_embedding.empty() ? 0.0 : cosine(need_embedding, cases[i].need_embedding);
    s.score = hybrid_score(s.sim_query, s.sim_need, lambda);
    scored.push_back(std::move(s));
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredCase& a, const ScoredCase& b) { return a.score > b.score; });
  scored.resize(std::min(config.k, scored.size()));
  for (auto& s : scored) s.sop_case = cases[s.insertion_index];
  return scored;
}

std::vector<ScoredRecord> rank_records(std::span<const PepRecord> records, std::span<const double> query_embedding,
                                       std::size_t k) {
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < records.size(); ++i) {
    scored.emplace_back(cosine(query_embedding, records[i].query_embedding), i);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  scored.resize(std::min(k, scored.size()));
  std::vector<ScoredRecord> out;
  for (const auto& [sim, i] : scored) out.push_back(ScoredRecord{records[i], sim});
  return out;
}

namespace {

// Advisory inter-process lock on <root>/.lock.
class FileLock {
 public:
  FileLock(const fs::path& root, bool exclusive) {
    fd_ = ::open((root / ".lock").c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) return;  // read-only media: in-process locking still applies
    if (::flock(fd_, exclusive ? LOCK_EX : LOCK_SH) != 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }
  ~FileLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

std::string make_id(std::string_view prefix, std::uint64_t n) {
  std::ostringstream os;
  os << prefix << "-" << std::setw(6) << std::setfill('0') << n;
  return os.str();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string utc_now() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace

Repository::Repository(fs::path root, const Gateway& gateway, StoreAccess access)
    : root_(std::move(root)), gateway_(gateway), access_(access) {
  if (access_ == StoreAccess::read_write) {
    std::error_code ec;
    fs::create_directories(root_ / "sop", ec);
    fs::create_directories(root_ / "pep", ec);
    if (ec) throw StorageError("cannot create store at " + root_.string() + ": " + ec.message());
  } else if (!fs::is_directory(root_)) {
    throw StorageError("store not found: " + root_.string());
  }
  load();
}

void Repository::require_writable() const {
  if (access_ != StoreAccess::read_write) throw StorageError("store opened read-only: " + root_.string());
}

void Repository::load() {
  std::unique_lock lock(mu_);
  const fs::path manifest_path = root_ / "manifest.json";
  if (!fs::exists(manifest_path)) {
    if (access_ == StoreAccess::read_write) {
      FileLock flock(root_, true);
      write_manifest();
    }
    return;
  }
  bool rewrite = false;
  {
    FileLock flock(root_, false);
    Json manifest = Json::parse(read_file(manifest_path), nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object()) throw StorageError("corrupt manifest: " + manifest_path.string());
    try {
      next_case_ = manifest.value("next_sop_id", std::uint64_t{1});
      next_record_ = manifest.value("next_pep_id", std::uint64_t{1});
      rewrite = manifest.value("embedding_dimension", std::size_t{0}) != gateway_.dimension();
      for (const auto& id : manifest.at("sop")) {
        cases_.push_back(case_from_json(Json::parse(read_file(root_ / "sop" / (id.get<std::string>() + ".json")))));
      }
      for (const auto& id : manifest.at("pep")) {
        records_.push_back(pep_from_json(Json::parse(read_file(root_ / "pep" / (id.get<std::string>() + ".json")))));
      }
    } catch (const Json::exception& e) {
      throw StorageError("corrupt store " + root_.string() + ": " + e.what());
    }
  }
  if (!rewrite) return;
  for (auto& c : cases_) {
    c.query_embedding.clear();
    c.need_embedding.clear();
    ensure_embeddings(c);
  }
  for (auto& r : records_) {
    r.query_embedding.clear();
    ensure_embeddings(r);
  }
  if (access_ == StoreAccess::read_write) {
    FileLock flock(root_, true);
    for (const auto& c : cases_) write_entry(root_ / "sop" / (c.id + ".json"), canonical_dump(to_json(c)));
    for (const auto& r : records_) write_entry(root_ / "pep" / (r.id + ".json"), canonical_dump(to_json(r)));
    write_manifest();
  }
}

void Repository::write_entry(const fs::path& path, const std::string& body) const {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot write " + tmp.string());
    out << body;
    out.flush();
    if (!out) throw StorageError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw StorageError("cannot commit " + path.string() + ": " + ec.message());
}

void Repository::write_manifest() const {
  Json m;
  m["format"] = 1;
  m["embedding_dimension"] = gateway_.dimension();
  m["next_sop_id"] = next_case_;
  m["next_pep_id"] = next_record_;
  Json sop = Json::array();
  for (const auto& c : cases_) sop.push_back(c.id);
  Json pep = Json::array();
  for (const auto& r : records_) pep.push_back(r.id);
  m["sop"] = std::move(sop);
  m["pep"] = std::move(pep);
  write_entry(root_ / "manifest.json", canonical_dump(m));
}

void Repository::ensure_embeddings(SopCase& c) const {
  if (c.query_embedding.size() != gateway_.dimension()) c.query_embedding = gateway_.embed(c.query.text);
  if (c.need_embedding.size() != gateway_.dimension()) c.need_embedding = gateway_.embed(c.need.text);
}

void Repository::ensure_embeddings(PepRecord& r) const {
  if (r.query_embedding.size() != gateway_.dimension()) r.query_embedding = gateway_.embed(r.query.text);
}

std::string Repository::add_case(SopCase sop_case, const std::set<std::string>& registry_tools) {
  require_writable();
  if (auto diagnostics = validate_sop(sop_case.sop, registry_tools); !diagnostics.empty()) {
    throw ValidationError(std::move(diagnostics));
  }
  ensure_embeddings(sop_case);
  if (sop_case.created_at.empty()) sop_case.created_at = utc_now();

  std::unique_lock lock(mu_);
  FileLock flock(root_, true);
  sop_case.id = make_id("sop", next_case_);
  write_entry(root_ / "sop" / (sop_case.id + ".json"), canonical_dump(to_json(sop_case)));
  cases_.push_back(sop_case);
  ++next_case_;
  try {
    write_manifest();
  } catch (...) {
    cases_.pop_back();
    --next_case_;
    throw;
  }
  return sop_case.id;
}

RetrievalResult Repository::retrieve(const Query& query, const NeedAnalysis& need,
                                     const RetrievalConfig& config) const {
  config.validate();
  auto q = gateway_.embed(query.text);
  std::vector<double> n;
  if (!need.empty()) n = gateway_.embed(need.text);
  std::shared_lock lock(mu_);
  RetrievalResult result;
  result.repository_empty = cases_.empty();
  result.effective_mode = need.empty() ? RetrievalMode::query_only : config.mode;
  result.hits = rank_cases(cases_, q, n, config);
  return result;
}

std::string Repository::pep_add(PepRecord record) {
  require_writable();
  if (record.experiences.empty()) throw SchemaError(SchemaErrorCode::InvalidValue, "experiences");
  ensure_embeddings(record);
  std::unique_lock lock(mu_);
  FileLock flock(root_, true);
  record.id = make_id("pep", next_record_);
  write_entry(root_ / "pep" / (record.id + ".json"), canonical_dump(to_json(record)));
  records_.push_back(record);
  ++next_record_;
  try {
    write_manifest();
  } catch (...) {
    records_.pop_back();
    --next_record_;
    throw;
  }
  return record.id;
}

std::vector<ScoredRecord> Repository::pep_lookup(const Query& query, std::size_t k) const {
  auto q = gateway_.embed(query.text);
  std::shared_lock lock(mu_);
  return rank_records(records_, q, k);
}

std::size_t Repository::case_count() const {
  std::shared_lock lock(mu_);
  return cases_.size();
}

std::size_t Repository::record_count() const {
  std::shared_lock lock(mu_);
  return records_.size();
}

std::vector<SopCase> Repository::cases() const {
  std::shared_lock lock(mu_);
  return cases_;
}

std::vector<PepRecord> Repository::records() const {
  std::shared_lock lock(mu_);
  return records_;
}

std::optional<SopCase> Repository::find_case(std::string_view id) const {
  std::shared_lock lock(mu_);
  for (const auto& c : cases_) {
    if (c.id == id) return c;
  }
  return std::nullopt;
}

std::optional<PepRecord> Repository::find_record(std::string_view id) const {
  std::shared_lock lock(mu_);
  for (const auto& r : records_) {
    if (r.id == id) return r;
  }
  return std::nullopt;
}

}  // namespace sopmas
