#include "catch_amalgamated.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sopmas/repository.hpp"
#include "sopmas/serialize.hpp"
#include "scenarios.hpp"
#include "support.hpp"

using namespace sopmas;
using namespace sopmas::testing;

namespace {

const std::set<std::string> kTools = {"GOOGLE Search", "bash"};

SopCase make_case(const std::string& query, const std::string& need, const Sop& sop) {
  SopCase c;
  c.query = Query{"", query, TaskKind::qa};
  c.need = NeedAnalysis{need};
  c.sop = sop;
  return c;
}

std::vector<std::string> ids_of(const std::vector<ScoredCase>& hits) {
  std::vector<std::string> out;
  for (const auto& h : hits) out.push_back(h.sop_case.id);
  return out;
}

}  // namespace

TEST_CASE("hybrid_score arithmetic", "[repository]") {
  CHECK(std::abs(hybrid_score(0.5, 1.0, 0.3) - 0.85) <= 1e-12);
  CHECK_THROWS_AS(hybrid_score(0.1, 0.2, 1.5), LambdaOutOfRange);
  CHECK_THROWS_AS(hybrid_score(0.1, 0.2, -0.01), LambdaOutOfRange);

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> sim(-1.0, 1.0), lam(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    double x = sim(rng), y = sim(rng), c = sim(rng), l = lam(rng);
    CHECK(hybrid_score(x, y, 1.0) == x);
    CHECK(hybrid_score(x, y, 0.0) == y);
    CHECK(std::abs(hybrid_score(c, c, l) - c) <= 1e-12);
  }
}

TEST_CASE("score is affine in lambda, increasing iff sim_q > sim_n", "[repository][property]") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> sim(-1.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    double q = sim(rng), n = sim(rng);
    double s0 = hybrid_score(q, n, 0.0), s5 = hybrid_score(q, n, 0.5), s1 = hybrid_score(q, n, 1.0);
    CHECK(std::abs(s5 - (s0 + s1) / 2) <= 1e-12);
    if (q > n) CHECK(s1 > s0);
    if (q < n) CHECK(s1 < s0);
  }
}

TEST_CASE("add_case persists and assigns monotone ids", "[repository]") {
  TempDir dir;
  auto gw = make_scripted_gateway({});
  Repository repo(dir.path(), *gw);
  auto id = repo.add_case(make_case("who wrote it", "web search", websearch_sop()), kTools);
  CHECK(repo.case_count() == 1);
  CHECK(std::filesystem::exists(dir / ("sop/" + id + ".json")));

  SopCase bad = make_case("q", "n", websearch_sop());
  bad.sop.agents[1].tools = {"sql"};
  CHECK_THROWS_AS(repo.add_case(bad, kTools), ValidationError);
  CHECK(repo.case_count() == 1);

  std::vector<std::string> ids = {id};
  for (int i = 0; i < 49; ++i) ids.push_back(repo.add_case(make_case("q" + std::to_string(i), "n", coding_sop()), kTools));
  CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == 50);
  CHECK(std::is_sorted(ids.begin(), ids.end()));
  auto stored = repo.cases();
  REQUIRE(stored.size() == 50);
  CHECK(stored.front().query_embedding.size() == 256);
  CHECK_FALSE(stored.front().created_at.empty());
}

TEST_CASE("retrieve matches the brute-force oracle", "[repository][oracle]") {
  TempDir dir;
  auto gw = make_scripted_gateway({}, 16);
  Repository repo(dir.path(), *gw);
  std::mt19937_64 rng(23);
  for (int i = 0; i < 32; ++i) repo.add_case(make_case(random_text(rng), random_text(rng), coding_sop()), kTools);
  auto cases = repo.cases();
  for (int trial = 0; trial < 20; ++trial) {
    Query q{"", random_text(rng), TaskKind::coding};
    NeedAnalysis n{random_text(rng)};
    for (double lambda : {0.0, 0.3, 0.7, 1.0}) {
      for (std::size_t k : {1u, 2u, 5u, 40u}) {
        auto got = repo.retrieve(q, n, RetrievalConfig{lambda, k, RetrievalMode::hybrid});
        CHECK(ids_of(got.hits) ==
              brute_force_ranking(cases, gw->embed(q.text), gw->embed(n.text), lambda, k));
        for (const auto& h : got.hits) {
          CHECK(h.score == hybrid_score(h.sim_query, h.sim_need, lambda));
        }
      }
    }
  }
}

TEST_CASE("retrieve: small repo, modes and empty need", "[repository]") {
  TempDir dir;
  auto gw = make_scripted_gateway({}, 16);
  Repository repo(dir.path(), *gw);
  Query q{"", "sort a list in python", TaskKind::coding};
  NeedAnalysis n{"code test bash"};

  auto empty = repo.retrieve(q, n, RetrievalConfig{});
  CHECK(empty.repository_empty);
  CHECK(empty.hits.empty());

  repo.add_case(make_case("sort a list", "python code", coding_sop()), kTools);
  repo.add_case(make_case("find a museum", "web search", websearch_sop()), kTools);
  repo.add_case(make_case("prime test", "bash test code", coding_sop()), kTools);

  auto all = repo.retrieve(q, n, RetrievalConfig{0.3, 10, RetrievalMode::hybrid});
  REQUIRE(all.hits.size() == 3);
  CHECK(std::is_sorted(all.hits.begin(), all.hits.end(),
                       [](const auto& a, const auto& b) { return a.score > b.score; }));

  auto query_only = repo.retrieve(q, n, RetrievalConfig{0.3, 3, RetrievalMode::query_only});
  auto lambda_one = repo.retrieve(q, n, RetrievalConfig{1.0, 3, RetrievalMode::hybrid});
  CHECK(ids_of(query_only.hits) == ids_of(lambda_one.hits));
  auto need_only = repo.retrieve(q, n, RetrievalConfig{0.3, 3, RetrievalMode::need_only});
  auto lambda_zero = repo.retrieve(q, n, RetrievalConfig{0.0, 3, RetrievalMode::hybrid});
  CHECK(ids_of(need_only.hits) == ids_of(lambda_zero.hits));

  auto no_need = repo.retrieve(q, NeedAnalysis{}, RetrievalConfig{0.3, 3, RetrievalMode::hybrid});
  CHECK(no_need.effective_mode == RetrievalMode::query_only);
  CHECK(ids_of(no_need.hits) == ids_of(lambda_one.hits));
  for (const auto& h : no_need.hits) CHECK(h.sim_need == 0.0);

  auto no_dupes = ids_of(all.hits);
  CHECK(std::set<std::string>(no_dupes.begin(), no_dupes.end()).size() == no_dupes.size());
  CHECK_THROWS_AS(repo.retrieve(q, n, RetrievalConfig{2.0, 3, RetrievalMode::hybrid}), LambdaOutOfRange);
}

TEST_CASE("ties break by insertion order", "[repository]") {
  TempDir dir;
  auto gw = make_scripted_gateway({}, 16);
  Repository repo(dir.path(), *gw);
  auto first = repo.add_case(make_case("same text", "same need", coding_sop()), kTools);
  auto second = repo.add_case(make_case("same text", "same need", coding_sop()), kTools);
  auto hits = repo.retrieve(Query{"", "same text"}, NeedAnalysis{"same need"}, RetrievalConfig{0.3, 2}).hits;
  REQUIRE(hits.size() == 2);
  CHECK(hits[0].sop_case.id == first);
  CHECK(hits[1].sop_case.id == second);
}

TEST_CASE("experience pool lookup", "[repository][pep]") {
  TempDir dir;
  auto gw = make_scripted_gateway({}, 32);
  Repository repo(dir.path(), *gw);
  Query q{"", "plan a three day trip to Seattle", TaskKind::planning};
  CHECK(repo.pep_lookup(q, 2).empty());

  PepRecord r;
  r.query = q;
  r.failure_cause = "fabricated flights";
  r.experiences = {{"Planner", "did not call the flight tool", "always query FlightSearch first"}};
  repo.pep_add(r);
  auto hits = repo.pep_lookup(q, 2);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].similarity == Catch::Approx(1.0).margin(1e-12));

  PepRecord empty_exp = r;
  empty_exp.experiences.clear();
  CHECK_THROWS(repo.pep_add(empty_exp));
  CHECK(repo.record_count() == 1);

  std::mt19937_64 rng(29);
  for (int i = 0; i < 19; ++i) {
    PepRecord x = r;
    x.query.text = random_text(rng);
    repo.pep_add(x);
  }
  Query probe{"", random_text(rng)};
  auto top = repo.pep_lookup(probe, 3);
  REQUIRE(top.size() == 3);
  // brute force
  auto records = repo.records();
  auto pe = gw->embed(probe.text);
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < records.size(); ++i) all.emplace_back(cosine(pe, records[i].query_embedding), i);
  std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  for (std::size_t i = 0; i < 3; ++i) CHECK(top[i].record.id == records[all[i].second].id);
}

TEST_CASE("store survives reopen and rewrites embeddings on dimension change", "[repository][durability]") {
  TempDir dir;
  std::vector<std::string> before;
  Query q{"", "find museum hours", TaskKind::qa};
  NeedAnalysis n{"web search"};
  {
    auto gw = make_scripted_gateway({}, 16);
    Repository repo(dir.path(), *gw);
    std::mt19937_64 rng(31);
    for (int i = 0; i < 8; ++i) repo.add_case(make_case(random_text(rng), random_text(rng), websearch_sop()), kTools);
    before = ids_of(repo.retrieve(q, n, RetrievalConfig{0.3, 5}).hits);
  }
  {
    auto gw = make_scripted_gateway({}, 16);
    Repository repo(dir.path(), *gw, StoreAccess::read_only);
    CHECK(repo.case_count() == 8);
    CHECK(ids_of(repo.retrieve(q, n, RetrievalConfig{0.3, 5}).hits) == before);
    CHECK_THROWS_AS(repo.add_case(make_case("x", "y", coding_sop()), kTools), StorageError);
  }
  {
    auto gw = make_scripted_gateway({}, 64);
    Repository repo(dir.path(), *gw);
    CHECK(repo.cases().front().query_embedding.size() == 64);
    auto manifest = Json::parse(read_text(dir / "manifest.json"));
    CHECK(manifest["embedding_dimension"] == 64);
    auto on_disk = case_from_json(Json::parse(read_text(dir / "sop/sop-000001.json")));
    CHECK(on_disk.query_embedding.size() == 64);
  }
}
