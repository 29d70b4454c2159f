#include "sopmas/transcript.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "sopmas/action.hpp"
#include "sopmas/serialize.hpp"
#include "sopmas/text.hpp"

namespace sopmas {

namespace fs = std::filesystem;

namespace {

Json tagged(std::string_view type, const Json& body) {
  Json j;
  j["type"] = std::string(type);
  for (const auto& [k, v] : body.items()) j[k] = v;
  return j;
}

}  // namespace

std::string transcript_jsonl(const ExecutionTranscript& t) {
  std::vector<std::pair<std::uint64_t, Json>> records;
  for (const auto& m : t.messages) records.emplace_back(m.seq, tagged("message", to_json(m)));
  for (const auto& r : t.tool_calls) records.emplace_back(r.seq, tagged("tool_call", to_json(r)));
  for (const auto& i : t.interventions) records.emplace_back(i.seq, tagged("intervention", to_json(i)));
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::string out;
  for (const auto& [_, j] : records) out += j.dump() + "\n";

  Json s;
  s["type"] = "summary";
  s["op"] = to_json(t.op);
  s["rounds_used"] = t.rounds_used;
  s["max_rounds"] = t.max_rounds;
  s["intervention_cap"] = t.intervention_cap;
  s["terminated_by"] = std::string(to_string(t.terminated_by));
  s["final_answer"] = t.final_answer ? Json(*t.final_answer) : Json(nullptr);
  s["final_answer_by"] = t.final_answer_by;
  s["actions"] = t.actions;
  if (!t.fatal_detail.empty()) s["fatal_detail"] = t.fatal_detail;
  out += s.dump() + "\n";
  return out;
}

void write_transcript(const fs::path& path, const ExecutionTranscript& t) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write transcript: " + path.string());
  out << transcript_jsonl(t);
  if (!out) throw Error("short write to transcript: " + path.string());
}

ExecutionTranscript parse_transcript(std::string_view jsonl) {
  ExecutionTranscript t;
  bool summary = false;
  std::size_t line_no = 0;
  for (const auto& raw : split(jsonl, '\n')) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty()) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("type")) {
      throw TranscriptError("line " + std::to_string(line_no) + " is not a transcript record");
    }
    try {
      const std::string type = j["type"].get<std::string>();
      if (type == "message") {
        t.messages.push_back(message_from_json(j));
      } else if (type == "tool_call") {
        t.tool_calls.push_back(tool_record_from_json(j));
      } else if (type == "intervention") {
        t.interventions.push_back(intervention_from_json(j));
      } else if (type == "summary") {
        summary = true;
        t.op = op_from_json(j.at("op"));
        t.rounds_used = j.at("rounds_used").get<int>();
        t.max_rounds = j.at("max_rounds").get<int>();
        t.intervention_cap = j.at("intervention_cap").get<int>();
        t.terminated_by = termination_from_string(j.at("terminated_by").get<std::string>());
        if (!j.at("final_answer").is_null()) t.final_answer = j["final_answer"].get<std::string>();
        t.final_answer_by = j.value("final_answer_by", std::string());
        t.actions = j.value("actions", std::size_t{0});
        t.fatal_detail = j.value("fatal_detail", std::string());
      } else {
        throw TranscriptError("line " + std::to_string(line_no) + ": unknown record type '" + type + "'");
      }
    } catch (const TranscriptError&) {
      throw;
    } catch (const std::exception& e) {
      throw TranscriptError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (line_no == 0 || (t.messages.empty() && t.tool_calls.empty() && !summary)) throw TranscriptError("transcript is empty");
  if (!summary) throw TranscriptError("transcript has no summary record");
  return t;
}

ExecutionTranscript read_transcript(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TranscriptError("cannot read transcript: " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_transcript(os.str());
}

bool ReplayReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const InvariantCheck& c) { return c.passed; });
}

const InvariantCheck* ReplayReport::find(std::string_view name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

std::string ReplayReport::render() const {
  std::string out;
  for (const auto& c : checks) {
    out += std::string(c.passed ? "PASS " : "FAIL ") + c.name;
    if (!c.detail.empty()) out += ": " + c.detail;
    out += "\n";
  }
  return out;
}

namespace {

class Checker {
 public:
  explicit Checker(std::string name) { check_.name = std::move(name); }
  void fail(const std::string& detail) {
    if (check_.passed) check_.detail = detail;
    check_.passed = false;
  }
  InvariantCheck done() { return std::move(check_); }

 private:
  InvariantCheck check_;
};

bool has_edge_to_end(const OperatingProcedure& op, const std::string& agent) {
  return std::any_of(op.sop.structure.edges.begin(), op.sop.structure.edges.end(),
                     [&](const Edge& e) { return e.from == agent && e.to == kEndNode; });
}

InvariantCheck check_causality(const ExecutionTranscript& t) {
  Checker c("causality");
  std::map<std::uint64_t, const Message*> seen;
  std::uint64_t last_id = 0;
  for (const auto& m : t.messages) {
    if (m.id <= last_id) c.fail("message id " + std::to_string(m.id) + " does not increase");
    last_id = m.id;
    if (m.cause) {
      auto it = seen.find(*m.cause);
      if (it == seen.end()) {
        c.fail("message " + std::to_string(m.id) + " cites missing cause " + std::to_string(*m.cause));
      } else if (it->second->round > m.round) {
        c.fail("message " + std::to_string(m.id) + " precedes the round of its cause");
      }
    }
    seen.emplace(m.id, &m);
  }
  std::vector<std::uint64_t> seqs;
  for (const auto& m : t.messages) seqs.push_back(m.seq);
  for (const auto& r : t.tool_calls) seqs.push_back(r.seq);
  for (const auto& i : t.interventions) seqs.push_back(i.seq);
  std::sort(seqs.begin(), seqs.end());
  if (std::adjacent_find(seqs.begin(), seqs.end()) != seqs.end()) c.fail("duplicate commit sequence numbers");
  return c.done();
}

InvariantCheck check_reachability(const ExecutionTranscript& t) {
  Checker c("reachability");
  const auto& op = t.op;
  const auto& team = op.sop.team;
  auto member = [&](const std::string& n) { return std::find(team.begin(), team.end(), n) != team.end(); };
  const auto entry = successors(op.sop.structure, kUserNode);
  std::map<std::string, std::set<std::string>> prior;
  for (const auto& m : t.messages) {
    const std::string id = "message " + std::to_string(m.id) + " (" + m.sender + " -> " + m.recipient + ")";
    if (m.sender == kUserNode) {
      if (std::find(entry.begin(), entry.end(), m.recipient) == entry.end()) c.fail(id + ": not an entry edge");
    } else if (m.sender == kWatcherNode) {
      if (m.kind != MessageKind::watcher_guidance || !member(m.recipient)) c.fail(id + ": invalid supervision message");
    } else if (!member(m.sender)) {
      c.fail(id + ": unknown sender");
    } else if (m.kind == MessageKind::final_answer) {
      if (m.recipient != kEndNode || !has_edge_to_end(op, m.sender)) c.fail(id + ": final answer without an edge to End");
    } else if (!member(m.recipient)) {
      c.fail(id + ": unknown recipient");
    } else if (!classify_hop(op.sop.structure, m.sender, m.recipient, m.outcome, prior[m.sender])) {
      c.fail(id + ": recipient not reachable");
    }
    if (member(m.sender) && member(m.recipient)) prior[m.recipient].insert(m.sender);
  }
  return c.done();
}

InvariantCheck check_round_cap(const ExecutionTranscript& t) {
  Checker c("round_cap");
  if (t.rounds_used > t.max_rounds) {
    c.fail("rounds_used " + std::to_string(t.rounds_used) + " exceeds max_rounds " + std::to_string(t.max_rounds));
  }
  int last = 0;
  for (const auto& m : t.messages) {
    if (m.round > t.rounds_used) c.fail("message " + std::to_string(m.id) + " posted after the last round");
    if (m.round < last) c.fail("message " + std::to_string(m.id) + " goes back in rounds");
    last = std::max(last, m.round);
  }
  for (const auto& r : t.tool_calls) {
    if (r.round > t.rounds_used || r.round < 1) c.fail("tool record " + std::to_string(r.seq) + " outside the run");
  }
  return c.done();
}

InvariantCheck check_intervention_cap(const ExecutionTranscript& t) {
  Checker c("intervention_cap");
  if (t.intervention_cap >= 0 && t.interventions.size() > static_cast<std::size_t>(t.intervention_cap)) {
    c.fail(std::to_string(t.interventions.size()) + " interventions exceed the cap of " +
           std::to_string(t.intervention_cap));
  }
  return c.done();
}

InvariantCheck check_purge(const ExecutionTranscript& t) {
  Checker c("purge");
  for (const auto& i : t.interventions) {
    if (i.kind != InterventionKind::replacement) continue;
    const std::string who = i.target + "#" + std::to_string(i.target_generation);
    for (const auto& m : t.messages) {
      if ((m.sender == i.target && m.sender_generation == i.target_generation) ||
          (m.recipient == i.target && m.recipient_generation == i.target_generation)) {
        c.fail("message " + std::to_string(m.id) + " still references replaced " + who);
      }
    }
    for (const auto& r : t.tool_calls) {
      if (r.agent == i.target && r.generation == i.target_generation) {
        c.fail("tool record " + std::to_string(r.seq) + " still references replaced " + who);
      }
    }
  }
  return c.done();
}

InvariantCheck check_final_answer(const ExecutionTranscript& t) {
  Checker c("final_answer");
  if (t.terminated_by != Termination::final_answer) {
    if (t.final_answer) c.fail("final answer recorded although the run ended by " + std::string(to_string(t.terminated_by)));
    return c.done();
  }
  if (!t.final_answer) {
    c.fail("terminated by final answer but none recorded");
    return c.done();
  }
  if (!has_edge_to_end(t.op, t.final_answer_by)) c.fail("'" + t.final_answer_by + "' has no edge to End");
  bool found = std::any_of(t.messages.begin(), t.messages.end(), [&](const Message& m) {
    return m.kind == MessageKind::final_answer && m.sender == t.final_answer_by && m.content == *t.final_answer;
  });
  if (!found) c.fail("no final-answer message matches the summary");
  return c.done();
}

InvariantCheck check_tool_records(const ExecutionTranscript& t) {
  Checker c("tool_records");
  const auto& team = t.op.sop.team;
  for (const auto& r : t.tool_calls) {
    if (r.step < 1) c.fail("tool record " + std::to_string(r.seq) + " has step < 1");
    if (std::find(team.begin(), team.end(), r.agent) == team.end()) {
      c.fail("tool record " + std::to_string(r.seq) + " names unknown agent '" + r.agent + "'");
    }
  }
  return c.done();
}

}  // namespace

ReplayReport validate_transcript(const ExecutionTranscript& t) {
  ReplayReport report;
  report.checks.push_back(check_causality(t));
  report.checks.push_back(check_reachability(t));
  report.checks.push_back(check_round_cap(t));
  report.checks.push_back(check_intervention_cap(t));
  report.checks.push_back(check_purge(t));
  report.checks.push_back(check_final_answer(t));
  report.checks.push_back(check_tool_records(t));
  return report;
}

}  // namespace sopmas
