#include "sopmas/serialize.hpp"

#include <initializer_list>

namespace sopmas {

std::string_view to_string(SchemaErrorCode code) {
  switch (code) {
    case SchemaErrorCode::NoJsonFound: return "NoJsonFound";
    case SchemaErrorCode::MissingField: return "MissingField";
    case SchemaErrorCode::TypeMismatch: return "TypeMismatch";
    case SchemaErrorCode::InvalidValue: return "InvalidValue";
  }
  return "?";
}

SchemaError::SchemaError(SchemaErrorCode code, std::string path)
    : Error(std::string(to_string(code)) + (path.empty() ? "" : "(" + path + ")")),
      code_(code),
      path_(std::move(path)) {}

namespace {

std::string join_path(const std::string& base, std::string_view key) {
  return base.empty() ? std::string(key) : base + "." + std::string(key);
}

const Json* find_key(const Json& j, std::initializer_list<std::string_view> keys) {
  for (auto key : keys) {
    if (auto it = j.find(std::string(key)); it != j.end()) return &*it;
  }
  return nullptr;
}

const Json& require(const Json& j, std::initializer_list<std::string_view> keys, const std::string& path) {
  if (!j.is_object()) throw SchemaError(SchemaErrorCode::TypeMismatch, path);
  if (const Json* v = find_key(j, keys)) return *v;
  throw SchemaError(SchemaErrorCode::MissingField, join_path(path, *keys.begin()));
}

std::string as_string(const Json& v, const std::string& path) {
  if (!v.is_string()) throw SchemaError(SchemaErrorCode::TypeMismatch, path);
  return v.get<std::string>();
}

std::string string_field(const Json& j, std::initializer_list<std::string_view> keys, const std::string& path,
                         bool required = true) {
  if (!j.is_object()) throw SchemaError(SchemaErrorCode::TypeMismatch, path);
  if (const Json* v = find_key(j, keys)) return as_string(*v, join_path(path, *keys.begin()));
  if (required) throw SchemaError(SchemaErrorCode::MissingField, join_path(path, *keys.begin()));
  return {};
}

std::vector<std::string> string_list(const Json& v, const std::string& path) {
  if (!v.is_array()) throw SchemaError(SchemaErrorCode::TypeMismatch, path);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(as_string(v[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

std::vector<double> number_list(const Json& j, std::string_view key, const std::string& path) {
  std::vector<double> out;
  auto it = j.find(std::string(key));
  if (it == j.end() || it->is_null()) return out;
  if (!it->is_array()) throw SchemaError(SchemaErrorCode::TypeMismatch, join_path(path, key));
  for (const auto& x : *it) {
    if (!x.is_number()) throw SchemaError(SchemaErrorCode::TypeMismatch, join_path(path, key));
    out.push_back(x.get<double>());
  }
  return out;
}

template <typename T>
T number_field(const Json& j, std::string_view key, const std::string& path, T fallback) {
  auto it = j.find(std::string(key));
  if (it == j.end() || it->is_null()) return fallback;
  if (!it->is_number()) throw SchemaError(SchemaErrorCode::TypeMismatch, join_path(path, key));
  return it->get<T>();
}

Json sop_fields(const Sop& s) {
  Json j;
  j["team"] = s.team;
  Json agents = Json::array();
  for (const auto& a : s.agents) agents.push_back(to_json(a));
  j["agents"] = std::move(agents);
  j["communication_structure"] = to_json(s.structure);
  return j;
}

// Rewrites raw control characters inside string literals so that model output
// with literal line breaks in strings still parses.
std::string escape_raw_controls(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_string = false, escaped = false;
  for (char c : text) {
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      } else if (c == '\n') {
        out += "\\n";
        continue;
      } else if (c == '\r') {
        continue;
      } else if (c == '\t') {
        out += "\\t";
        continue;
      }
    } else if (c == '"') {
      in_string = true;
    }
    out += c;
  }
  return out;
}

// Index one past the brace matching text[open], or npos.
std::size_t matching_brace(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i + 1;
  }
  return std::string_view::npos;
}

}  // namespace

Json to_json(const Query& q) {
  Json j;
  j["id"] = q.id;
  j["text"] = q.text;
  j["task_kind"] = std::string(to_string(q.kind));
  return j;
}

Json to_json(const AgentSpec& a) {
  Json j;
  j["name"] = a.name;
  j["responsibility"] = a.responsibility;
  j["instruction"] = a.instruction;
  j["tools"] = a.tools;
  return j;
}

Json to_json(const CommunicationStructure& s) {
  Json edges = Json::array();
  for (const auto& e : s.edges) {
    Json je;
    je["from"] = e.from;
    je["to"] = e.to;
    if (e.condition) je["condition"] = *e.condition;
    edges.push_back(std::move(je));
  }
  Json j;
  j["edges"] = std::move(edges);
  j["description"] = s.description;
  return j;
}

Json to_json(const Sop& s) { return sop_fields(s); }

Json to_json(const SopCase& c) {
  Json j;
  j["id"] = c.id;
  j["query"] = to_json(c.query);
  j["need"] = c.need.text;
  j["sop"] = to_json(c.sop);
  j["query_embedding"] = c.query_embedding;
  j["need_embedding"] = c.need_embedding;
  j["created_at"] = c.created_at;
  return j;
}

Json to_json(const OperatingProcedure& op) {
  Json j = sop_fields(op.sop);
  j["bound_query"] = to_json(op.bound_query);
  j["provenance"] = op.provenance;
  return j;
}

Json to_json(const Message& m) {
  Json j;
  j["id"] = m.id;
  j["seq"] = m.seq;
  j["round"] = m.round;
  j["sender"] = m.sender;
  j["sender_generation"] = m.sender_generation;
  j["recipient"] = m.recipient;
  j["recipient_generation"] = m.recipient_generation;
  j["kind"] = std::string(to_string(m.kind));
  j["content"] = m.content;
  if (m.cause) j["cause"] = *m.cause;
  if (m.outcome) j["outcome"] = *m.outcome;
  return j;
}

Json to_json(const ToolCallRecord& r) {
  Json j;
  j["seq"] = r.seq;
  j["round"] = r.round;
  j["agent"] = r.agent;
  j["generation"] = r.generation;
  j["tool"] = r.tool;
  j["arguments"] = r.arguments;
  j["observation"] = r.observation;
  j["step"] = r.step;
  j["outcome"] = r.outcome == ToolOutcome::ok ? "ok" : "error";
  return j;
}

Json to_json(const AgentExperience& e) {
  Json j;
  j["agent"] = e.agent;
  j["error_attribution"] = e.error_attribution;
  j["improvement_strategy"] = e.improvement_strategy;
  return j;
}

Json to_json(const PepRecord& r) {
  Json j;
  j["id"] = r.id;
  j["query"] = to_json(r.query);
  j["failure_cause"] = r.failure_cause;
  Json exps = Json::array();
  for (const auto& e : r.experiences) exps.push_back(to_json(e));
  j["experiences"] = std::move(exps);
  j["query_embedding"] = r.query_embedding;
  return j;
}

Json to_json(const Intervention& i) {
  Json j;
  j["seq"] = i.seq;
  j["round"] = i.round;
  j["kind"] = i.kind == InterventionKind::guidance ? "guidance" : "replacement";
  j["target"] = i.target;
  j["target_generation"] = i.target_generation;
  j["finding"] = i.finding;
  if (i.kind == InterventionKind::guidance) j["guidance"] = i.guidance;
  if (i.replacement) j["replacement"] = to_json(*i.replacement);
  j["pep_refs"] = i.pep_refs;
  j["repairs"] = i.repairs;
  j["messages_purged"] = i.messages_purged;
  j["tool_records_purged"] = i.tool_records_purged;
  return j;
}

Query query_from_json(const Json& j, const std::string& path) {
  if (j.is_string()) return Query{"", j.get<std::string>(), TaskKind::other};
  Query q;
  q.id = string_field(j, {"id"}, path, false);
  q.text = string_field(j, {"text", "query"}, path);
  std::string kind = string_field(j, {"task_kind", "kind"}, path, false);
  if (!kind.empty()) {
    try {
      q.kind = task_kind_from_string(kind);
    } catch (const Error&) {
      throw SchemaError(SchemaErrorCode::InvalidValue, join_path(path, "task_kind"));
    }
  }
  return q;
}

AgentSpec agent_from_json(const Json& j, const std::string& path) {
  if (!j.is_object()) throw SchemaError(SchemaErrorCode::TypeMismatch, path);
  AgentSpec a;
  a.name = string_field(j, {"name"}, path);
  a.responsibility = string_field(j, {"responsibility"}, path, false);
  a.instruction = string_field(j, {"instruction"}, path, false);
  if (const Json* tools = find_key(j, {"tools"}); tools && !tools->is_null()) {
    a.tools = string_list(*tools, path + ".tools");
  }
  return a;
}

CommunicationStructure structure_from_json(const Json& j, const std::string& path) {
  if (j.is_string()) return parse_structure_text(j.get<std::string>());
  if (!j.is_object()) throw SchemaError(SchemaErrorCode::TypeMismatch, path);
  CommunicationStructure s;
  s.description = string_field(j, {"description"}, path, false);
  const Json& edges = require(j, {"edges"}, path);
  if (edges.is_string()) {
    s.edges = parse_structure_text(edges.get<std::string>()).edges;
    return s;
  }
  if (!edges.is_array()) throw SchemaError(SchemaErrorCode::TypeMismatch, path + ".edges");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    std::string epath = path + ".edges[" + std::to_string(i) + "]";
    const Json& e = edges[i];
    if (e.is_string()) {
      for (auto& parsed : parse_structure_text(e.get<std::string>()).edges) s.edges.push_back(std::move(parsed));
      continue;
    }
    Edge edge;
    edge.from = string_field(e, {"from"}, epath);
    edge.to = string_field(e, {"to"}, epath);
    if (const Json* c = find_key(e, {"condition"}); c && !c->is_null()) {
      edge.condition = as_string(*c, epath + ".condition");
    }
    s.edges.push_back(std::move(edge));
  }
  return s;
}

Sop sop_from_json(const Json& j) {
  if (!j.is_object()) throw SchemaError(SchemaErrorCode::TypeMismatch, "");
  Sop s;
  s.team = string_list(require(j, {"team"}, ""), "team");
  const Json& agents = require(j, {"agents", "Agent Specifications", "agent_specifications"}, "");
  if (!agents.is_array()) throw SchemaError(SchemaErrorCode::TypeMismatch, "agents");
  for (std::size_t i = 0; i < agents.size(); ++i) {
    s.agents.push_back(agent_from_json(agents[i], "agents[" + std::to_string(i) + "]"));
  }
  s.structure = structure_from_json(
      require(j, {"communication_structure", "Communication Sturcture", "Communication Structure"}, ""),
      "communication_structure");
  return s;
}

SopCase case_from_json(const Json& j) {
  SopCase c;
  c.id = string_field(j, {"id"}, "");
  c.query = query_from_json(require(j, {"query"}, ""));
  c.need.text = string_field(j, {"need"}, "", false);
  c.sop = sop_from_json(require(j, {"sop"}, ""));
  c.query_embedding = number_list(j, "query_embedding", "");
  c.need_embedding = number_list(j, "need_embedding", "");
  c.created_at = string_field(j, {"created_at"}, "", false);
  return c;
}

OperatingProcedure op_from_json(const Json& j) {
  OperatingProcedure op;
  op.sop = sop_from_json(j);
  if (const Json* q = find_key(j, {"bound_query"}); q && !q->is_null()) op.bound_query = query_from_json(*q, "bound_query");
  if (const Json* p = find_key(j, {"provenance"}); p && !p->is_null()) op.provenance = string_list(*p, "provenance");
  return op;
}

Message message_from_json(const Json& j) {
  Message m;
  m.id = number_field<std::uint64_t>(j, "id", "message", 0);
  m.seq = number_field<std::uint64_t>(j, "seq", "message", 0);
  m.round = number_field<int>(j, "round", "message", 0);
  m.sender = string_field(j, {"sender"}, "message");
  m.sender_generation = number_field<std::uint32_t>(j, "sender_generation", "message", 0);
  m.recipient = string_field(j, {"recipient"}, "message");
  m.recipient_generation = number_field<std::uint32_t>(j, "recipient_generation", "message", 0);
  try {
    m.kind = message_kind_from_string(string_field(j, {"kind"}, "message"));
  } catch (const SchemaError&) {
    throw;
  } catch (const Error&) {
    throw SchemaError(SchemaErrorCode::InvalidValue, "message.kind");
  }
  m.content = string_field(j, {"content"}, "message", false);
  if (auto it = j.find("cause"); it != j.end() && !it->is_null()) {
    if (!it->is_number_unsigned()) throw SchemaError(SchemaErrorCode::TypeMismatch, "message.cause");
    m.cause = it->get<std::uint64_t>();
  }
  if (auto it = j.find("outcome"); it != j.end() && !it->is_null()) m.outcome = as_string(*it, "message.outcome");
  return m;
}

ToolCallRecord tool_record_from_json(const Json& j) {
  ToolCallRecord r;
  r.seq = number_field<std::uint64_t>(j, "seq", "tool_call", 0);
  r.round = number_field<int>(j, "round", "tool_call", 0);
  r.agent = string_field(j, {"agent"}, "tool_call");
  r.generation = number_field<std::uint32_t>(j, "generation", "tool_call", 0);
  r.tool = string_field(j, {"tool"}, "tool_call");
  r.arguments = string_field(j, {"arguments"}, "tool_call", false);
  r.observation = string_field(j, {"observation"}, "tool_call", false);
  r.step = number_field<int>(j, "step", "tool_call", 1);
  r.outcome = string_field(j, {"outcome"}, "tool_call", false) == "error" ? ToolOutcome::error : ToolOutcome::ok;
  return r;
}

AgentExperience experience_from_json(const Json& j, const std::string& path) {
  AgentExperience e;
  e.agent = string_field(j, {"agent"}, path);
  e.error_attribution = string_field(j, {"error_attribution"}, path);
  e.improvement_strategy = string_field(j, {"improvement_strategy"}, path);
  return e;
}

PepRecord pep_from_json(const Json& j) {
  PepRecord r;
  r.id = string_field(j, {"id"}, "", false);
  r.query = query_from_json(require(j, {"query"}, ""));
  r.failure_cause = string_field(j, {"failure_cause"}, "");
  const Json& exps = require(j, {"experiences"}, "");
  if (!exps.is_array()) throw SchemaError(SchemaErrorCode::TypeMismatch, "experiences");
  for (std::size_t i = 0; i < exps.size(); ++i) {
    r.experiences.push_back(experience_from_json(exps[i], "experiences[" + std::to_string(i) + "]"));
  }
  r.query_embedding = number_list(j, "query_embedding", "");
  return r;
}

Intervention intervention_from_json(const Json& j) {
  Intervention i;
  i.seq = number_field<std::uint64_t>(j, "seq", "intervention", 0);
  i.round = number_field<int>(j, "round", "intervention", 0);
  std::string kind = string_field(j, {"kind"}, "intervention");
  if (kind == "guidance") i.kind = InterventionKind::guidance;
  else if (kind == "replacement") i.kind = InterventionKind::replacement;
  else throw SchemaError(SchemaErrorCode::InvalidValue, "intervention.kind");
  i.target = string_field(j, {"target"}, "intervention");
  i.target_generation = number_field<std::uint32_t>(j, "target_generation", "intervention", 0);
  i.finding = string_field(j, {"finding"}, "intervention", false);
  i.guidance = string_field(j, {"guidance"}, "intervention", false);
  if (auto it = j.find("replacement"); it != j.end() && !it->is_null()) {
    i.replacement = agent_from_json(*it, "intervention.replacement");
  }
  if (auto it = j.find("pep_refs"); it != j.end()) i.pep_refs = string_list(*it, "intervention.pep_refs");
  i.repairs = number_field<int>(j, "repairs", "intervention", 0);
  i.messages_purged = number_field<std::size_t>(j, "messages_purged", "intervention", 0);
  i.tool_records_purged = number_field<std::size_t>(j, "tool_records_purged", "intervention", 0);
  return i;
}

std::string canonical_dump(const Json& j) { return j.dump(2) + "\n"; }

Json extract_json_object(std::string_view text) {
  for (std::size_t open = text.find('{'); open != std::string_view::npos; open = text.find('{', open + 1)) {
    std::size_t end = matching_brace(text, open);
    if (end == std::string_view::npos) continue;
    Json j = Json::parse(escape_raw_controls(text.substr(open, end - open)), nullptr, false);
    if (!j.is_discarded() && j.is_object()) return j;
  }
  throw SchemaError(SchemaErrorCode::NoJsonFound, "");
}

}  // namespace sopmas
