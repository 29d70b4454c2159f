#pragma once

// Canonical JSON forms of the domain types. Field order is fixed so that
// serialize(deserialize(serialize(x))) is byte-identical to serialize(x).

#include <nlohmann/json.hpp>

#include <string>
#include <string_view>

#include "sopmas/domain.hpp"

namespace sopmas {

using Json = nlohmann::ordered_json;

enum class SchemaErrorCode { NoJsonFound, MissingField, TypeMismatch, InvalidValue };

std::string_view to_string(SchemaErrorCode code);

class SchemaError : public Error {
 public:
  SchemaError(SchemaErrorCode code, std::string path);
  SchemaErrorCode code() const { return code_; }
  const std::string& path() const { return path_; }

 private:
  SchemaErrorCode code_;
  std::string path_;
};

Json to_json(const Query& q);
Json to_json(const AgentSpec& a);
Json to_json(const CommunicationStructure& s);
Json to_json(const Sop& s);
Json to_json(const SopCase& c);
Json to_json(const OperatingProcedure& op);
Json to_json(const Message& m);
Json to_json(const ToolCallRecord& r);
Json to_json(const AgentExperience& e);
Json to_json(const PepRecord& r);
Json to_json(const Intervention& i);

// Readers accept the canonical keys and the fixture spellings
// ("Agent Specifications", "Communication Sturcture", textual edge lists).
// `path` prefixes error locations, e.g. "agents[1].tools".
Query query_from_json(const Json& j, const std::string& path = "query");
AgentSpec agent_from_json(const Json& j, const std::string& path);
CommunicationStructure structure_from_json(const Json& j, const std::string& path);
Sop sop_from_json(const Json& j);
SopCase case_from_json(const Json& j);
OperatingProcedure op_from_json(const Json& j);
Message message_from_json(const Json& j);
ToolCallRecord tool_record_from_json(const Json& j);
AgentExperience experience_from_json(const Json& j, const std::string& path);
PepRecord pep_from_json(const Json& j);
Intervention intervention_from_json(const Json& j);

/// Two-space indented dump with a trailing newline.
std::string canonical_dump(const Json& j);

/// Finds the first parseable JSON object embedded in free text (code fences
/// and surrounding prose are skipped). Throws SchemaError(NoJsonFound).
Json extract_json_object(std::string_view text);

}  // namespace sopmas
