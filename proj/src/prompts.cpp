#include "sopmas/prompts.hpp"

#include <fstream>
#include <sstream>

#include "sopmas/text.hpp"

namespace sopmas {

namespace {

constexpr std::string_view kSchema =
    "An operating procedure is one JSON object with the keys\n"
    "  \"team\": ordered list of agent names,\n"
    "  \"agents\": list of {\"name\", \"responsibility\", \"instruction\", \"tools\"},\n"
    "  \"communication_structure\": {\"edges\": [{\"from\", \"to\", \"condition\"}], \"description\"}.\n"
    "Edges connect team members and the pseudo-nodes \"User\" (entry) and \"End\" (exit). At least one edge "
    "leaves User and at least one reaches End. \"condition\" is optional; a loop is allowed only if one of its "
    "edges carries a condition label.";

PromptSet built_in() {
  Json j;
  j["version"] = "v1";
  Json& t = j["templates"];
  t["agent"] = {
      {"system",
       "You are {{name}}, one agent in a team of language-model agents working on a user request.\n"
       "Responsibility: {{responsibility}}\n"
       "Instruction: {{instruction}}\n\n"
       "Tools you may call:\n{{tools}}\n\n"
       "{{grammar}}"},
      {"user",
       "[agent={{name}}] [round={{round}}]\n"
       "User request: {{query}}\n\n"
       "You can message: {{contacts}}\n\n"
       "### Inbox\n{{inbox}}\n\n"
       "### Your recent steps\n{{history}}"}};
  t["need_analysis"] = {
      {"system", "You analyse user requests for a team of cooperating language-model agents."},
      {"user",
       "### NEED ANALYSIS\n"
       "Request ({{task_kind}}): {{query}}\n\n"
       "Describe the objective of this request and the capabilities needed to solve it: tools, information "
       "sources and agent roles. Reply with the analysis only."}};
  t["instantiation"] = {
      {"system", std::string("You design multi-agent operating procedures. ") + std::string(kSchema) +
                     "\nOnly these tools exist: {{tools}}."},
      {"user",
       "### OP INSTANTIATION\n"
       "User query ({{task_kind}}): {{query}}\n\n"
       "Need analysis: {{need}}\n\n"
       "{{exemplars}}{{strategy}}"
       "Write the operating procedure for this query as one JSON object. Tailor every instruction to the query."}};
  t["watcher_review"] = {
      {"system",
       "You are the Watcher supervising a team of agents. Check whether agents follow the prescribed workflow "
       "and their responsibilities, and whether they invoke their designated tools properly."},
      {"user",
       "### WATCHER REVIEW\n"
       "User query: {{query}}\n\n"
       "Operating procedure:\n{{op}}\n\n"
       "Recent activity:\n{{window}}\n\n"
       "Lessons from similar past failures:\n{{experiences}}\n\n"
       "Reply with exactly these lines:\n"
       "VERDICT: NORMAL or ANOMALY\n"
       "LEVEL: inter_agent or agent_environment\n"
       "AGENT: <agent name>\n"
       "SEVERITY: recoverable or critical\n"
       "DESCRIPTION: <one sentence>"}};
  t["agent_replacement"] = {
      {"system", "You write agent specifications for a team of language-model agents."},
      {"user",
       "### AGENT REPLACEMENT\n"
       "The agent \"{{agent}}\" was removed after this problem: {{finding}}\n\n"
       "User query: {{query}}\n\n"
       "Operating procedure:\n{{op}}\n\n"
       "Removed specification:\n{{spec}}\n\n"
       "Lessons from similar past failures:\n{{experiences}}\n\n"
       "Write a new specification for the same role as one JSON object with the keys \"name\", "
       "\"responsibility\", \"instruction\" and \"tools\". Keep the name \"{{agent}}\"."}};
  t["distillation"] = {
      {"system", std::string("You maintain a library of reusable multi-agent procedures. ") + std::string(kSchema)},
      {"user",
       "### SOP DISTILLATION\n"
       "The operating procedure below solved this query: {{query}}\n\n"
       "{{op}}\n\n"
       "Rewrite it as a reusable SOP. Keep the team, the tools and the communication structure; replace "
       "instructions that only make sense for this query with general directives. Reply with one JSON object "
       "using the same keys."}};
  t["diagnosis"] = {
      {"system", std::string("You diagnose failed multi-agent runs. ") + std::string(kSchema)},
      {"user",
       "### FAILURE DIAGNOSIS\n"
       "User query: {{query}}\n"
       "Evaluation: {{verdict}}\n\n"
       "Operating procedure:\n{{op}}\n\n"
       "Communication log and tool-use trace:\n{{trajectory}}\n\n"
       "Explain why the run failed and which agents are responsible. Reply with one JSON object:\n"
       "{\"failure_cause\": \"...\", \"experiences\": [{\"agent\": \"...\", \"error_attribution\": \"...\", "
       "\"improvement_strategy\": \"...\"}], \"revised_op\": <operating procedure>}\n"
       "The revision may adjust roles, change the communication structure or refine instructions."}};
  t["judge"] = {
      {"system", "You grade answers against a reference."},
      {"user",
       "### ANSWER JUDGE\n"
       "Question: {{query}}\n"
       "Reference answer: {{label}}\n"
       "Candidate answer: {{answer}}\n\n"
       "Reply with one line: PASS: <reason> or FAIL: <reason>."}};
  t["repair"] = {
      {"system", ""},
      {"user", "### REPAIR\nYour previous reply could not be used:\n{{error}}\nReply again with the corrected output only."}};
  return PromptSet::from_json(j);
}

}  // namespace

PromptSet PromptSet::defaults() {
  static const PromptSet set = built_in();
  return set;
}

PromptSet PromptSet::from_json(const Json& j) {
  if (!j.is_object() || !j.contains("templates") || !j["templates"].is_object()) {
    throw SchemaError(SchemaErrorCode::MissingField, "templates");
  }
  PromptSet set;
  set.version_ = j.value("version", std::string("unversioned"));
  for (const auto& [key, value] : j["templates"].items()) {
    if (!value.is_object()) throw SchemaError(SchemaErrorCode::TypeMismatch, "templates." + key);
    PromptTemplate t;
    t.system = value.value("system", std::string());
    t.user = value.value("user", std::string());
    set.templates_.emplace(key, std::move(t));
  }
  return set;
}

PromptSet PromptSet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read prompt set: " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  Json j = Json::parse(os.str(), nullptr, false);
  if (j.is_discarded()) throw SchemaError(SchemaErrorCode::NoJsonFound, path.string());
  PromptSet set = from_json(j);
  // An asset may override a subset; the rest comes from the built-in set.
  const PromptSet fallback = defaults();
  for (const auto& [key, value] : fallback.templates_) set.templates_.try_emplace(key, value);
  return set;
}

const PromptTemplate& PromptSet::at(std::string_view key) const {
  auto it = templates_.find(key);
  if (it == templates_.end()) throw Error("prompt template not found: " + std::string(key));
  return it->second;
}

Json PromptSet::to_json() const {
  Json j;
  j["version"] = version_;
  Json t = Json::object();
  for (const auto& [key, value] : templates_) t[key] = {{"system", value.system}, {"user", value.user}};
  j["templates"] = std::move(t);
  return j;
}

ChatPrompt PromptSet::render(const Gateway& gateway, std::string_view key,
                             const std::map<std::string, std::string>& vars) const {
  const PromptTemplate& t = at(key);
  return gateway.prompt(render_template(t.system, vars), render_template(t.user, vars));
}

void append_repair(ChatPrompt& prompt, const std::string& previous_reply, const std::string& error) {
  prompt.messages.push_back({ChatRole::assistant, previous_reply});
  static const PromptSet built = PromptSet::defaults();
  prompt.messages.push_back({ChatRole::user, render_template(built.at("repair").user, {{"error", error}})});
}

}  // namespace sopmas
