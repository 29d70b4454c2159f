#include "sopmas/instantiation.hpp"

#include "sopmas/text.hpp"

namespace sopmas {

NeedAnalysis analyze_need(Gateway& gateway, const PromptSet& prompts, const Query& query) {
  ChatPrompt prompt = prompts.render(gateway, "need_analysis",
                                     {{"query", query.text}, {"task_kind", std::string(to_string(query.kind))}});
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::string text = trim(gateway.complete(prompt).text);
    if (!text.empty()) return NeedAnalysis{std::move(text)};
  }
  throw ModelError(ModelErrorCode::EmptyReply, "need analysis came back empty twice", 1);
}

OperatingProcedure parse_op(std::string_view text, const Query& query) {
  Json j = extract_json_object(text);
  OperatingProcedure op;
  op.sop = sop_from_json(j);
  op.bound_query = query;
  return op;
}

TeamStrategy bootstrap_strategy(TaskKind kind) {
  if (kind == TaskKind::coding) return TeamStrategy::minimal;
  if (task_kind_requires_tools(kind)) return TeamStrategy::diverse;
  return TeamStrategy::standard;
}

std::string strategy_hint(TeamStrategy strategy) {
  switch (strategy) {
    case TeamStrategy::minimal:
      return "Design the smallest team that can solve this task. A single agent connected from User to End is "
             "acceptable; add roles only when a simpler design has already failed.\n\n";
    case TeamStrategy::diverse:
      return "Use several specialised roles so that planning, tool use and verification are handled by different "
             "agents, and include a dedicated final-answer submitter that alone delivers the answer to End.\n\n";
    case TeamStrategy::standard:
      break;
  }
  return "";
}

std::string render_exemplars(const std::vector<SopCase>& exemplars) {
  if (exemplars.empty()) return "";
  std::string out = "Reference SOPs from similar past queries:\n\n";
  for (std::size_t i = 0; i < exemplars.size(); ++i) {
    const auto& c = exemplars[i];
    out += "SOP " + std::to_string(i + 1) + " (query: " + c.query.text + ")\n";
    out += canonical_dump(to_json(c.sop)) + "\n\n";
  }
  return out;
}

InstantiationResult instantiate(Gateway& gateway, const PromptSet& prompts, const Query& query, const NeedAnalysis& need,
                                const std::vector<SopCase>& retrieved, const std::set<std::string>& registry_tools,
                                const InstantiationOptions& options) {
  InstantiationResult result;
  if (options.fixed_sop) {
    if (auto diagnostics = validate_sop(options.fixed_sop->sop, registry_tools); !diagnostics.empty()) {
      throw ValidationError(std::move(diagnostics));
    }
    result.op = bind_sop(options.fixed_sop->sop, query, {options.fixed_sop->id});
    return result;
  }

  std::string tools;
  for (const auto& t : registry_tools) tools += (tools.empty() ? "" : ", ") + t;
  ChatPrompt prompt = prompts.render(gateway, "instantiation",
                                     {{"query", query.text},
                                      {"task_kind", std::string(to_string(query.kind))},
                                      {"need", need.empty() ? "(not available)" : need.text},
                                      {"exemplars", render_exemplars(retrieved)},
                                      {"strategy", strategy_hint(options.strategy)},
                                      {"tools", tools.empty() ? "(none)" : tools}});

  std::vector<std::string> provenance;
  for (const auto& c : retrieved) provenance.push_back(c.id);

  result.model_called = true;
  result.op = generate_with_repair<OperatingProcedure>(
      gateway, std::move(prompt), options.repair_budget,
      [&](const std::string& reply) {
        OperatingProcedure op = parse_op(reply, query);
        if (auto diagnostics = validate_sop(op.sop, registry_tools); !diagnostics.empty()) {
          throw ValidationError(std::move(diagnostics));
        }
        op.provenance = provenance;
        return op;
      },
      &result.repairs);
  return result;
}

}  // namespace sopmas
