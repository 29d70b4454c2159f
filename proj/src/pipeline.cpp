#include "sopmas/pipeline.hpp"

#include <cstdio>

namespace sopmas {

std::unique_ptr<Gateway> make_gateway(const Config& config, std::shared_ptr<PromptLog> log) {
  std::unique_ptr<ChatBackend> chat;
  std::unique_ptr<Embedder> embedder;
  if (config.backend == "http") {
    HttpConfig http = config.http;
    if (!http.seed) http.seed = static_cast<long long>(config.engine.seed);
    chat = std::make_unique<HttpBackend>(http);
    if (!http.embedding_model.empty()) {
      embedder = std::make_unique<HttpEmbedder>(http, config.embedding_dimension);
    }
  } else {
    if (!config.script) throw ConfigError("the scripted backend needs a rules file (script)");
    try {
      chat = ScriptedBackend::from_file(*config.script);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  if (!embedder) embedder = std::make_unique<HashingEmbedder>(config.embedding_dimension);
  auto gateway = std::make_unique<Gateway>(std::move(chat), std::move(embedder), std::move(log));
  gateway->set_sampling(config.temperature, config.max_tokens);
  return gateway;
}

Runtime::Runtime(Config config, StoreAccess access) : config_(std::move(config)) {
  config_.validate();
  std::shared_ptr<PromptLog> log;
  if (config_.prompt_log) log = std::make_shared<PromptLog>(*config_.prompt_log);
  gateway_ = make_gateway(config_, std::move(log));
  try {
    tools_ = default_registry(config_.tools);
    prompts_ = config_.prompts ? PromptSet::load(*config_.prompts) : PromptSet::defaults();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (access == StoreAccess::read_write || std::filesystem::exists(config_.store)) {
    repository_ = std::make_unique<Repository>(config_.store, *gateway_, access);
  }
}

std::string query_id(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "q-%012llx", static_cast<unsigned long long>(h & 0xffffffffffffULL));
  return buf;
}

Query make_query(std::string text, TaskKind kind) {
  Query q;
  q.id = query_id(text);
  q.text = std::move(text);
  q.kind = kind;
  return q;
}

ExecutionTranscript execute(Runtime& runtime, const OperatingProcedure& op, std::vector<ReviewEvent>* reviews) {
  Engine engine(runtime.gateway(), runtime.tools(), runtime.prompts());
  const auto& cfg = runtime.config();
  if (!cfg.watcher.enabled) return engine.run(op, cfg.engine);
  const Repository* experience = cfg.watcher.use_pep ? runtime.repository() : nullptr;
  Watcher watcher(runtime.gateway(), cfg.watcher, experience, runtime.prompts());
  auto transcript = engine.run(op, cfg.engine, &watcher);
  if (reviews) *reviews = watcher.reviews();
  return transcript;
}

PipelineResult run_pipeline(Runtime& runtime, const Query& query, TeamStrategy strategy) {
  const auto& cfg = runtime.config();
  PipelineResult result;
  InstantiationOptions options;
  options.repair_budget = cfg.repair_budget;
  options.strategy = strategy;

  std::vector<SopCase> exemplars;
  if (cfg.fixed_sop) {
    std::optional<SopCase> fixed;
    if (runtime.repository()) fixed = runtime.repository()->find_case(*cfg.fixed_sop);
    if (!fixed) throw ConfigError("unknown SOP case id '" + *cfg.fixed_sop + "'");
    options.fixed_sop = std::move(fixed);
  } else {
    result.need = analyze_need(runtime.gateway(), runtime.prompts(), query);
    if (cfg.use_sop_rag && runtime.repository()) {
      result.retrieval = runtime.repository()->retrieve(query, result.need, cfg.retrieval);
      for (const auto& hit : result.retrieval.hits) exemplars.push_back(hit.sop_case);
    } else {
      result.retrieval.repository_empty = !runtime.repository() || runtime.repository()->case_count() == 0;
      result.retrieval.effective_mode = cfg.retrieval.mode;
    }
  }

  result.instantiation = instantiate(runtime.gateway(), runtime.prompts(), query, result.need, exemplars,
                                     runtime.tools().names(), options);
  result.transcript = execute(runtime, result.instantiation.op, &result.reviews);
  return result;
}

}  // namespace sopmas
