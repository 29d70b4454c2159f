#include "sopmas/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace sopmas {

namespace fs = std::filesystem;

void Config::validate() const {
  if (backend != "scripted" && backend != "http") throw ConfigError("backend must be 'scripted' or 'http', got '" + backend + "'");
  if (backend == "scripted" && !script) throw ConfigError("the scripted backend needs a rules file (script)");
  if (backend == "http" && http.model.empty()) throw ConfigError("the http backend needs http.model");
  if (temperature < 0.0 || temperature > 2.0) throw ConfigError("temperature must be within [0, 2]");
  if (embedding_dimension == 0) throw ConfigError("embedding.dimension must be positive");
  if (repair_budget < 0) throw ConfigError("repair_budget must be non-negative");
  try {
    retrieval.validate();
    engine.validate();
    watcher.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

namespace {

using Setter = std::function<void(Config&, const Json&, const fs::path&)>;

fs::path resolve(const Json& v, const fs::path& base) {
  fs::path p = v.get<std::string>();
  return p.is_relative() ? base / p : p;
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"backend", [](Config& c, const Json& v, const fs::path&) { c.backend = v.get<std::string>(); }},
      {"script", [](Config& c, const Json& v, const fs::path& b) { c.script = resolve(v, b); }},
      {"http.base_url", [](Config& c, const Json& v, const fs::path&) { c.http.base_url = v.get<std::string>(); }},
      {"http.model", [](Config& c, const Json& v, const fs::path&) { c.http.model = v.get<std::string>(); }},
      {"http.api_key_env", [](Config& c, const Json& v, const fs::path&) { c.http.api_key_env = v.get<std::string>(); }},
      {"http.embedding_model",
       [](Config& c, const Json& v, const fs::path&) { c.http.embedding_model = v.get<std::string>(); }},
      {"http.timeout_ms",
       [](Config& c, const Json& v, const fs::path&) { c.http.timeout = std::chrono::milliseconds(v.get<long long>()); }},
      {"http.max_retries", [](Config& c, const Json& v, const fs::path&) { c.http.max_retries = v.get<int>(); }},
      {"temperature", [](Config& c, const Json& v, const fs::path&) { c.temperature = v.get<double>(); }},
      {"max_tokens", [](Config& c, const Json& v, const fs::path&) { c.max_tokens = v.get<int>(); }},
      {"embedding.dimension",
       [](Config& c, const Json& v, const fs::path&) { c.embedding_dimension = v.get<std::size_t>(); }},
      {"store", [](Config& c, const Json& v, const fs::path& b) { c.store = resolve(v, b); }},
      {"runs", [](Config& c, const Json& v, const fs::path& b) { c.runs = resolve(v, b); }},
      {"prompts", [](Config& c, const Json& v, const fs::path& b) { c.prompts = resolve(v, b); }},
      {"prompt_log", [](Config& c, const Json& v, const fs::path& b) { c.prompt_log = resolve(v, b); }},
      {"retrieval.lambda", [](Config& c, const Json& v, const fs::path&) { c.retrieval.lambda = v.get<double>(); }},
      {"retrieval.k", [](Config& c, const Json& v, const fs::path&) { c.retrieval.k = v.get<std::size_t>(); }},
      {"retrieval.mode",
       [](Config& c, const Json& v, const fs::path&) { c.retrieval.mode = retrieval_mode_from_string(v.get<std::string>()); }},
      {"sop_rag", [](Config& c, const Json& v, const fs::path&) { c.use_sop_rag = v.get<bool>(); }},
      {"fixed_sop", [](Config& c, const Json& v, const fs::path&) { c.fixed_sop = v.get<std::string>(); }},
      {"repair_budget", [](Config& c, const Json& v, const fs::path&) { c.repair_budget = v.get<int>(); }},
      {"engine.max_rounds", [](Config& c, const Json& v, const fs::path&) { c.engine.max_rounds = v.get<int>(); }},
      {"engine.parallel", [](Config& c, const Json& v, const fs::path&) { c.engine.parallel = v.get<bool>(); }},
      {"engine.seed", [](Config& c, const Json& v, const fs::path&) { c.engine.seed = v.get<std::uint64_t>(); }},
      {"engine.action_retries", [](Config& c, const Json& v, const fs::path&) { c.engine.action_retries = v.get<int>(); }},
      {"engine.max_tool_steps_per_turn",
       [](Config& c, const Json& v, const fs::path&) { c.engine.max_tool_steps_per_turn = v.get<int>(); }},
      {"engine.history_window",
       [](Config& c, const Json& v, const fs::path&) { c.engine.history_window = v.get<std::size_t>(); }},
      {"watcher.interval", [](Config& c, const Json& v, const fs::path&) {
         if (v.is_null()) {
           c.watcher.interval.reset();
         } else {
           c.watcher.interval = v.get<int>();
         }
       }},
      {"watcher.env_threshold", [](Config& c, const Json& v, const fs::path&) { c.watcher.env_threshold = v.get<int>(); }},
      {"watcher.cap", [](Config& c, const Json& v, const fs::path&) { c.watcher.cap = v.get<int>(); }},
      {"watcher.enabled", [](Config& c, const Json& v, const fs::path&) { c.watcher.enabled = v.get<bool>(); }},
      {"watcher.use_pep", [](Config& c, const Json& v, const fs::path&) { c.watcher.use_pep = v.get<bool>(); }},
      {"watcher.pep_k", [](Config& c, const Json& v, const fs::path&) { c.watcher.pep_k = v.get<std::size_t>(); }},
      {"watcher.window", [](Config& c, const Json& v, const fs::path&) { c.watcher.window = v.get<std::size_t>(); }},
      {"watcher.repair_budget", [](Config& c, const Json& v, const fs::path&) { c.watcher.repair_budget = v.get<int>(); }},
      {"tools.sandbox_timeout_s",
       [](Config& c, const Json& v, const fs::path&) { c.tools.sandbox_timeout = std::chrono::seconds(v.get<int>()); }},
      {"tools.file_root", [](Config& c, const Json& v, const fs::path& b) { c.tools.file_root = resolve(v, b); }},
      {"tools.search_corpus", [](Config& c, const Json& v, const fs::path& b) { c.tools.search_corpus = resolve(v, b); }},
      {"tools.aliases", [](Config& c, const Json& v, const fs::path&) {
         c.tools.aliases.clear();
         for (const auto& [k, target] : v.items()) c.tools.aliases[k] = target.get<std::string>();
       }},
  };
  return table;
}

void apply_flat(Config& config, const Json& j, const std::string& prefix, const fs::path& base) {
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    auto it = setters().find(path);
    if (it != setters().end()) {
      try {
        it->second(config, value, base);
      } catch (const Json::exception& e) {
        throw ConfigError("config key '" + path + "' has the wrong type");
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError("config key '" + path + "': " + e.what());
      }
    } else if (value.is_object()) {
      apply_flat(config, value, path, base);
    } else {
      throw ConfigError("unknown config key '" + path + "'");
    }
  }
}

}  // namespace

void apply_config_json(Config& config, const Json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  apply_flat(config, j, "", base_dir);
}

Config load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config: " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  Json j = Json::parse(os.str(), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path.string());
  Config config;
  apply_config_json(config, j, path.parent_path());
  return config;
}

Json config_to_json(const Config& c) {
  Json j;
  j["backend"] = c.backend;
  if (c.script) j["script"] = c.script->string();
  j["http"] = {{"base_url", c.http.base_url}, {"model", c.http.model}, {"api_key_env", c.http.api_key_env}};
  j["temperature"] = c.temperature;
  j["embedding"] = {{"dimension", c.embedding_dimension}};
  j["store"] = c.store.string();
  j["retrieval"] = {{"lambda", c.retrieval.lambda}, {"k", c.retrieval.k}, {"mode", std::string(to_string(c.retrieval.mode))}};
  j["sop_rag"] = c.use_sop_rag;
  j["engine"] = {{"max_rounds", c.engine.max_rounds}, {"parallel", c.engine.parallel}, {"seed", c.engine.seed}};
  j["watcher"] = {{"interval", c.watcher.interval ? Json(*c.watcher.interval) : Json(nullptr)},
                  {"env_threshold", c.watcher.env_threshold},
                  {"cap", c.watcher.cap},
                  {"enabled", c.watcher.enabled},
                  {"use_pep", c.watcher.use_pep}};
  return j;
}

}  // namespace sopmas
