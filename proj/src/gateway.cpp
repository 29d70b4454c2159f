#include "sopmas/gateway.hpp"

#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "sopmas/serialize.hpp"
#include "sopmas/text.hpp"

namespace sopmas {

std::string_view to_string(ChatRole role) {
  switch (role) {
    case ChatRole::system: return "system";
    case ChatRole::user: return "user";
    case ChatRole::assistant: return "assistant";
  }
  return "user";
}

namespace {

ChatRole role_from_string(std::string_view s) {
  if (s == "system") return ChatRole::system;
  if (s == "assistant") return ChatRole::assistant;
  return ChatRole::user;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

std::string ChatPrompt::render() const {
  std::string out;
  for (const auto& m : messages) {
    out += "[";
    out += to_string(m.role);
    out += "]\n";
    out += m.content;
    out += "\n";
  }
  return out;
}

void ChatPrompt::validate() const {
  if (messages.empty()) throw ModelError(ModelErrorCode::InvalidPrompt, "prompt has no messages");
  if (!(temperature >= 0.0 && temperature <= 2.0)) {
    throw ModelError(ModelErrorCode::InvalidPrompt, "temperature outside [0, 2]");
  }
  if (max_tokens <= 0) throw ModelError(ModelErrorCode::InvalidPrompt, "max_tokens must be positive");
}

std::string_view to_string(ModelErrorCode code) {
  switch (code) {
    case ModelErrorCode::NoRuleMatched: return "NoRuleMatched";
    case ModelErrorCode::Transport: return "Transport";
    case ModelErrorCode::RateLimit: return "RateLimit";
    case ModelErrorCode::Remote: return "RemoteError";
    case ModelErrorCode::EmptyReply: return "EmptyReply";
    case ModelErrorCode::InvalidPrompt: return "InvalidPrompt";
  }
  return "?";
}

ModelError::ModelError(ModelErrorCode code, const std::string& detail, int retries)
    : Error(std::string(to_string(code)) + ": " + detail +
            (retries > 0 ? " (after " + std::to_string(retries) + " retries)" : "")),
      code_(code),
      retries_(retries) {}

DimensionMismatch::DimensionMismatch(std::size_t a, std::size_t b)
    : Error("dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}

// ---------------------------------------------------------------------------

struct ScriptedBackend::CompiledRule {
  std::optional<std::regex> re;
};

ScriptedBackend::ScriptedBackend(std::vector<ScriptRule> rules)
    : rules_(std::move(rules)), uses_(rules_.size(), 0) {
  for (const auto& r : rules_) {
    auto c = std::make_shared<CompiledRule>();
    if (r.match == ScriptRule::Match::regex) c->re.emplace(r.pattern, std::regex::ECMAScript);
    compiled_.push_back(std::move(c));
  }
}

ModelReply ScriptedBackend::complete(const ChatPrompt& prompt) {
  const std::string text = prompt.render();
  std::lock_guard lock(mu_);
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const auto& rule = rules_[i];
    if (rule.max_uses && uses_[i] >= *rule.max_uses) continue;
    std::string response;
    switch (rule.match) {
      case ScriptRule::Match::substring:
        if (text.find(rule.pattern) == std::string::npos) continue;
        response = rule.response;
        break;
      case ScriptRule::Match::exact:
        if (text != rule.pattern) continue;
        response = rule.response;
        break;
      case ScriptRule::Match::regex: {
        std::smatch m;
        if (!std::regex_search(text, m, *compiled_[i]->re)) continue;
        response = m.format(rule.response);
        break;
      }
    }
    ++uses_[i];
    ModelReply reply;
    reply.text = std::move(response);
    reply.backend_tag = tag();
    return reply;
  }
  throw ModelError(ModelErrorCode::NoRuleMatched, "no script rule matches prompt: " + clip(text, 160));
}

int ScriptedBackend::uses(std::size_t rule_index) const {
  std::lock_guard lock(mu_);
  return uses_.at(rule_index);
}

std::vector<ScriptRule> script_rules_from_json(const std::string& json_text) {
  Json j = Json::parse(json_text);
  const Json& rules = j.is_object() ? j.at("rules") : j;
  if (!rules.is_array()) throw SchemaError(SchemaErrorCode::TypeMismatch, "rules");
  std::vector<ScriptRule> out;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    const Json& r = rules[i];
    std::string path = "rules[" + std::to_string(i) + "]";
    if (!r.is_object() || !r.contains("match") || !r.contains("response")) {
      throw SchemaError(SchemaErrorCode::MissingField, path);
    }
    ScriptRule rule;
    rule.pattern = r.at("match").get<std::string>();
    rule.response = r.at("response").get<std::string>();
    std::string kind = r.value("kind", "substring");
    if (kind == "substring") rule.match = ScriptRule::Match::substring;
    else if (kind == "regex") rule.match = ScriptRule::Match::regex;
    else if (kind == "exact") rule.match = ScriptRule::Match::exact;
    else throw SchemaError(SchemaErrorCode::InvalidValue, path + ".kind");
    if (r.contains("max_uses") && !r.at("max_uses").is_null()) rule.max_uses = r.at("max_uses").get<int>();
    out.push_back(std::move(rule));
  }
  return out;
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  return std::make_unique<ScriptedBackend>(script_rules_from_json(read_file(path)));
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_prompt_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read prompt log " + path.string());
  std::vector<ScriptRule> rules;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    Json e = Json::parse(line);
    if (!e.contains("reply") || e.at("reply").is_null()) continue;
    ChatPrompt p;
    for (const auto& m : e.at("prompt").at("messages")) {
      p.messages.push_back({role_from_string(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
    }
    rules.push_back(ScriptRule{ScriptRule::Match::exact, p.render(), e.at("reply").get<std::string>(), 1});
  }
  return std::make_unique<ScriptedBackend>(std::move(rules));
}

// ---------------------------------------------------------------------------

std::vector<double> hashing_embedding(std::string_view text, std::size_t dimension) {
  std::vector<double> v(dimension, 0.0);
  if (dimension == 0) return v;
  auto is_token_char = [](unsigned char c) { return std::isalnum(c) || c >= 0x80; };
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !is_token_char(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    std::uint64_t h = 14695981039346656037ull;
    while (i < text.size() && is_token_char(static_cast<unsigned char>(text[i]))) {
      h ^= static_cast<unsigned char>(std::tolower(static_cast<unsigned char>(text[i])));
      h *= 1099511628211ull;
      ++i;
    }
    v[h % dimension] += 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) return v;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

HashingEmbedder::HashingEmbedder(std::size_t dimension) : dimension_(dimension) {
  if (dimension_ == 0) throw Error("embedding dimension must be positive");
}

std::vector<double> HashingEmbedder::embed(std::string_view text) const {
  return hashing_embedding(text, dimension_);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch(a.size(), b.size());
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

// ---------------------------------------------------------------------------

PromptLog::PromptLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
}

void PromptLog::append(const ChatPrompt& prompt, const std::string& backend, const ModelReply* reply,
                       const std::string& error) {
  std::lock_guard lock(mu_);
  ++entries_;
  if (!path_) return;
  Json e;
  e["seq"] = entries_;
  e["backend"] = backend;
  Json msgs = Json::array();
  for (const auto& m : prompt.messages) {
    Json jm;
    jm["role"] = std::string(to_string(m.role));
    jm["content"] = m.content;
    msgs.push_back(std::move(jm));
  }
  e["prompt"] = {{"messages", std::move(msgs)}, {"temperature", prompt.temperature}, {"max_tokens", prompt.max_tokens}};
  if (reply) {
    e["reply"] = reply->text;
    e["usage"] = {{"prompt_tokens", reply->usage.prompt_tokens},
                  {"completion_tokens", reply->usage.completion_tokens}};
  } else {
    e["reply"] = nullptr;
    e["error"] = error;
  }
  std::ofstream out(*path_, std::ios::app | std::ios::binary);
  out << e.dump() << "\n";
}

std::size_t PromptLog::size() const {
  std::lock_guard lock(mu_);
  return entries_;
}

Gateway::Gateway(std::unique_ptr<ChatBackend> chat, std::unique_ptr<Embedder> embedder,
                 std::shared_ptr<PromptLog> log)
    : chat_(std::move(chat)), embedder_(std::move(embedder)), log_(std::move(log)) {
  if (!chat_ || !embedder_) throw Error("gateway requires a chat backend and an embedder");
}

ModelReply Gateway::complete(const ChatPrompt& prompt) {
  prompt.validate();
  try {
    ModelReply reply = chat_->complete(prompt);
    {
      std::lock_guard lock(mu_);
      ++stats_.calls;
      stats_.prompt_tokens += reply.usage.prompt_tokens;
      stats_.completion_tokens += reply.usage.completion_tokens;
    }
    if (log_) log_->append(prompt, chat_->tag(), &reply, "");
    return reply;
  } catch (const ModelError& e) {
    {
      std::lock_guard lock(mu_);
      ++stats_.calls;
      ++stats_.failures;
    }
    if (log_) log_->append(prompt, chat_->tag(), nullptr, e.what());
    throw;
  }
}

ChatPrompt Gateway::prompt(std::string system, std::string user) const {
  ChatPrompt p;
  p.messages.push_back({ChatRole::system, std::move(system)});
  p.messages.push_back({ChatRole::user, std::move(user)});
  std::lock_guard lock(mu_);
  p.temperature = temperature_;
  p.max_tokens = max_tokens_;
  return p;
}

void Gateway::set_sampling(double temperature, int max_tokens) {
  std::lock_guard lock(mu_);
  temperature_ = temperature;
  max_tokens_ = max_tokens;
}

GatewayStats Gateway::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

std::unique_ptr<Gateway> make_scripted_gateway(std::vector<ScriptRule> rules, std::size_t dimension,
                                               std::shared_ptr<PromptLog> log) {
  return std::make_unique<Gateway>(std::make_unique<ScriptedBackend>(std::move(rules)),
                                   std::make_unique<HashingEmbedder>(dimension), std::move(log));
}

}  // namespace sopmas
