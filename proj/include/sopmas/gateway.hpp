#pragma once

// Uniform access to a chat-completion model and an embedding function.
//
// Two chat backends are provided: a scripted backend (ordered rules over the
// rendered prompt, first match wins) for deterministic tests and fixtures, and
// an HTTP backend speaking a chat-completions style API. Every call made
// through a Gateway is appended to an optional JSONL prompt log, which can be
// loaded back as a scripted backend to replay a live run.

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sopmas/domain.hpp"

namespace sopmas {

enum class ChatRole { system, user, assistant };

std::string_view to_string(ChatRole role);

struct ChatMessage {
  ChatRole role = ChatRole::user;
  std::string content;
};

struct ChatPrompt {
  std::vector<ChatMessage> messages;
  double temperature = 0.6;
  int max_tokens = 2048;

  /// Flat text used for rule matching and exact-match replay.
  std::string render() const;
  /// Throws ModelError(InvalidPrompt) when the prompt violates its invariants.
  void validate() const;
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ModelReply {
  std::string text;
  TokenUsage usage;
  std::string backend_tag;
};

enum class ModelErrorCode { NoRuleMatched, Transport, RateLimit, Remote, EmptyReply, InvalidPrompt };

std::string_view to_string(ModelErrorCode code);

class ModelError : public Error {
 public:
  ModelError(ModelErrorCode code, const std::string& detail, int retries = 0);
  ModelErrorCode code() const { return code_; }
  int retries() const { return retries_; }

 private:
  ModelErrorCode code_;
  int retries_;
};

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(std::size_t a, std::size_t b);
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ModelReply complete(const ChatPrompt& prompt) = 0;
  virtual std::string tag() const = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  /// Unit vector of dimension(), or the zero vector for text without tokens.
  virtual std::vector<double> embed(std::string_view text) const = 0;
  virtual std::size_t dimension() const = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend

struct ScriptRule {
  enum class Match { substring, regex, exact };

  Match match = Match::substring;
  std::string pattern;
  // For regex rules the response is a match format string: $1, $2 ... expand
  // to capture groups.
  std::string response;
  std::optional<int> max_uses;
};

class ScriptedBackend : public ChatBackend {
 public:
  explicit ScriptedBackend(std::vector<ScriptRule> rules);

  /// Loads `{"rules": [{"match": "...", "kind": "substring|regex|exact",
  /// "response": "...", "max_uses": n}]}` or a bare array of such rules.
  static std::unique_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);
  /// One exact-match, single-use rule per successful call in the log, in order.
  static std::unique_ptr<ScriptedBackend> from_prompt_log(const std::filesystem::path& path);

  ModelReply complete(const ChatPrompt& prompt) override;
  std::string tag() const override { return "scripted"; }

  int uses(std::size_t rule_index) const;
  std::size_t rule_count() const { return rules_.size(); }

 private:
  struct CompiledRule;
  std::vector<ScriptRule> rules_;
  std::vector<std::shared_ptr<const CompiledRule>> compiled_;
  std::vector<int> uses_;
  mutable std::mutex mu_;
};

std::vector<ScriptRule> script_rules_from_json(const std::string& json_text);

// ---------------------------------------------------------------------------
// HTTP backend

struct HttpConfig {
  std::string base_url = "http://127.0.0.1:8000/v1";
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  std::string embedding_model;  // empty: use the hashing embedder
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::optional<long long> seed;
};

class HttpBackend : public ChatBackend {
 public:
  explicit HttpBackend(HttpConfig config);
  ModelReply complete(const ChatPrompt& prompt) override;
  std::string tag() const override { return "http:" + config_.model; }
  const HttpConfig& config() const { return config_; }

  /// POSTs `body` to `<base_url><endpoint>` with retry and exponential backoff
  /// on transport failures, 429 and 5xx. Returns the parsed JSON body.
  std::string post_json(const std::string& endpoint, const std::string& body) const;

 private:
  HttpConfig config_;
};

class HashingEmbedder : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = 256);
  std::vector<double> embed(std::string_view text) const override;
  std::size_t dimension() const override { return dimension_; }

 private:
  std::size_t dimension_;
};

class HttpEmbedder : public Embedder {
 public:
  HttpEmbedder(HttpConfig config, std::size_t dimension);
  std::vector<double> embed(std::string_view text) const override;
  std::size_t dimension() const override { return dimension_; }

 private:
  HttpBackend http_;
  std::size_t dimension_;
};

/// Lowercase, split on non-alphanumerics, FNV-1a each token into one of
/// `dimension` buckets, count, L2-normalize.
std::vector<double> hashing_embedding(std::string_view text, std::size_t dimension);

/// Cosine similarity; 0 when either side is the zero vector.
double cosine(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------

class PromptLog {
 public:
  PromptLog() = default;
  explicit PromptLog(std::filesystem::path path);

  void append(const ChatPrompt& prompt, const std::string& backend, const ModelReply* reply,
              const std::string& error);
  std::size_t size() const;
  const std::optional<std::filesystem::path>& path() const { return path_; }

 private:
  std::optional<std::filesystem::path> path_;
  std::size_t entries_ = 0;
  mutable std::mutex mu_;
};

struct GatewayStats {
  std::size_t calls = 0;
  std::size_t failures = 0;
  long long prompt_tokens = 0;
  long long completion_tokens = 0;
};

class Gateway {
 public:
  Gateway(std::unique_ptr<ChatBackend> chat, std::unique_ptr<Embedder> embedder,
          std::shared_ptr<PromptLog> log = nullptr);

  ModelReply complete(const ChatPrompt& prompt);
  std::vector<double> embed(std::string_view text) const { return embedder_->embed(text); }
  std::size_t dimension() const { return embedder_->dimension(); }

  /// Builds a system+user prompt carrying the configured sampling settings.
  ChatPrompt prompt(std::string system, std::string user) const;

  void set_sampling(double temperature, int max_tokens);
  GatewayStats stats() const;
  ChatBackend& backend() { return *chat_; }

 private:
  std::unique_ptr<ChatBackend> chat_;
  std::unique_ptr<Embedder> embedder_;
  std::shared_ptr<PromptLog> log_;
  double temperature_ = 0.6;
  int max_tokens_ = 2048;
  mutable std::mutex mu_;
  GatewayStats stats_;
};

/// Scripted gateway with the hashing embedder; the usual test setup.
std::unique_ptr<Gateway> make_scripted_gateway(std::vector<ScriptRule> rules, std::size_t dimension = 256,
                                               std::shared_ptr<PromptLog> log = nullptr);

}  // namespace sopmas
