#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "sopmas/gateway.hpp"
#include "sopmas/serialize.hpp"

namespace sopmas {

namespace {

struct Endpoint {
  std::string scheme_host_port;
  std::string path_prefix;
};

Endpoint split_url(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error("http.base_url must include a scheme: " + url);
  auto slash = url.find('/', scheme + 3);
  Endpoint e;
  e.scheme_host_port = url.substr(0, slash);
  if (slash != std::string::npos) e.path_prefix = url.substr(slash);
  while (!e.path_prefix.empty() && e.path_prefix.back() == '/') e.path_prefix.pop_back();
  return e;
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

HttpBackend::HttpBackend(HttpConfig config) : config_(std::move(config)) { split_url(config_.base_url); }

std::string HttpBackend::post_json(const std::string& endpoint, const std::string& body) const {
  const Endpoint ep = split_url(config_.base_url);
  httplib::Client client(ep.scheme_host_port);
  auto seconds = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout).count();
  auto micros = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout).count() % 1000000;
  client.set_connection_timeout(seconds, micros);
  client.set_read_timeout(seconds, micros);
  client.set_write_timeout(seconds, micros);

  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  ModelErrorCode last_code = ModelErrorCode::Transport;
  std::string last_detail;
  for (int attempt = 0;; ++attempt) {
    auto res = client.Post(ep.path_prefix + endpoint, headers, body, "application/json");
    std::chrono::milliseconds retry_after{0};
    if (!res) {
      last_code = ModelErrorCode::Transport;
      last_detail = httplib::to_string(res.error());
    } else if (res->status >= 200 && res->status < 300) {
      return res->body;
    } else {
      last_code = res->status == 429 ? ModelErrorCode::RateLimit : ModelErrorCode::Remote;
      last_detail = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
      if (!retryable_status(res->status)) throw ModelError(last_code, last_detail, attempt);
      if (res->has_header("Retry-After")) {
        retry_after = std::chrono::seconds(std::atoi(res->get_header_value("Retry-After").c_str()));
      }
    }
    if (attempt >= config_.max_retries) throw ModelError(last_code, last_detail, attempt);
    auto backoff = config_.initial_backoff * (1LL << attempt);
    std::this_thread::sleep_for(std::max<std::chrono::milliseconds>(backoff, std::min(retry_after, std::chrono::milliseconds(30000))));
  }
}

ModelReply HttpBackend::complete(const ChatPrompt& prompt) {
  Json req;
  req["model"] = config_.model;
  Json msgs = Json::array();
  for (const auto& m : prompt.messages) {
    msgs.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
  }
  req["messages"] = std::move(msgs);
  req["temperature"] = prompt.temperature;
  req["max_tokens"] = prompt.max_tokens;
  if (config_.seed) req["seed"] = *config_.seed;

  Json res = Json::parse(post_json("/chat/completions", req.dump()), nullptr, false);
  if (res.is_discarded()) throw ModelError(ModelErrorCode::Remote, "response is not JSON");
  ModelReply reply;
  reply.backend_tag = tag();
  try {
    const Json& content = res.at("choices").at(0).at("message").at("content");
    reply.text = content.is_null() ? "" : content.get<std::string>();
  } catch (const Json::exception&) {
    throw ModelError(ModelErrorCode::Remote, "response lacks choices[0].message.content");
  }
  if (auto it = res.find("usage"); it != res.end() && it->is_object()) {
    reply.usage.prompt_tokens = it->value("prompt_tokens", 0);
    reply.usage.completion_tokens = it->value("completion_tokens", 0);
  }
  return reply;
}

HttpEmbedder::HttpEmbedder(HttpConfig config, std::size_t dimension)
    : http_(std::move(config)), dimension_(dimension) {}

std::vector<double> HttpEmbedder::embed(std::string_view text) const {
  if (text.empty()) return std::vector<double>(dimension_, 0.0);
  Json req;
  req["model"] = http_.config().embedding_model;
  req["input"] = std::string(text);
  Json res = Json::parse(http_.post_json("/embeddings", req.dump()), nullptr, false);
  std::vector<double> v;
  try {
    v = res.at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const Json::exception&) {
    throw ModelError(ModelErrorCode::Remote, "embedding response lacks data[0].embedding");
  }
  if (v.size() != dimension_) throw DimensionMismatch(v.size(), dimension_);
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

}  // namespace sopmas
