#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "sopmas/gateway.hpp"
#include "sopmas/serialize.hpp"

namespace sopmas {

struct PromptTemplate {
  std::string system;
  std::string user;
  bool operator==(const PromptTemplate&) const = default;
};

/// Named prompt templates with `{{placeholder}}` slots. The built-in set is
/// mirrored by prompts/prompts.v1.json so prompts can be tuned without
/// rebuilding.
class PromptSet {
 public:
  static PromptSet defaults();
  static PromptSet load(const std::filesystem::path& path);
  static PromptSet from_json(const Json& j);

  const PromptTemplate& at(std::string_view key) const;
  const std::string& version() const { return version_; }
  Json to_json() const;

  /// Renders a template into a system+user prompt using the gateway's sampling settings.
  ChatPrompt render(const Gateway& gateway, std::string_view key, const std::map<std::string, std::string>& vars) const;

  bool operator==(const PromptSet&) const = default;

 private:
  std::string version_;
  std::map<std::string, PromptTemplate, std::less<>> templates_;
};

/// Appends the failed reply and a repair request to `prompt`.
void append_repair(ChatPrompt& prompt, const std::string& previous_reply, const std::string& error);

}  // namespace sopmas
