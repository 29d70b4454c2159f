#pragma once

// Small string helpers shared by the parsers.

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace sopmas {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> split(std::string_view s, std::string_view sep);
bool starts_with_icase(std::string_view s, std::string_view prefix);
std::string replace_all(std::string s, std::string_view from, std::string_view to);

/// Substitutes `{{name}}` placeholders. Unknown placeholders are left intact.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars);

/// Truncates to at most `max_bytes`, appending an ellipsis marker when cut.
std::string clip(std::string_view s, std::size_t max_bytes);

}  // namespace sopmas
