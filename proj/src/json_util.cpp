#include "msconv/json_util.hpp"

#include <algorithm>

namespace msconv {

void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                         const std::string& section) {
  if (!obj.is_object()) {
    throw ConfigError(section, "section '" + section + "' must be an object");
  }
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      const std::string path = section.empty() ? key : section + "." + key;
      throw ConfigError(path, "unknown key '" + path + "'");
    }
  }
}

}  // namespace msconv
