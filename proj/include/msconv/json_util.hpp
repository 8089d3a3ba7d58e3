#pragma once

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace msconv {

// Configuration error tied to a dotted key path (e.g. "train.lr").
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::invalid_argument(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// Throws ConfigError naming the first key of `obj` not in `allowed`.
void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                         const std::string& section);

// Reads obj[key] into out when present, wrapping type errors in ConfigError.
template <typename T>
void read_field(const nlohmann::json& obj, const char* key, const std::string& section, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string path = section.empty() ? std::string(key) : section + "." + key;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path, "bad value for '" + path + "': " + e.what());
  }
}

}  // namespace msconv
