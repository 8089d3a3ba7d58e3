#include "msconv/run_config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <vector>

#include "msconv/json_util.hpp"

namespace msconv {

namespace {

SourceLocation location_of_offset(std::string_view text, std::size_t offset) {
  SourceLocation loc{1, 1};
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++loc.line;
      loc.column = 1;
    } else {
      ++loc.column;
    }
  }
  return loc;
}

std::string format_location(const std::string& origin, SourceLocation loc) {
  if (loc.line == 0) return origin;
  return origin + ":" + std::to_string(loc.line) + ":" + std::to_string(loc.column);
}

}  // namespace

ConfigFileError::ConfigFileError(const std::string& origin, SourceLocation loc, const std::string& what)
    : std::runtime_error(format_location(origin, loc) + ": " + what), loc_(loc) {}

std::optional<SourceLocation> locate_key(std::string_view text, std::string_view dotted_path) {
  struct Frame {
    bool object;
    std::string key;
  };
  std::vector<Frame> stack;
  std::optional<SourceLocation> best;
  std::size_t best_len = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    const char ch = text[i];
    if (ch == '{' || ch == '[') {
      stack.push_back({ch == '{', {}});
      ++i;
    } else if (ch == '}' || ch == ']') {
      if (!stack.empty()) stack.pop_back();
      ++i;
    } else if (ch == '"') {
      const std::size_t start = i++;
      std::string s;
      while (i < text.size() && text[i] != '"') {
        if (text[i] == '\\' && i + 1 < text.size()) ++i;
        s += text[i++];
      }
      ++i;
      std::size_t j = i;
      while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
      if (j < text.size() && text[j] == ':' && !stack.empty() && stack.back().object) {
        stack.back().key = s;
        std::string path;
        bool in_array = false;
        for (const Frame& f : stack) {
          if (!f.object) {
            in_array = true;
            break;
          }
          path += (path.empty() ? "" : ".") + f.key;
        }
        if (in_array) continue;
        const bool prefix = dotted_path.starts_with(path) &&
                            (path.size() == dotted_path.size() || dotted_path[path.size()] == '.');
        if (prefix && path.size() > best_len) {
          best = location_of_offset(text, start);
          best_len = path.size();
        }
      }
    } else {
      ++i;
    }
  }
  return best;
}

nlohmann::json to_json(const RunConfig& cfg) {
  return {{"model", to_json(cfg.model)}, {"train", to_json(cfg.train)}, {"data", to_json(cfg.data)}};
}

RunConfig parse_run_config(std::string_view text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;
    throw ConfigFileError(origin, location_of_offset(text, offset), "syntax error: " + std::string(e.what()));
  }
  try {
    reject_unknown_keys(j, {"model", "train", "data"}, "");
    RunConfig cfg;
    if (j.contains("model")) cfg.model = model_config_from_json(j["model"]);
    if (j.contains("train")) cfg.train = train_config_from_json(j["train"]);
    if (j.contains("data")) cfg.data = dataset_spec_from_json(j["data"]);
    cfg.model = cfg.model.normalized();
    cfg.train.validate();
    return cfg;
  } catch (const ConfigError& e) {
    throw ConfigFileError(origin, locate_key(text, e.key()).value_or(SourceLocation{}), e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigFileError(origin, locate_key(text, "model").value_or(SourceLocation{}), e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigFileError(path.string(), {}, "cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

}  // namespace msconv
