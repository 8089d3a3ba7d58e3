#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "msconv/networks.hpp"
#include "msconv/sr_pipeline.hpp"

namespace msconv {

// A config file: {"model": {...}, "train": {...}, "data": {...}}. Every
// section and key is optional; omitted values keep their defaults.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DatasetSpec data;
};

nlohmann::json to_json(const RunConfig& cfg);

struct SourceLocation {
  int line = 0;  // 1-based; 0 when unknown
  int column = 0;
};

// Parse or validation failure with the position of the offending token.
class ConfigFileError : public std::runtime_error {
 public:
  ConfigFileError(const std::string& origin, SourceLocation loc, const std::string& what);
  SourceLocation location() const { return loc_; }

 private:
  SourceLocation loc_;
};

RunConfig parse_run_config(std::string_view text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

// Position of the key named by a dotted path ("train.lr"), scanning the raw
// text. Falls back to the longest located prefix.
std::optional<SourceLocation> locate_key(std::string_view text, std::string_view dotted_path);

}  // namespace msconv
