#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "scd2te/pipeline.hpp"

namespace scd2te {

/// Model knobs plus the output directory, read from `key = value` text.
struct RunConfig {
  ModelConfig model;
  std::filesystem::path output_dir = ".";
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string description;
};

/// Every accepted key with its default and meaning, in file order.
const std::vector<ConfigKey>& config_keys();

/// One `key = value` per line; `#` starts a comment. Unknown or repeated
/// keys are rejected. Per-layer lists are comma separated; a single value is
/// repeated for every layer. Throws ParseError with the line number.
RunConfig parse_run_config(std::istream& in);
RunConfig load_run_config(const std::filesystem::path& path);

/// Writes every key; parse_run_config reads it back to an equal config.
void write_run_config(std::ostream& out, const RunConfig& cfg);

}  // namespace scd2te
