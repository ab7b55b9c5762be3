#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace mclstm::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Defaults for one task. Every key a user may set appears here; anything
/// else is rejected.
nlohmann::json default_config(const std::string& task);

/// Overlays `user` onto the task defaults. The task comes from `user["task"]`,
/// or `fallback_task` when absent. Throws ConfigError on unknown keys and type
/// mismatches, naming the dotted path.
nlohmann::json resolve_config(const nlohmann::json& user, const std::string& fallback_task = "addition");

nlohmann::json load_config_file(const std::filesystem::path& path);

/// Applies "a.b.c=value"; value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& user, const std::string& assignment);

/// 16 hex digits of FNV-1a over the canonical dump.
std::string config_hash(const nlohmann::json& config);

/// Relative output directories resolve against $MCLSTM_OUTPUT_ROOT when set.
std::filesystem::path output_dir(const nlohmann::json& config);

std::vector<std::string> known_tasks();

}  // namespace mclstm::cli
