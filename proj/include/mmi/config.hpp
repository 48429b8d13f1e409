#pragma once

// Structured run configuration: one JSON tree with a section per command.

#include <filesystem>
#include <string>

#include <json.hpp>

namespace mmi::config {

/// Every key the pipeline reads, with its default.
nlohmann::json defaults();

/// Reads a JSON config file and merges it over the defaults.
nlohmann::json load(const std::filesystem::path& path);

/// Applies "dotted.key=value"; the value is parsed as JSON when it parses,
/// otherwise taken as a string. Unknown keys are rejected.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

/// Dotted-path lookup that throws UsageError naming the missing key.
const nlohmann::json& at(const nlohmann::json& cfg, const std::string& dotted);

}  // namespace mmi::config
