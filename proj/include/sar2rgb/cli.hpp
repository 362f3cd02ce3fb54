#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

// Command-line layer. Every command resolves a flat JSON config
// (defaults <- preset <- config file <- flags), echoes it to out/config.json
// and writes out/report.json plus out/report.txt.
namespace sar2rgb::cli {

using Json = nlohmann::json;

inline constexpr int kReportSchemaVersion = 1;

const std::vector<std::string>& command_names();

/// Every accepted key with its default value; the value type fixes the
/// key's type. Includes "seed".
Json command_defaults(const std::string& command);

/// Named overrides ("desk"); throws ConfigError for unknown names.
Json preset(const std::string& command, const std::string& name);

/// Layers the sources. `flags` holds raw strings parsed per the key type.
/// Unknown keys or wrongly typed values throw ConfigError.
Json resolve_config(const std::string& command, const std::optional<std::string>& preset_name,
                    const std::optional<Json>& file, const std::map<std::string, std::string>& flags);

/// FNV-1a over the canonical dump of the config.
std::string config_hash(const Json& config);

/// Runs a resolved command, writing its artifacts under `out`. Returns the
/// report (also written to out/report.json).
Json run_command(const std::string& command, const Json& config, const std::filesystem::path& out);

/// Aligned text rendering of a report.
std::string render_report(const Json& report);

/// Process entry point; returns the exit code (0 ok, 2 config or data
/// error, 3 numeric failure, 1 anything else).
int main(int argc, char** argv);

}  // namespace sar2rgb::cli
