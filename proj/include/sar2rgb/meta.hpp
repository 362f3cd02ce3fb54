#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace sar2rgb {

/// Plain-text `key=value` record, one pair per line, keys sorted.
using MetaRecord = std::map<std::string, std::string>;

void write_meta(const std::filesystem::path& path, const MetaRecord& record);
MetaRecord read_meta(const std::filesystem::path& path);
const std::string& meta_get(const MetaRecord& record, const std::string& key);

/// Shortest text that parses back to the same double.
std::string format_real(double v);

}  // namespace sar2rgb
