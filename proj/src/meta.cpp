#include "sar2rgb/meta.hpp"

#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "sar2rgb/errors.hpp"
#include "sar2rgb/raster_io.hpp"

namespace sar2rgb {

void write_meta(const std::filesystem::path& path, const MetaRecord& record) {
  std::ostringstream os;
  for (const auto& [k, v] : record) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
        v.find('\n') != std::string::npos)
      throw DataError("meta record entries must be single-line and keys must not contain '='");
    os << k << '=' << v << '\n';
  }
  write_file_atomic(path, os.str());
}

MetaRecord read_meta(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  MetaRecord r;
  std::string line;
  int row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(path.string() + ": line " + std::to_string(row) + " is not key=value");
    r[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return r;
}

const std::string& meta_get(const MetaRecord& record, const std::string& key) {
  auto it = record.find(key);
  if (it == record.end()) throw DataError("meta record lacks key '" + key + "'");
  return it->second;
}

std::string format_real(double v) {
  char buf[32];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace sar2rgb
