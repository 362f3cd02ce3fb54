#include "sar2rgb/raster_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sar2rgb/errors.hpp"

namespace sar2rgb {

namespace fs = std::filesystem;

namespace {

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

std::uint32_t le_u32(const std::string& b, std::size_t off) {
  return std::uint32_t(static_cast<unsigned char>(b[off])) |
         std::uint32_t(static_cast<unsigned char>(b[off + 1])) << 8 |
         std::uint32_t(static_cast<unsigned char>(b[off + 2])) << 16 |
         std::uint32_t(static_cast<unsigned char>(b[off + 3])) << 24;
}

void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

Image read_r16(const fs::path& path, RasterRole role) {
  const std::string b = read_file(path);
  if (b.size() < 8) throw DataError(path.string() + ": truncated raster header");
  const std::uint32_t w = le_u32(b, 0);
  const std::uint32_t h = le_u32(b, 4);
  const std::size_t plane = std::size_t(w) * h;
  if (plane == 0) throw DataError(path.string() + ": empty raster");
  const std::size_t payload = b.size() - 8;
  if (payload % (2 * plane) != 0)
    throw DataError(path.string() + ": payload size is not a whole number of planes");
  const int channels = static_cast<int>(payload / (2 * plane));
  Image img(channels, static_cast<int>(h), static_cast<int>(w));
  for (std::size_t i = 0; i < img.size(); ++i) {
    const auto lo = static_cast<unsigned char>(b[8 + 2 * i]);
    const auto hi = static_cast<unsigned char>(b[9 + 2 * i]);
    const std::uint16_t u = static_cast<std::uint16_t>(lo | (hi << 8));
    img.data[i] = role == RasterRole::kSar ? static_cast<float>(static_cast<std::int16_t>(u)) / 100.0f
                                           : static_cast<float>(u);
  }
  return img;
}

void write_r16(const fs::path& path, const Image& g, RasterRole role) {
  std::string b;
  b.reserve(8 + 2 * g.size());
  put_u32(b, static_cast<std::uint32_t>(g.width));
  put_u32(b, static_cast<std::uint32_t>(g.height));
  for (float v : g.data) {
    std::uint16_t u = 0;
    if (role == RasterRole::kSar) {
      const long q = std::lround(static_cast<double>(v) * 100.0);
      u = static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L)));
    } else {
      u = static_cast<std::uint16_t>(std::clamp(std::lround(v), 0L, 65535L));
    }
    b.push_back(static_cast<char>(u & 0xff));
    b.push_back(static_cast<char>(u >> 8));
  }
  write_file_atomic(path, b);
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(const std::string& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(b[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t start = pos;
  while (pos < b.size() && !std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
  return b.substr(start, pos - start);
}

Image read_pnm(const fs::path& path) {
  const std::string b = read_file(path);
  std::size_t pos = 0;
  const std::string magic = pnm_token(b, pos);
  int channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw DataError(path.string() + ": only binary P5/P6 netpbm files are supported");
  }
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pnm_token(b, pos));
    h = std::stoi(pnm_token(b, pos));
    maxval = std::stoi(pnm_token(b, pos));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed netpbm header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw DataError(path.string() + ": malformed netpbm header");
  ++pos;  // single whitespace before the raster
  const int bytes = maxval < 256 ? 1 : 2;
  const std::size_t need = std::size_t(w) * h * channels * bytes;
  if (b.size() < pos + need) throw DataError(path.string() + ": truncated netpbm raster");
  Image img(channels, h, w);
  std::size_t k = pos;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        unsigned v = static_cast<unsigned char>(b[k++]);
        if (bytes == 2) v = (v << 8) | static_cast<unsigned char>(b[k++]);  // big-endian
        img.at(c, y, x) = static_cast<float>(v);
      }
  return img;
}

void write_pnm16(const fs::path& path, const Image& g) {
  if (g.channels != 1 && g.channels != 3) throw DataError("netpbm output needs 1 or 3 channels");
  std::ostringstream os;
  os << (g.channels == 3 ? "P6" : "P5") << '\n' << g.width << ' ' << g.height << "\n65535\n";
  std::string b = os.str();
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      for (int c = 0; c < g.channels; ++c) {
        const auto u = static_cast<std::uint16_t>(std::clamp(std::lround(g.at(c, y, x)), 0L, 65535L));
        b.push_back(static_cast<char>(u >> 8));
        b.push_back(static_cast<char>(u & 0xff));
      }
  write_file_atomic(path, b);
}

}  // namespace

Image read_raster(const fs::path& path, RasterRole role) {
  const std::string ext = lower_ext(path);
  if (ext == ".r16") return read_r16(path, role);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
    if (role == RasterRole::kSar) throw DataError(path.string() + ": SAR grids must be .r16 files");
    return read_pnm(path);
  }
  throw DataError(path.string() + ": unsupported raster extension '" + ext + "'");
}

void write_raster(const fs::path& path, const Image& grid, RasterRole role) {
  const std::string ext = lower_ext(path);
  if (ext == ".r16") return write_r16(path, grid, role);
  if ((ext == ".pgm" || ext == ".ppm" || ext == ".pnm") && role == RasterRole::kRgb)
    return write_pnm16(path, grid);
  throw DataError(path.string() + ": cannot write this raster role with extension '" + ext + "'");
}

void write_ppm8(const fs::path& path, const Raster<std::uint8_t>& rgb) {
  if (rgb.channels != 3) throw DataError("PPM output needs three channels");
  std::ostringstream os;
  os << "P6\n" << rgb.width << ' ' << rgb.height << "\n255\n";
  std::string b = os.str();
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x)
      for (int c = 0; c < 3; ++c) b.push_back(static_cast<char>(rgb.at(c, y, x)));
  write_file_atomic(path, b);
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace sar2rgb
