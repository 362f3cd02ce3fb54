#include "sar2rgb/imagery.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "sar2rgb/errors.hpp"
#include "sar2rgb/raster_io.hpp"
#include "sar2rgb/rng.hpp"

namespace sar2rgb {

namespace fs = std::filesystem;

namespace {

std::string coord(int c, int y, int x) {
  std::ostringstream os;
  os << "(channel " << c << ", row " << y << ", col " << x << ")";
  return os.str();
}

}  // namespace

Image preprocess_sar(const Image& raw_db) {
  if (raw_db.channels != 1) throw DataError("SAR grid must have exactly one (VV) channel");
  Image out(3, raw_db.height, raw_db.width);
  const std::size_t plane = raw_db.plane_size();
  for (int y = 0; y < raw_db.height; ++y) {
    for (int x = 0; x < raw_db.width; ++x) {
      const float v = raw_db.at(0, y, x);
      if (!std::isfinite(v)) throw DataError("non-finite SAR value at " + coord(0, y, x));
      const float clipped = std::clamp(v, kSarClipMinDb, kSarClipMaxDb);
      const float unit = (clipped - kSarClipMinDb) / (kSarClipMaxDb - kSarClipMinDb);
      const float s = (unit - 0.5f) / 0.5f;
      const std::size_t i = out.index(0, y, x);
      out.data[i] = s;
      out.data[i + plane] = s;
      out.data[i + 2 * plane] = s;
    }
  }
  return out;
}

Image preprocess_rgb(const Image& counts) {
  if (counts.channels != 3) throw DataError("RGB grid must have three channels");
  Image out(3, counts.height, counts.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < counts.height; ++y)
      for (int x = 0; x < counts.width; ++x) {
        const float v = counts.at(c, y, x);
        if (!std::isfinite(v)) throw DataError("non-finite RGB value at " + coord(c, y, x));
        if (v < 0.0f) throw DataError("negative RGB count at " + coord(c, y, x));
        const float unit = std::min(v, kRgbClipMax) / kRgbClipMax;
        out.at(c, y, x) = (unit - 0.5f) / 0.5f;
      }
  return out;
}

Raster<std::uint16_t> inverse_preprocess_rgb(const Image& standardized) {
  Raster<std::uint16_t> out(standardized.channels, standardized.height, standardized.width);
  for (std::size_t i = 0; i < standardized.size(); ++i) {
    double v = standardized.data[i];
    v = std::isnan(v) ? 0.0 : std::clamp(v, -1.0, 1.0);
    out.data[i] = static_cast<std::uint16_t>(std::lround(kRgbClipMax * (v * 0.5 + 0.5)));
  }
  return out;
}

Image to_unit_range(const Image& standardized) {
  Image out = standardized;
  for (auto& v : out.data) v = std::clamp(v * 0.5f + 0.5f, 0.0f, 1.0f);
  return out;
}

std::vector<ClassStyle> default_palette() {
  return {
      {"water", 300, 500, 1200, -22.0f},     {"forest", 500, 1600, 600, -8.0f},
      {"cropland", 2400, 2800, 900, -13.0f}, {"urban", 3600, 3400, 3300, -3.0f},
      {"barren", 4200, 3300, 2200, -17.0f},  {"grassland", 1500, 2700, 1100, -11.0f},
  };
}

int modal_class(const Raster<int>& class_map) {
  std::map<int, std::size_t> counts;
  for (int v : class_map.data) ++counts[v];
  int best = -1;
  std::size_t best_count = 0;
  for (const auto& [cls, n] : counts)  // ascending class order: ties keep the lower index
    if (n > best_count) {
      best = cls;
      best_count = n;
    }
  return best;
}

SyntheticScene generate_synthetic_pair(const SyntheticSceneSpec& spec) {
  if (spec.size < 32 || (spec.size & (spec.size - 1)) != 0)
    throw ConfigError("synthetic scene size must be a power of two >= 32");
  if (spec.region_count < 1) throw ConfigError("region_count must be >= 1");
  const int classes = static_cast<int>(spec.palette.size());
  if (spec.region_count > classes)
    throw ConfigError("region_count " + std::to_string(spec.region_count) +
                      " exceeds palette size " + std::to_string(classes));
  if (!(spec.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  for (const auto& s : spec.palette) {
    for (float v : {s.red, s.green, s.blue})
      if (!(v >= 0.0f && v <= 65535.0f)) throw ConfigError("palette colour outside [0, 65535]");
    if (!(s.sar_db >= -50.0f && s.sar_db <= 10.0f))
      throw ConfigError("palette backscatter outside [-50, 10] dB");
  }
  if (spec.target_label && (*spec.target_label < 0 || *spec.target_label >= classes))
    throw ConfigError("target_label outside the palette");
  if (spec.cloud_fraction < 0.0 || spec.cloud_fraction > 1.0)
    throw ConfigError("cloud_fraction must be in [0, 1]");

  Rng rng(spec.seed);
  const int n = spec.size;
  Raster<int> regions(1, n, n);
  std::vector<std::size_t> area(spec.region_count);
  // Redraw layouts until the largest region is unique so that forcing its
  // class also fixes the modal class.
  for (int attempt = 0;; ++attempt) {
    std::vector<std::pair<double, double>> seeds(spec.region_count);
    for (auto& [sy, sx] : seeds) {
      sy = rng.uniform() * n;
      sx = rng.uniform() * n;
    }
    std::fill(area.begin(), area.end(), 0);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        int best = 0;
        double best_d = 1e300;
        for (int r = 0; r < spec.region_count; ++r) {
          const double dy = y + 0.5 - seeds[r].first;
          const double dx = x + 0.5 - seeds[r].second;
          const double d = dy * dy + dx * dx;
          if (d < best_d) {
            best_d = d;
            best = r;
          }
        }
        regions.at(0, y, x) = best;
        ++area[best];
      }
    const auto top = *std::max_element(area.begin(), area.end());
    if (std::count(area.begin(), area.end(), top) == 1 || !spec.target_label) break;
    if (attempt > 1000) throw std::logic_error("could not draw a layout with a unique largest region");
  }

  std::vector<int> order(classes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<int> region_class(order.begin(), order.begin() + spec.region_count);
  if (spec.target_label) {
    const int largest = static_cast<int>(std::max_element(area.begin(), area.end()) - area.begin());
    const int target = *spec.target_label;
    auto it = std::find(region_class.begin(), region_class.end(), target);
    if (it != region_class.end()) {
      std::swap(*it, region_class[largest]);
    } else {
      region_class[largest] = target;
    }
  }

  SyntheticScene scene;
  scene.class_map = Raster<int>(1, n, n);
  for (std::size_t i = 0; i < regions.size(); ++i) scene.class_map.data[i] = region_class[regions.data[i]];

  RawPair& pair = scene.pair;
  pair.rgb = Image(3, n, n);
  pair.sar = Image(1, n, n);
  const double rgb_sd = spec.noise_sigma * kRgbClipMax;
  const double sar_sd = spec.noise_sigma * (kSarClipMaxDb - kSarClipMinDb);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const ClassStyle& s = spec.palette[scene.class_map.at(0, y, x)];
      const float base[3] = {s.red, s.green, s.blue};
      for (int c = 0; c < 3; ++c) {
        double v = base[c];
        if (rgb_sd > 0) v += rng.normal() * rgb_sd;
        pair.rgb.at(c, y, x) = static_cast<float>(std::clamp(std::round(v), 0.0, 65535.0));
      }
      double d = s.sar_db;
      if (sar_sd > 0) d += rng.normal() * sar_sd;
      pair.sar.at(0, y, x) = static_cast<float>(d);
    }
  pair.class_label = modal_class(scene.class_map);

  if (spec.cloud_fraction > 0.0) {
    // a few soft gaussian blobs; opacity saturates inside each blob
    const int blobs = std::max(1, static_cast<int>(std::ceil(spec.cloud_fraction * 4)));
    const double radius = n * std::sqrt(spec.cloud_fraction / (blobs * 3.14159265358979));
    std::vector<std::array<double, 2>> centers(blobs);
    for (auto& c : centers) c = {rng.uniform() * n, rng.uniform() * n};
    Image cloudy = pair.rgb;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double opacity = 0.0;
        for (const auto& c : centers) {
          const double dy = y + 0.5 - c[0];
          const double dx = x + 0.5 - c[1];
          opacity += std::exp(-(dy * dy + dx * dx) / (2.0 * radius * radius)) * 1.6;
        }
        opacity = std::min(opacity, 1.0);
        for (int ch = 0; ch < 3; ++ch) {
          const double v = (1.0 - opacity) * pair.rgb.at(ch, y, x) + opacity * 9000.0;
          cloudy.at(ch, y, x) = static_cast<float>(std::round(v));
        }
      }
    pair.cloudy_rgb = std::move(cloudy);
  }
  return scene;
}

// ---------------------------------------------------------------------------

LabelMap::LabelMap(std::map<int, int> entries, int class_count)
    : entries_(std::move(entries)), class_count_(class_count) {
  for (const auto& [code, idx] : entries_)
    if (idx < 0 || idx >= class_count_)
      throw ConfigError("label map target " + std::to_string(idx) + " outside [0, " +
                        std::to_string(class_count_) + ")");
}

LabelMap::LabelMap(std::map<int, int> entries) : entries_(std::move(entries)) {
  std::set<int> targets;
  for (const auto& [code, idx] : entries_) {
    if (idx < 0) throw ConfigError("label map target indices must be >= 0");
    targets.insert(idx);
  }
  class_count_ = targets.empty() ? 0 : *targets.rbegin() + 1;
  if (static_cast<int>(targets.size()) != class_count_)
    throw ConfigError("label map target indices must be contiguous from 0");
}

LabelMap LabelMap::identity(int class_count) {
  std::map<int, int> e;
  for (int k = 0; k < class_count; ++k) e[k] = k;
  return LabelMap(std::move(e));
}

LabelMap LabelMap::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label map " + path.string());
  std::map<int, int> e;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    int code = 0;
    int idx = 0;
    if (!(ls >> code)) continue;  // blank line
    std::string extra;
    if (!(ls >> idx) || (ls >> extra))
      throw DataError(path.string() + ": malformed label map row " + std::to_string(row));
    if (!e.emplace(code, idx).second)
      throw DataError(path.string() + ": duplicate source code " + std::to_string(code));
  }
  return LabelMap(std::move(e));
}

LabelMap LabelMap::igbp_simplified() {
  // forest, shrubland, savanna, grassland, wetlands, croplands, urban,
  // snow/ice, barren, water
  return LabelMap({{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}, {6, 1}, {7, 1}, {8, 2}, {9, 2},
                   {10, 3}, {11, 4}, {12, 5}, {13, 6}, {14, 5}, {15, 7}, {16, 8}, {17, 9}});
}

int LabelMap::map(int code) const {
  auto it = entries_.find(code);
  if (it == entries_.end()) throw DataError("unknown land-cover code " + std::to_string(code));
  return it->second;
}

LabelMap LabelMap::then(const LabelMap& next) const {
  std::map<int, int> e;
  for (const auto& [code, idx] : entries_) e[code] = next.map(idx);
  return LabelMap(std::move(e), next.class_count());
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> Manifest::indices(Split which) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == which) out.push_back(i);
  return out;
}

bool Manifest::all_labeled() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.label.has_value(); });
}

std::size_t train_count(std::size_t n, double train_fraction) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
    throw ConfigError("split fraction must be in [0, 1]");
  // nudge guards against 0.8 * 10 evaluating to 7.999...
  return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

Manifest load_manifest(const fs::path& path, double train_fraction, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  m.source = path;
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  std::set<std::string> ids;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto f = split_tabs(line);
    auto fail = [&](const std::string& why) {
      throw DataError(path.string() + ": row " + std::to_string(row) + ": " + why);
    };
    if (f.size() < 3 || f.size() > 5) fail("expected 3 to 5 tab-separated fields");
    ManifestEntry e;
    e.row = row;
    e.id = f[0];
    if (e.id.empty()) fail("empty id");
    if (!ids.insert(e.id).second) fail("duplicate id " + e.id);
    e.sar_path = resolve(f[1]);
    e.rgb_path = resolve(f[2]);
    if (f.size() >= 4 && !f[3].empty() && f[3] != "-") {
      std::size_t used = 0;
      int label = 0;
      try {
        label = std::stoi(f[3], &used);
      } catch (const std::exception&) {
        fail("label is not an integer: " + f[3]);
      }
      if (used != f[3].size() || label < 0) fail("label is not a non-negative integer: " + f[3]);
      e.label = label;
    }
    if (f.size() == 5 && !f[4].empty()) e.cloudy_rgb_path = resolve(f[4]);
    for (const auto& p : {e.sar_path, e.rgb_path})
      if (!fs::exists(p)) fail("missing file " + p.string());
    if (e.cloudy_rgb_path && !fs::exists(*e.cloudy_rgb_path))
      fail("missing file " + e.cloudy_rgb_path->string());
    m.entries.push_back(std::move(e));
  }
  const std::size_t n = m.entries.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 engine(seed);
  std::shuffle(perm.begin(), perm.end(), engine);
  m.split.assign(n, Split::kEval);
  const std::size_t ntrain = train_count(n, train_fraction);
  for (std::size_t i = 0; i < ntrain; ++i) m.split[perm[i]] = Split::kTrain;
  return m;
}

RawPair load_pair(const ManifestEntry& entry) {
  RawPair p;
  p.id = entry.id;
  p.sar = read_raster(entry.sar_path, RasterRole::kSar);
  p.rgb = read_raster(entry.rgb_path, RasterRole::kRgb);
  if (p.sar.channels != 1) throw DataError(entry.id + ": SAR raster must have one channel");
  if (p.rgb.channels != 3) throw DataError(entry.id + ": RGB raster must have three channels");
  if (!p.sar.same_spatial(p.rgb)) throw DataError(entry.id + ": SAR and RGB sizes differ");
  p.class_label = entry.label;
  if (entry.cloudy_rgb_path) {
    p.cloudy_rgb = read_raster(*entry.cloudy_rgb_path, RasterRole::kRgb);
    if (!p.cloudy_rgb->same_shape(p.rgb)) throw DataError(entry.id + ": cloudy RGB shape differs");
  }
  return p;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) { return p.lexically_proximate(base.empty() ? "." : base).generic_string(); };
  std::ostringstream os;
  for (const auto& e : entries) {
    os << e.id << '\t' << rel(e.sar_path) << '\t' << rel(e.rgb_path);
    if (e.label || e.cloudy_rgb_path) os << '\t' << (e.label ? std::to_string(*e.label) : "-");
    if (e.cloudy_rgb_path) os << '\t' << rel(*e.cloudy_rgb_path);
    os << '\n';
  }
  write_file_atomic(path, os.str());
}

}  // namespace sar2rgb
