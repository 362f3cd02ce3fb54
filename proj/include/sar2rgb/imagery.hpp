#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sar2rgb/raster.hpp"

namespace sar2rgb {

inline constexpr float kSarClipMinDb = -25.0f;
inline constexpr float kSarClipMaxDb = 0.0f;
inline constexpr float kRgbClipMax = 10000.0f;

/// Co-registered SAR/optical sample. `sar` is one channel in dB, `rgb` and
/// `cloudy_rgb` are three channels of reflectance counts.
struct RawPair {
  std::string id;
  Image sar;
  Image rgb;
  std::optional<int> class_label;
  std::optional<Image> cloudy_rgb;
};

/// Clips to [-25, 0] dB, maps to [0, 1] by (v + 25) / 25, then to [-1, 1]
/// by (u - 0.5) / 0.5, and replicates the result into three channels.
Image preprocess_sar(const Image& raw_db);

/// Clips to [0, 10000] counts, divides by 10000, then maps to [-1, 1].
Image preprocess_rgb(const Image& counts);

/// Right inverse of preprocess_rgb on the clipped range:
/// round(10000 * (v * 0.5 + 0.5)) after clamping v to [-1, 1].
Raster<std::uint16_t> inverse_preprocess_rgb(const Image& standardized);

/// [-1, 1] -> [0, 1], clamped. Metrics work in this domain.
Image to_unit_range(const Image& standardized);

// ---------------------------------------------------------------------------
// Synthetic scenes

struct ClassStyle {
  std::string name;
  float red = 0, green = 0, blue = 0;  // counts
  float sar_db = -10;
};

/// Six land-cover-like classes with distinct colours and backscatter levels.
std::vector<ClassStyle> default_palette();

struct SyntheticSceneSpec {
  int size = 32;
  int region_count = 3;
  std::vector<ClassStyle> palette = default_palette();
  /// Noise standard deviation as a fraction of the clip range: RGB noise is
  /// noise_sigma * 10000 counts, SAR noise is noise_sigma * 25 dB.
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  /// Forces the largest region to this class, so class_label == target_label.
  std::optional<int> target_label;
  /// When > 0, a cloudy copy of the RGB grid is emitted with roughly this
  /// fraction of the scene under a bright smooth cloud layer.
  double cloud_fraction = 0.0;
};

struct SyntheticScene {
  RawPair pair;
  Raster<int> class_map;  // one channel, palette index per pixel
};

/// Voronoi region layout with one distinct palette class per region. The
/// pair's label is the modal class of the emitted map (ties go to the lower
/// class index). Pure function of the spec.
SyntheticScene generate_synthetic_pair(const SyntheticSceneSpec& spec);

/// Most frequent value in a class map; ties go to the lower class index.
int modal_class(const Raster<int>& class_map);

// ---------------------------------------------------------------------------
// Label maps

class LabelMap {
 public:
  LabelMap() = default;
  /// Target indices must cover 0..class_count-1 with no gaps.
  explicit LabelMap(std::map<int, int> entries);
  /// Declared class count; targets only need to lie in [0, class_count).
  LabelMap(std::map<int, int> entries, int class_count);

  static LabelMap identity(int class_count);
  /// Tab- or whitespace-separated "source_code target_index" lines; '#' starts a comment.
  static LabelMap load(const std::filesystem::path& path);
  /// Default IGBP (1..17) to ten simplified land-cover classes.
  static LabelMap igbp_simplified();

  int map(int code) const;
  int class_count() const { return class_count_; }
  const std::map<int, int>& entries() const { return entries_; }
  /// Applies this map, then `next` on the result. Keeps next's class count.
  LabelMap then(const LabelMap& next) const;

 private:
  std::map<int, int> entries_;
  int class_count_ = 0;
};

inline int map_label(int code, const LabelMap& map) { return map.map(code); }

// ---------------------------------------------------------------------------
// Manifests

struct ManifestEntry {
  int row = 0;  // 1-based line number in the manifest file
  std::string id;
  std::filesystem::path sar_path;
  std::filesystem::path rgb_path;
  std::optional<int> label;
  std::optional<std::filesystem::path> cloudy_rgb_path;
};

enum class Split { kTrain, kEval };

struct Manifest {
  std::filesystem::path source;
  std::vector<ManifestEntry> entries;  // file order
  std::vector<Split> split;            // parallel to entries

  std::vector<std::size_t> indices(Split which) const;
  bool all_labeled() const;
};

/// Number of training items: floor(fraction * n).
std::size_t train_count(std::size_t n, double train_fraction);

/// Parses `id<TAB>sar<TAB>rgb[<TAB>label[<TAB>cloudy_rgb]]` records. Relative
/// paths resolve against the manifest's directory; an empty or "-" label
/// means unlabeled. Split membership is a seeded shuffle with
/// floor(fraction * n) training items.
Manifest load_manifest(const std::filesystem::path& path, double train_fraction = 0.8,
                       std::uint64_t seed = 0);

RawPair load_pair(const ManifestEntry& entry);

/// Writes records in the manifest format with paths relative to the manifest.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

}  // namespace sar2rgb
