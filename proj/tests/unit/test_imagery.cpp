#include <doctest.h>

#include <fstream>
#include <map>

#include "sar2rgb/errors.hpp"
#include "sar2rgb/imagery.hpp"
#include "sar2rgb/raster_io.hpp"
#include "support.hpp"

using namespace sar2rgb;

namespace {

Image sar_pixel(float db) {
  Image g(1, 1, 1);
  g.data[0] = db;
  return g;
}

Image rgb_pixel(float v) { return Image(3, 1, 1, v); }

}  // namespace

TEST_CASE("preprocess_sar endpoints and midpoint") {
  for (auto [db, want] : {std::pair{-25.0f, -1.0f}, {-12.5f, 0.0f}, {3.0f, 1.0f}, {-40.0f, -1.0f}}) {
    const Image out = preprocess_sar(sar_pixel(db));
    REQUIRE(out.channels == 3);
    for (float v : out.data) CHECK(v == doctest::Approx(want).epsilon(1e-7));
  }
}

TEST_CASE("preprocess_sar rejects non-finite values with the coordinate") {
  Image g(1, 2, 2, -10.0f);
  g.at(0, 1, 0) = std::nanf("");
  try {
    preprocess_sar(g);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("(channel 0, row 1, col 0)") != std::string::npos);
  }
}

TEST_CASE("preprocess_sar output stays in range with identical channels") {
  Rng rng(11);
  Image g(1, 9, 7);
  for (auto& v : g.data) v = static_cast<float>(-60.0 + 70.0 * rng.uniform());
  const Image out = preprocess_sar(g);
  const std::size_t plane = out.plane_size();
  for (std::size_t i = 0; i < plane; ++i) {
    CHECK(out.data[i] >= -1.0f);
    CHECK(out.data[i] <= 1.0f);
    CHECK(out.data[i] == out.data[plane + i]);
    CHECK(out.data[i] == out.data[2 * plane + i]);
  }
}

TEST_CASE("preprocess_rgb examples") {
  CHECK(preprocess_rgb(rgb_pixel(10000)).data[0] == 1.0f);
  CHECK(preprocess_rgb(rgb_pixel(12000)).data[0] == 1.0f);
  CHECK(preprocess_rgb(rgb_pixel(5000)).data[0] == 0.0f);
  CHECK(preprocess_rgb(rgb_pixel(0)).data[0] == -1.0f);
  CHECK_THROWS_AS(preprocess_rgb(rgb_pixel(-1)), DataError);
}

TEST_CASE("preprocess_rgb is monotone and idempotent after clipping") {
  float prev = -2.0f;
  for (int c = 0; c <= 12000; c += 7) {
    const float v = preprocess_rgb(rgb_pixel(static_cast<float>(c))).data[0];
    CHECK(v >= prev);
    prev = v;
    const float clipped = std::min(c, 10000);
    CHECK(preprocess_rgb(rgb_pixel(clipped)).data[0] == v);
  }
}

TEST_CASE("inverse_preprocess_rgb endpoints and clamping") {
  Image g(3, 1, 1, 1.0f);
  CHECK(inverse_preprocess_rgb(g).data[0] == 10000);
  g = Image(3, 1, 1, -1.0f);
  CHECK(inverse_preprocess_rgb(g).data[0] == 0);
  g = Image(3, 1, 1, 3.0f);
  CHECK(inverse_preprocess_rgb(g).data[0] == 10000);
}

TEST_CASE("rgb round trip over every count") {
  for (int c = 0; c <= 10000; ++c) {
    const auto back = inverse_preprocess_rgb(preprocess_rgb(rgb_pixel(static_cast<float>(c))));
    REQUIRE(std::abs(static_cast<int>(back.data[0]) - c) <= 0);
  }
  // standardized -> counts -> standardized stays within one count
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const float v = static_cast<float>(-1.0 + 2.0 * rng.uniform());
    const auto counts = inverse_preprocess_rgb(Image(3, 1, 1, v));
    const float again = preprocess_rgb(rgb_pixel(counts.data[0])).data[0];
    CHECK(std::abs(again - v) <= 1.0f / 10000 + 1e-6f);
  }
}

TEST_CASE("degenerate synthetic scene is the palette colour") {
  SyntheticSceneSpec s;
  s.region_count = 1;
  s.noise_sigma = 0;
  s.seed = 5;
  const auto scene = generate_synthetic_pair(s);
  const int cls = *scene.pair.class_label;
  const auto& style = s.palette[static_cast<std::size_t>(cls)];
  const float want[3] = {style.red, style.green, style.blue};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) REQUIRE(scene.pair.rgb.at(c, y, x) == want[c]);
  for (float v : scene.pair.sar.data) REQUIRE(v == style.sar_db);
}

TEST_CASE("synthetic generation is a pure function of the scene spec") {
  SyntheticSceneSpec s;
  s.noise_sigma = 0.05;
  s.seed = 42;
  s.cloud_fraction = 0.3;
  const auto a = generate_synthetic_pair(s);
  const auto b = generate_synthetic_pair(s);
  CHECK(a.pair.rgb == b.pair.rgb);
  CHECK(a.pair.sar == b.pair.sar);
  CHECK(*a.pair.cloudy_rgb == *b.pair.cloudy_rgb);
  CHECK(a.class_map == b.class_map);
  s.seed = 43;
  CHECK_FALSE(generate_synthetic_pair(s).pair.rgb == a.pair.rgb);
}

TEST_CASE("synthetic label is the modal class of the emitted map") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    SyntheticSceneSpec s;
    s.seed = seed;
    s.region_count = 2 + static_cast<int>(seed % 4);
    const auto scene = generate_synthetic_pair(s);
    std::map<int, int> counts;
    for (int v : scene.class_map.data) ++counts[v];
    int best = -1, best_n = -1;
    for (const auto& [cls, n] : counts)
      if (n > best_n) best = cls, best_n = n;
    CHECK(*scene.pair.class_label == best);
  }
}

TEST_CASE("synthetic target label forces the class") {
  for (int k = 0; k < 6; ++k) {
    SyntheticSceneSpec s;
    s.seed = 100 + static_cast<std::uint64_t>(k);
    s.target_label = k;
    CHECK(*generate_synthetic_pair(s).pair.class_label == k);
  }
}

TEST_CASE("synthetic spec validation") {
  SyntheticSceneSpec s;
  s.region_count = 7;  // palette has six classes
  CHECK_THROWS_AS(generate_synthetic_pair(s), ConfigError);
  s = {};
  s.size = 48;
  CHECK_THROWS_AS(generate_synthetic_pair(s), ConfigError);
  s = {};
  s.noise_sigma = -1;
  CHECK_THROWS_AS(generate_synthetic_pair(s), ConfigError);
}

TEST_CASE("label maps") {
  CHECK(map_label(3, LabelMap::identity(5)) == 3);
  const LabelMap m({{1, 0}, {2, 0}, {3, 1}});
  CHECK(map_label(2, m) == 0);
  CHECK(m.class_count() == 2);
  CHECK_THROWS_AS(m.map(9), DataError);
  CHECK_THROWS_AS(LabelMap({{1, 0}, {2, 2}}), ConfigError);  // gap at 1
}

TEST_CASE("label map composition equals the composed table") {
  const LabelMap a({{10, 0}, {11, 1}, {12, 2}, {13, 3}, {14, 1}});
  const LabelMap b({{0, 1}, {1, 0}, {2, 1}, {3, 2}});
  const LabelMap ab = a.then(b);
  for (int code = 10; code <= 14; ++code) CHECK(ab.map(code) == b.map(a.map(code)));
  CHECK(ab.class_count() == b.class_count());
}

TEST_CASE("igbp table is total and matches the shipped file") {
  const LabelMap m = LabelMap::igbp_simplified();
  for (int code = 1; code <= 17; ++code) {
    const int idx = m.map(code);
    CHECK(idx >= 0);
    CHECK(idx < m.class_count());
  }
  const LabelMap file = LabelMap::load(std::filesystem::path(SAR2RGB_SOURCE_DIR) / "configs/igbp_simplified.tsv");
  CHECK(file.entries() == m.entries());
  CHECK(file.class_count() == m.class_count());
}

namespace {

std::filesystem::path write_dataset(const std::filesystem::path& dir, int n) {
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < n; ++i) {
    SyntheticSceneSpec s;
    s.seed = static_cast<std::uint64_t>(i);
    const auto scene = generate_synthetic_pair(s);
    ManifestEntry e;
    e.id = "p" + std::to_string(i);
    e.sar_path = dir / (e.id + "_sar.r16");
    e.rgb_path = dir / (e.id + "_rgb.r16");
    write_raster(e.sar_path, scene.pair.sar, RasterRole::kSar);
    write_raster(e.rgb_path, scene.pair.rgb, RasterRole::kRgb);
    e.label = scene.pair.class_label;
    entries.push_back(e);
  }
  write_manifest(dir / "manifest.tsv", entries);
  return dir / "manifest.tsv";
}

}  // namespace

TEST_CASE("manifest split arithmetic") {
  const auto dir = testing::scratch_dir("manifest");
  const auto path = write_dataset(dir, 10);
  const Manifest m = load_manifest(path, 0.8, 7);
  CHECK(m.indices(Split::kTrain).size() == 8);
  CHECK(m.indices(Split::kEval).size() == 2);
  CHECK(load_manifest(path, 0.8, 7).split == m.split);
  CHECK(m.all_labeled());
  CHECK(train_count(5218, 0.8) == 4174);
  CHECK(5218 - train_count(5218, 0.8) == 1044);
  const RawPair p = load_pair(m.entries[3]);
  CHECK(p.id == "p3");
  CHECK(p.sar.height == 32);
}

TEST_CASE("manifest errors carry the row number") {
  const auto dir = testing::scratch_dir("manifest_bad");
  {
    std::ofstream os(dir / "m.tsv");
    os << "# id\tsar\trgb\n";
    os << "b\tonly_two_fields\n";
  }
  try {
    load_manifest(dir / "m.tsv");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
  {
    std::ofstream os(dir / "m2.tsv");
    os << "a\tmissing_sar.r16\tmissing_rgb.r16\n";
  }
  try {
    load_manifest(dir / "m2.tsv");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("row 1: missing file") != std::string::npos);
  }
}

TEST_CASE("raster files round trip") {
  const auto dir = testing::scratch_dir("raster");
  SyntheticSceneSpec s;
  s.noise_sigma = 0.02;
  const auto scene = generate_synthetic_pair(s);
  write_raster(dir / "rgb.r16", scene.pair.rgb, RasterRole::kRgb);
  CHECK(read_raster(dir / "rgb.r16", RasterRole::kRgb) == scene.pair.rgb);
  write_raster(dir / "sar.r16", scene.pair.sar, RasterRole::kSar);
  const Image sar = read_raster(dir / "sar.r16", RasterRole::kSar);
  for (std::size_t i = 0; i < sar.size(); ++i) CHECK(std::abs(sar.data[i] - scene.pair.sar.data[i]) <= 0.005f);
  write_raster(dir / "rgb.ppm", scene.pair.rgb, RasterRole::kRgb);
  CHECK(read_raster(dir / "rgb.ppm", RasterRole::kRgb) == scene.pair.rgb);
}
