#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sar2rgb/errors.hpp"
#include "sar2rgb/raster_io.hpp"
#include "sar2rgb/trainer.hpp"
#include "support.hpp"

using namespace sar2rgb;
namespace fs = std::filesystem;

namespace {

BackboneConfig tiny(Variant v = Variant::kStandard) {
  BackboneConfig c;
  c.depth = 1;
  c.heads = 2;
  c.hidden = 16;
  c.patch = 2;
  c.latent_channels = 2;
  c.input_size = 4;
  c.variant = v;
  c.max_timestep = 20;
  c.frequency_dim = 16;
  return c;
}

TrainConfig tiny_run(std::int64_t iterations) {
  TrainConfig t;
  t.iterations = iterations;
  t.batch_size = 4;
  t.learning_rate = 1e-3;
  t.seed = 5;
  t.schedule_steps = 20;
  t.beta_start = 1e-3;
  t.beta_end = 0.2;
  return t;
}

LatentDataset tiny_data(int n = 6) {
  LatentDataset d;
  d.channels = 2;
  d.size = 4;
  d.rgb = testing::random_matrix(n, 32, 1, 0.5);
  d.sar = testing::random_matrix(n, 32, 2, 0.5);
  d.labels.assign(static_cast<std::size_t>(n), kNullClass);
  return d;
}

}  // namespace

TEST_CASE("training is reproducible and resumes exactly") {
  const auto data = tiny_data();
  const auto dir = testing::scratch_dir("trainer_resume");
  TrainConfig cfg = tiny_run(12);
  cfg.checkpoint_interval = 6;
  const auto full = train(data, tiny(), cfg, dir / "full");
  REQUIRE(full.size() == 12);
  const auto again = train(data, tiny(), cfg, std::nullopt);
  for (std::size_t i = 0; i < full.size(); ++i) CHECK(again[i].terms.total == full[i].terms.total);

  const auto resumed = train(data, tiny(), cfg, dir / "resumed", dir / "full" / "step_6");
  REQUIRE(resumed.size() == 6);
  CHECK(resumed[0].step == 7);
  for (std::size_t i = 0; i < resumed.size(); ++i) CHECK(resumed[i].terms.total == full[i + 6].terms.total);
  CHECK(read_file(dir / "resumed" / "final" / "weights.bin") == read_file(dir / "full" / "final" / "weights.bin"));

  // resuming into the original directory keeps one record per step
  train(data, tiny(), cfg, dir / "full", dir / "full" / "step_6");
  std::istringstream log(read_file(dir / "full" / "loss.tsv"));
  std::string line;
  std::getline(log, line);
  CHECK(line == "step\tl_final\tl_mse\tl_vlb");
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 12);
}

TEST_CASE("checkpoint layout") {
  const auto dir = testing::scratch_dir("trainer_layout");
  TrainConfig cfg = tiny_run(2000);
  cfg.checkpoint_interval = 500;
  train(tiny_data(), tiny(Variant::kCold), cfg, dir);
  for (const char* name : {"step_500", "step_1000", "step_1500", "step_2000", "final"})
    for (const char* file : {"weights.bin", "optimizer.bin", "rng.txt", "meta.txt"})
      CHECK(fs::exists(dir / name / file));
  int steps = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().rfind("step_", 0) == 0) ++steps;
  CHECK(steps == 4);
  const Backbone<float> loaded = load_backbone(dir / "final");
  CHECK(loaded.config().variant == Variant::kCold);
  CHECK(load_checkpoint_meta(dir / "step_500").at("step") == "500");
}

TEST_CASE("resume rejects a changed configuration") {
  const auto dir = testing::scratch_dir("trainer_mismatch");
  TrainConfig cfg = tiny_run(4);
  cfg.checkpoint_interval = 2;
  train(tiny_data(), tiny(), cfg, dir);
  TrainConfig other = cfg;
  other.learning_rate = 2e-3;
  CHECK_THROWS_AS(train(tiny_data(), tiny(), other, std::nullopt, dir / "step_2"), ConfigError);
  BackboneConfig wider = tiny();
  wider.hidden = 32;
  CHECK_THROWS_AS(train(tiny_data(), wider, cfg, std::nullopt, dir / "step_2"), ConfigError);
  TrainConfig longer = cfg;
  longer.iterations = 6;
  CHECK(train(tiny_data(), tiny(), longer, std::nullopt, dir / "step_2").size() == 4);
  TrainConfig shorter = cfg;
  shorter.iterations = 1;
  CHECK_THROWS_AS(train(tiny_data(), tiny(), shorter, std::nullopt, dir / "step_2"), ConfigError);
}

TEST_CASE("trainer validation") {
  TrainConfig cfg = tiny_run(1);
  LatentDataset d = tiny_data();
  d.labels[0] = 1;
  CHECK_THROWS_AS(train(d, tiny(), cfg, std::nullopt), ConfigError);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(tiny_data(), tiny(), cfg, std::nullopt), ConfigError);
  cfg = tiny_run(1);
  cfg.schedule_steps = 1000;
  CHECK_THROWS_AS(train(tiny_data(), tiny(), cfg, std::nullopt), ConfigError);
  LatentDataset wrong = tiny_data();
  wrong.size = 8;
  CHECK_THROWS_AS(train(wrong, tiny(), tiny_run(1), std::nullopt), ConfigError);
  std::vector<LossRecord> log(3);
  CHECK_THROWS_AS(window_mean(log, 2, 2), ConfigError);
}

TEST_CASE("tiny standard run reduces the loss") {
  TrainConfig cfg = tiny_run(600);
  cfg.learning_rate = 3e-3;
  const auto log = train(tiny_data(4), tiny(), cfg, std::nullopt);
  CHECK(window_mean(log, 500, 100) < window_mean(log, 0, 100));
}
