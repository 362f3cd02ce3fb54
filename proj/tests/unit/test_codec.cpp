#include <doctest.h>

#include <cmath>

#include "sar2rgb/codec.hpp"
#include "sar2rgb/errors.hpp"
#include "sar2rgb/imagery.hpp"
#include "sar2rgb/metrics.hpp"
#include "support.hpp"

using namespace sar2rgb;

namespace {

std::vector<Image> synthetic_rgb(int n, std::uint64_t base) {
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) {
    SyntheticSceneSpec s;
    s.seed = base + static_cast<std::uint64_t>(i);
    s.noise_sigma = 0.01;
    out.push_back(preprocess_rgb(generate_synthetic_pair(s).pair.rgb));
  }
  return out;
}

}  // namespace

TEST_CASE("identity codec") {
  const Codec c;
  CHECK(c.is_identity());
  const Image x = testing::random_image(3, 8, 8, 1, -1.0f, 1.0f);
  CHECK(c.encode(x) == x);
  CHECK(c.decode(c.encode(x)) == x);
  CHECK(c.latent_size(32) == 32);
  const std::vector<Image> batch = {x, testing::random_image(3, 8, 8, 2, -1.0f, 1.0f)};
  const auto rows = c.encode_batch(batch);
  CHECK(rows.rows() == 2);
  CHECK(rows.cols() == 192);
  const auto back = c.decode_batch(rows, 8);
  CHECK(back[0] == batch[0]);
  CHECK(back[1] == batch[1]);
}

TEST_CASE("learned codec shapes and clamping") {
  const Codec c(CodecConfig::learned({4, 4, 4}), 3);
  CHECK(c.config().downsample_factor == 8);
  for (int size : {32, 64, 256}) {
    const LatentGrid z = c.encode(testing::random_image(3, size, size, 5, -1.0f, 1.0f));
    CHECK(z.channels == 4);
    CHECK(z.height == size / 8);
    CHECK(z.width == size / 8);
  }
  CHECK_THROWS_AS(c.encode(Image(3, 36, 36)), ConfigError);
  CHECK_THROWS_AS(c.decode(Image(3, 4, 4)), ConfigError);

  const Image zero = c.decode(LatentGrid(4, 4, 4, 0.0f));
  CHECK(zero.channels == 3);
  CHECK(zero.height == 32);
  LatentGrid wild(4, 4, 4);
  Rng rng(3);
  for (auto& v : wild.data) v = static_cast<float>(50 * rng.normal());
  for (const Image& img : {zero, c.decode(wild)})
    for (float v : img.data) {
      REQUIRE(std::isfinite(v));
      CHECK(std::abs(v) <= 1.0f);
    }

  CodecConfig scaled = CodecConfig::learned({4, 4, 4});
  scaled.scale = 0.5;
  const Codec half(scaled, 3);
  const Image x = testing::random_image(3, 32, 32, 6, -1.0f, 1.0f);
  const LatentGrid a = c.encode(x), b = half.encode(x);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b.data[i] == doctest::Approx(0.5 * a.data[i]).epsilon(1e-6));
}

TEST_CASE("codec validation") {
  CodecConfig bad = CodecConfig::learned({});
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = CodecConfig::learned();
  bad.kl_weight = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = CodecConfig::learned();
  bad.latent_channels = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(codec_mode_from_string("identity") == CodecMode::kIdentity);
  CHECK_THROWS_AS(codec_mode_from_string("vqgan"), ConfigError);
  CHECK_THROWS_AS(train_codec({}, CodecConfig::learned({4, 4, 4}), {}), ConfigError);
}

TEST_CASE("codec training is deterministic and lowers the loss") {
  const auto images = synthetic_rgb(8, 10);
  CodecTrainConfig t;
  t.steps = 120;
  t.batch_size = 4;
  t.learning_rate = 3e-3;
  t.seed = 4;
  const CodecConfig cfg = CodecConfig::learned({8, 8, 8});
  const auto a = train_codec(images, cfg, t);
  const auto b = train_codec(images, cfg, t);
  REQUIRE(a.history.size() == 120);
  CHECK(a.history[0].total == b.history[0].total);
  CHECK(a.history.back().total == b.history.back().total);
  for (const auto& h : a.history) CHECK(h.kl >= 0);

  CHECK(a.codec.steps_trained() == 120);
  double first = 0, last = 0;
  for (int i = 0; i < 20; ++i) {
    first += a.history[static_cast<std::size_t>(i)].total;
    last += a.history[a.history.size() - 1 - static_cast<std::size_t>(i)].total;
  }
  CHECK(last < first);
}

TEST_CASE("codec memorizes a single image without the KL term") {
  const auto one = synthetic_rgb(1, 50);
  CodecConfig cfg = CodecConfig::learned({8, 16, 16});
  cfg.kl_weight = 0;
  CodecTrainConfig t;
  t.steps = 300;
  t.batch_size = 1;
  t.learning_rate = 3e-3;
  const auto r = train_codec(one, cfg, t);
  CHECK(r.history.back().reconstruction < 0.1 * r.history.front().reconstruction);
}

TEST_CASE("codec checkpoints round trip") {
  const auto dir = testing::scratch_dir("codec");
  const auto images = synthetic_rgb(2, 70);
  CodecTrainConfig t;
  t.steps = 3;
  t.batch_size = 2;
  const auto r = train_codec(images, CodecConfig::learned({4, 4, 4}), t);
  r.codec.save(dir / "learned");
  const Codec back = Codec::load(dir / "learned");
  CHECK(back.steps_trained() == 3);
  CHECK(back.encode(images[0]) == r.codec.encode(images[0]));
  CHECK(back.decode(back.encode(images[1])) == r.codec.decode(r.codec.encode(images[1])));
  Codec().save(dir / "identity");
  CHECK(Codec::load(dir / "identity").is_identity());
  CHECK_THROWS_AS(Codec::load(dir / "missing"), DataError);
}
