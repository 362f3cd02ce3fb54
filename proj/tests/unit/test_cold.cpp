#include <doctest.h>

#include <cmath>
#include <limits>

#include "sar2rgb/cold.hpp"
#include "sar2rgb/errors.hpp"
#include "support.hpp"

using namespace sar2rgb;
using nn::Index;
using nn::Matrix;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ColdModel oracle(const Matrix<float>& x0) {
  return [x0](const Matrix<float>&, int) { return x0; };
}

ColdSampleOptions unclipped() {
  ColdSampleOptions o;
  o.clip = kInf;
  return o;
}

// 10 linear steps whose last beta is 1, so alpha_bar_T = 0 exactly.
NoiseSchedule closing_schedule() {
  std::vector<double> b;
  for (int i = 0; i < 9; ++i) b.push_back(0.05 + 0.05 * i);
  b.push_back(1.0);
  return NoiseSchedule::from_betas(b);
}

}  // namespace

TEST_CASE("degrade examples") {
  const NoiseSchedule s = make_linear_schedule();
  const auto x = testing::random_matrix(2, 12, 1);
  const auto z = testing::random_matrix(2, 12, 2);
  CHECK(degrade<float>(x, z, 0, s) == x);

  const NoiseSchedule half = NoiseSchedule::from_betas({0.5});
  const auto same = degrade<float>(x, x, 1, half);
  CHECK((same - x * float(std::sqrt(2.0))).cwiseAbs().maxCoeff() <= 1e-6f);
  for (int t : {1, 250, 1000}) {
    const double ab = s.alpha_bar(t);
    CHECK((degrade<float>(x, x, t, s) - x * float(std::sqrt(ab) + std::sqrt(1 - ab))).cwiseAbs().maxCoeff() <=
          1e-5f);
  }

  // at T the blend sits next to z
  const double ab_t = s.alpha_bar(1000);
  const double bound = std::sqrt(ab_t) * x.cwiseAbs().maxCoeff() + (1 - std::sqrt(1 - ab_t)) * z.cwiseAbs().maxCoeff();
  CHECK(std::sqrt(ab_t) <= 0.0064);
  CHECK((degrade<float>(x, z, 1000, s) - z).cwiseAbs().maxCoeff() <= bound + 1e-6);

  const std::vector<int> bad = {1001, 1};
  CHECK_THROWS_AS(degrade<float>(x, z, std::span<const int>(bad), s), ConfigError);
  CHECK_THROWS_AS(degrade<float>(x, testing::random_matrix(2, 11, 3), 1, s), ConfigError);
}

TEST_CASE("degrade is jointly linear") {
  const NoiseSchedule s = make_linear_schedule();
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x1 = testing::random_matrix<double>(1, 16, 100 + trial);
    const auto x2 = testing::random_matrix<double>(1, 16, 200 + trial);
    const auto z = testing::random_matrix<double>(1, 16, 300 + trial);
    const double a = rng.normal(), b = rng.normal();
    const int t = rng.uniform_int(0, 1000);
    const auto lhs = degrade<double>(a * x1 + b * x2, z, t, s);
    const auto rhs = a * degrade<double>(x1, z, t, s) + b * degrade<double>(x2, z, t, s) +
                     (1 - a - b) * std::sqrt(1 - s.alpha_bar(t)) * z;
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("cold loss of an untrained backbone is the mean square of x0") {
  // adaLN-zero gates make the fresh cold head output exactly zero
  BackboneConfig c;
  c.depth = 1;
  c.heads = 2;
  c.hidden = 16;
  c.patch = 2;
  c.latent_channels = 2;
  c.input_size = 4;
  c.variant = Variant::kCold;
  c.max_timestep = 10;
  c.frequency_dim = 16;
  const Backbone<double> model(c, 3);
  const NoiseSchedule s = make_linear_schedule(10, 0.01, 0.3);
  DiffusionBatch<double> batch;
  batch.x0 = testing::random_matrix<double>(3, 32, 4);
  batch.sar = testing::random_matrix<double>(3, 32, 5);
  batch.labels = {kNullClass, kNullClass, kNullClass};
  batch.t = {1, 5, 10};
  const auto l = cold_loss_terms<double>(model, batch, s, false);
  CHECK(l.total == doctest::Approx(batch.x0.squaredNorm() / 96).epsilon(1e-12));
  CHECK(l.vlb == 0.0);

  batch.t = {0, 5, 10};
  CHECK_THROWS_AS(cold_loss_terms<double>(model, batch, s, false), ConfigError);
  c.variant = Variant::kStandard;
  CHECK_THROWS_AS(cold_loss_terms<double>(Backbone<double>(c), batch, s, false), ConfigError);
}

TEST_CASE("naive sampler") {
  const NoiseSchedule s = make_linear_schedule();
  const auto x0 = testing::random_matrix(2, 24, 10, 0.4);
  const auto z = testing::random_matrix(2, 24, 11, 0.4);
  CHECK(naive_cold_sample(oracle(x0), z, s, unclipped()).final == x0);

  // one step: the restorer's answer for z is returned unchanged
  const NoiseSchedule one = NoiseSchedule::from_betas({0.3});
  ColdModel affine = [](const Matrix<float>& x, int) { return Matrix<float>(0.9f * x); };
  CHECK(naive_cold_sample(affine, z, one, unclipped()).final == Matrix<float>(0.9f * z));

  const auto naive = naive_cold_sample(affine, z, s, unclipped()).final;
  const auto improved = improved_cold_sample(affine, z, s, unclipped()).final;
  CHECK((naive - improved).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("improved sampler with an oracle restorer") {
  const NoiseSchedule s = make_linear_schedule();
  const auto x0 = testing::random_matrix(3, 48, 12, 0.5);
  const auto z = testing::random_matrix(3, 48, 13, 0.5);
  const auto out = improved_cold_sample(oracle(x0), z, s, unclipped()).final;
  const double ab = s.alpha_bar(1000);
  const double bound = std::sqrt(ab) * x0.cwiseAbs().maxCoeff() + (1 - std::sqrt(1 - ab)) * z.cwiseAbs().maxCoeff();
  const double err = (out - x0).cwiseAbs().maxCoeff();
  CHECK(err <= bound + 1e-4);
  // the residual is z - D(x0, T), up to float accumulation
  const auto residual = z - degrade<float>(x0, z, 1000, s);
  CHECK((out - x0 - residual).cwiseAbs().maxCoeff() <= 1e-4f);

  const NoiseSchedule closing = closing_schedule();
  CHECK(closing.alpha_bar(closing.steps()) == 0.0);
  const auto exact = improved_cold_sample(oracle(x0), z, closing, unclipped()).final;
  CHECK((exact - x0).cwiseAbs().maxCoeff() <= 1e-5f);
}

TEST_CASE("improved step matches the closed form") {
  const NoiseSchedule s = make_linear_schedule();
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const auto xt = testing::random_matrix<double>(1, 20, 500 + trial);
    const auto xh = testing::random_matrix<double>(1, 20, 600 + trial);
    const auto z = testing::random_matrix<double>(1, 20, 700 + trial);
    const int t = rng.uniform_int(1, 1000);
    CHECK((improved_step<double>(xt, xh, z, t, s) - improved_step_closed_form<double>(xt, xh, z, t, s))
              .cwiseAbs()
              .maxCoeff() <= 1e-6);
  }
}

TEST_CASE("cold samplers are deterministic and record trajectories") {
  const NoiseSchedule s = make_linear_schedule(50, 1e-3, 0.2);
  ColdModel r = [](const Matrix<float>& x, int t) { return Matrix<float>((0.5f * x.array() + 0.01f * t).tanh()); };
  const auto z = testing::random_matrix(2, 10, 30);
  ColdSampleOptions o;
  o.record_steps = {50, 25, 0};
  const auto a = improved_cold_sample(r, z, s, o);
  const auto b = improved_cold_sample(r, z, s, o);
  CHECK(a.final == b.final);
  REQUIRE(a.trajectory.size() == 3);
  CHECK(a.trajectory[0].second == z);
  CHECK(a.trajectory[2].first == 0);
  CHECK(a.trajectory[2].second == a.final);
  CHECK(naive_cold_sample(r, z, s).final == naive_cold_sample(r, z, s).final);

  ColdModel bad = [](const Matrix<float>& x, int t) {
    Matrix<float> y = x;
    if (t == 7) y(0, 0) = std::numeric_limits<float>::quiet_NaN();
    return y;
  };
  try {
    improved_cold_sample(bad, z, s, unclipped());
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("t = 7") != std::string::npos);
  }
}
