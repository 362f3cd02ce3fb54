#include <doctest.h>

#include <cmath>
#include <limits>

#include "sar2rgb/diffusion.hpp"
#include "sar2rgb/errors.hpp"
#include "sar2rgb/schedule.hpp"
#include "support.hpp"

using namespace sar2rgb;
using nn::Index;
using nn::Matrix;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Posterior q(x_{t-1} | x_t, x0) from the product of the two Gaussians
// q(x_{t-1} | x0) and q(x_t | x_{t-1}).
struct Posterior {
  double mean, var;
};
Posterior bayes_posterior(double x0, double xt, int t, const NoiseSchedule& s) {
  const double ab_prev = s.alpha_bar(t - 1), beta = s.beta(t), alpha = 1 - beta;
  const double prec = 1 / (1 - ab_prev) + alpha / beta;
  return {(std::sqrt(ab_prev) * x0 / (1 - ab_prev) + std::sqrt(alpha) * xt / beta) / prec, 1 / prec};
}

}  // namespace

TEST_CASE("linear schedule examples") {
  const NoiseSchedule s = make_linear_schedule();
  CHECK(s.steps() == 1000);
  CHECK(s.alpha_bar(1) == 1.0 - 1e-4);
  CHECK(s.beta(1) == 1e-4);
  CHECK(s.beta(1000) == doctest::Approx(0.02).epsilon(1e-15));
  double prod = 1;
  for (int i = 0; i < 1000; ++i) prod *= 1 - (1e-4 + (0.02 - 1e-4) * i / 999.0);
  CHECK(std::abs(s.alpha_bar(1000) - prod) <= 1e-12 * prod);
  CHECK(s.alpha_bar(1000) == doctest::Approx(4.04e-5).epsilon(0.01));
  for (int t = 2; t <= 1000; ++t) REQUIRE(s.alpha_bar(t) < s.alpha_bar(t - 1));

  const NoiseSchedule two = NoiseSchedule::from_betas({0.1, 0.2});
  CHECK(two.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(two.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-15));
  CHECK(two.alpha_bar(0) == 1.0);
}

TEST_CASE("schedule validation") {
  CHECK_THROWS_AS(make_linear_schedule(1000, 0.02, 1e-4), ConfigError);
  CHECK_THROWS_AS(make_linear_schedule(0), ConfigError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.1), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule::from_betas({0.1, 1.5}), ConfigError);
  CHECK_NOTHROW(NoiseSchedule::from_betas({0.5, 1.0}));
}

TEST_CASE("posterior variances and coefficients match the Gaussian product") {
  const NoiseSchedule s = make_linear_schedule();
  CHECK(s.beta_tilde(1) == s.beta(1));
  for (int t : {2, 3, 50, 500, 1000}) {
    const Posterior p = bayes_posterior(0.7, -0.3, t, s);
    CHECK(s.beta_tilde(t) == doctest::Approx(p.var).epsilon(1e-10));
    const double mean = s.posterior_coef_x0(t) * 0.7 + s.posterior_coef_xt(t) * -0.3;
    CHECK(mean == doctest::Approx(p.mean).epsilon(1e-10));
  }
}

TEST_CASE("q_sample and its inverse") {
  const NoiseSchedule s = make_linear_schedule();
  const auto x0 = testing::random_matrix(3, 20, 1, 0.5);
  const auto eps = testing::random_matrix(3, 20, 2);
  const Matrix<float> zero = Matrix<float>::Zero(3, 20);
  const std::vector<int> t = {1, 100, 500};
  const auto a = q_sample<float>(x0, t, zero, s);
  const auto b = q_sample<float>(zero, t, eps, s);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 20; ++c) {
      CHECK(a(r, c) == doctest::Approx(std::sqrt(s.alpha_bar(t[r])) * x0(r, c)).epsilon(1e-6));
      CHECK(b(r, c) == doctest::Approx(std::sqrt(1 - s.alpha_bar(t[r])) * eps(r, c)).epsilon(1e-6));
    }
  const auto xt = q_sample<float>(x0, t, eps, s);
  const auto back = predict_x0_from_eps<float>(xt, t, eps, s);
  CHECK((back - x0).cwiseAbs().maxCoeff() <= 1e-6f);
  const auto no_eps = predict_x0_from_eps<float>(xt, t, zero, s);
  for (int r = 0; r < 3; ++r)
    CHECK(no_eps(r, 0) == doctest::Approx(xt(r, 0) / std::sqrt(s.alpha_bar(t[r]))).epsilon(1e-6));
  const auto clamped = predict_x0_from_eps<float>(xt, t, zero, s, 0.25);
  CHECK(clamped.cwiseAbs().maxCoeff() <= 0.25f);
}

TEST_CASE("q_sample marginal statistics") {
  const NoiseSchedule s = make_linear_schedule();
  const int n = 20000;
  for (int t : {1, 500, 1000}) {
    Matrix<double> x0 = Matrix<double>::Constant(n, 1, 0.6);
    const auto eps = testing::random_matrix<double>(n, 1, 100 + t);
    const std::vector<int> ts(n, t);
    const auto xt = q_sample<double>(x0, ts, eps, s);
    const double mean = xt.mean();
    const double var = (xt.array() - mean).square().sum() / (n - 1);
    const double v = 1 - s.alpha_bar(t);
    CHECK(std::abs(mean - std::sqrt(s.alpha_bar(t)) * 0.6) <= 4 * std::sqrt(v / n));
    CHECK(std::abs(var - v) <= 4 * v * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("sampler mean equals the analytic posterior for the true noise") {
  const NoiseSchedule s = make_linear_schedule();
  const auto x0 = testing::random_matrix(2, 16, 3, 0.4);
  const auto eps = testing::random_matrix(2, 16, 4);
  for (int t : {2, 10, 300, 999}) {
    const std::vector<int> ts = {t, t};
    const auto xt = q_sample<float>(x0, ts, eps, s);
    const auto mu = posterior_mean<float>(predict_x0_from_eps<float>(xt, ts, eps, s), xt, ts, s);
    for (int c = 0; c < 16; ++c) {
      const Posterior p = bayes_posterior(x0(0, c), xt(0, c), t, s);
      CHECK(std::abs(mu(0, c) - p.mean) <= 1e-5);
    }
  }
}

TEST_CASE("gaussian KL and discretized likelihood") {
  CHECK(gaussian_kl(0, 0, 1, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(gaussian_kl(0.3, -1.2, 0.3, -1.2)) <= 1e-15);
  // closed form for unequal variances
  const double kl = gaussian_kl(0.1, std::log(0.5), -0.2, std::log(2.0));
  const double ref = std::log(std::sqrt(2.0) / std::sqrt(0.5)) + (0.5 + 0.09) / (2 * 2.0) - 0.5;
  CHECK(kl == doctest::Approx(ref).epsilon(1e-12));

  for (auto [mean, lv] : {std::pair{0.0, std::log(0.01)}, {0.8, std::log(0.001)}, {-0.95, std::log(0.3)}}) {
    double total = 0;
    for (int k = 0; k < 256; ++k) total += std::exp(discretized_gaussian_log_likelihood(-1 + 2.0 * k / 255, mean, lv));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("hybrid loss: matched prediction has zero loss above t = 1") {
  const NoiseSchedule s = make_linear_schedule();
  const auto x0 = testing::random_matrix<double>(3, 8, 5, 0.5);
  const auto eps = testing::random_matrix<double>(3, 8, 6);
  const std::vector<int> t = {2, 400, 1000};
  const auto xt = q_sample<double>(x0, t, eps, s);
  const Matrix<double> v = Matrix<double>::Zero(3, 8);  // sigma^2 = beta_tilde
  const auto l = hybrid_loss<double>(eps, v, eps, x0, xt, t, s, 1.0);
  CHECK(l.mse == 0.0);
  CHECK(std::abs(l.vlb) <= 1e-9);
  CHECK(std::abs(l.total) <= 1e-9);
}

TEST_CASE("hybrid loss: VLB is non-negative and lambda 0 leaves the MSE") {
  const NoiseSchedule s = make_linear_schedule();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto x0 = testing::random_matrix<double>(4, 8, 10 + seed, 0.5);
    const auto eps = testing::random_matrix<double>(4, 8, 20 + seed);
    const auto eps_hat = testing::random_matrix<double>(4, 8, 30 + seed);
    Matrix<double> v(4, 8);
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform();
    std::vector<int> t = {1, rng.uniform_int(2, 1000), rng.uniform_int(2, 1000), 1000};
    const auto xt = q_sample<double>(x0, t, eps, s);
    const auto l = hybrid_loss<double>(eps_hat, v, eps, x0, xt, t, s, 1.0);
    CHECK(l.vlb >= 0);
    const auto l0 = hybrid_loss<double>(eps_hat, v, eps, x0, xt, t, s, 0.0);
    CHECK(l0.total == l0.mse);
    CHECK(l0.mse == doctest::Approx((eps_hat - eps).squaredNorm() / 32).epsilon(1e-12));
  }
}

TEST_CASE("hybrid loss on one pixel reproduces the closed-form KL") {
  // Two steps with beta = (0.5, 0.5): the model mean is offset from the
  // true posterior mean by exactly one posterior standard deviation.
  const NoiseSchedule s = NoiseSchedule::from_betas({0.5, 0.5});
  const int t = 2;
  Matrix<double> x0(1, 1), eps(1, 1), v = Matrix<double>::Zero(1, 1);
  x0(0, 0) = 0.2;
  eps(0, 0) = 0.4;
  const std::vector<int> ts = {t};
  const auto xt = q_sample<double>(x0, ts, eps, s);
  // eps_hat shifts x0_hat; choose it so the mean moves by sqrt(beta_tilde)
  const double shift = std::sqrt(s.beta_tilde(t)) / s.posterior_coef_x0(t);
  Matrix<double> eps_hat(1, 1);
  eps_hat(0, 0) = eps(0, 0) - shift * std::sqrt(s.alpha_bar(t)) / std::sqrt(1 - s.alpha_bar(t));
  const auto l = hybrid_loss<double>(eps_hat, v, eps, x0, xt, ts, s, 1.0);
  CHECK(l.vlb == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("hybrid loss gradients match finite differences") {
  const NoiseSchedule s = make_linear_schedule(50, 1e-3, 0.2);
  const auto x0 = testing::random_matrix<double>(3, 6, 40, 0.5);
  const auto eps = testing::random_matrix<double>(3, 6, 41);
  const auto eps_hat = testing::random_matrix<double>(3, 6, 42);
  Matrix<double> v(3, 6);
  Rng rng(43);
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = 0.1 + 0.8 * rng.uniform();
  const std::vector<int> t = {1, 7, 50};
  const auto xt = q_sample<double>(x0, t, eps, s);
  const double lambda = 0.7;
  const auto base = hybrid_loss<double>(eps_hat, v, eps, x0, xt, t, s, lambda, &eps_hat);
  const double h = 1e-6;
  for (Index i = 0; i < v.size(); ++i) {
    auto vp = v, vm = v;
    vp.data()[i] += h;
    vm.data()[i] -= h;
    const double fd = (hybrid_loss<double>(eps_hat, vp, eps, x0, xt, t, s, lambda, &eps_hat).total -
                       hybrid_loss<double>(eps_hat, vm, eps, x0, xt, t, s, lambda, &eps_hat).total) /
                      (2 * h);
    CHECK(std::abs(base.d_v.data()[i] - fd) <= 1e-7 * std::max(1.0, std::abs(fd)));
    auto ep = eps_hat, em = eps_hat;
    ep.data()[i] += h;
    em.data()[i] -= h;
    const double fd_e = (hybrid_loss<double>(ep, v, eps, x0, xt, t, s, lambda, &eps_hat).total -
                         hybrid_loss<double>(em, v, eps, x0, xt, t, s, lambda, &eps_hat).total) /
                        (2 * h);
    CHECK(std::abs(base.d_eps.data()[i] - fd_e) <= 1e-7 * std::max(1.0, std::abs(fd_e)));
  }
}

TEST_CASE("ddpm sampling: determinism, row independence and the one-step collapse") {
  const NoiseSchedule s = make_linear_schedule(20, 1e-3, 0.2);
  StandardModel model = [](const Matrix<float>& x, int t) {
    StandardPrediction p;
    p.eps = 0.3f * x.array().sin().matrix() + Matrix<float>::Constant(x.rows(), x.cols(), 0.01f * t);
    p.v = Matrix<float>::Constant(x.rows(), x.cols(), 0.4f);
    return p;
  };
  const std::vector<std::uint64_t> seeds = {5, 9};
  const auto a = ddpm_sample(model, 2, 12, s, seeds).final;
  CHECK(ddpm_sample(model, 2, 12, s, seeds).final == a);
  const std::vector<std::uint64_t> second = {9};
  CHECK(ddpm_sample(model, 1, 12, s, second).final.row(0) == a.row(1));
  CHECK(a.cwiseAbs().maxCoeff() <= 1.0f);

  SampleOptions rec;
  rec.record_steps = {20, 10, 1};
  const auto r = ddpm_sample(model, 2, 12, s, seeds, rec);
  REQUIRE(r.trajectory.size() == 3);
  CHECK(r.trajectory[0].first == 20);
  CHECK(r.final == a);

  // T = 1, eps_hat = 0, v = 0: one deterministic step to x_1 / sqrt(alpha_bar_1)
  const NoiseSchedule one = NoiseSchedule::from_betas({0.04});
  StandardModel zero = [](const Matrix<float>& x, int) {
    return StandardPrediction{Matrix<float>::Zero(x.rows(), x.cols()), Matrix<float>::Zero(x.rows(), x.cols())};
  };
  SampleOptions no_clip;
  no_clip.clip = kInf;
  const std::vector<std::uint64_t> seed = {77};
  const auto out = ddpm_sample(zero, 1, 6, one, seed, no_clip).final;
  Rng rng(77);
  for (int c = 0; c < 6; ++c)
    CHECK(out(0, c) == doctest::Approx(rng.normal() / std::sqrt(0.96)).epsilon(1e-6));
}

TEST_CASE("ddpm sampling aborts on a non-finite state") {
  const NoiseSchedule s = make_linear_schedule(5, 1e-3, 0.2);
  StandardModel bad = [](const Matrix<float>& x, int t) {
    StandardPrediction p{Matrix<float>::Zero(x.rows(), x.cols()), Matrix<float>::Zero(x.rows(), x.cols())};
    if (t == 3) p.v(0, 0) = std::numeric_limits<float>::infinity();
    return p;
  };
  const std::vector<std::uint64_t> seeds = {1};
  try {
    ddpm_sample(bad, 1, 4, s, seeds);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("t = 3") != std::string::npos);
  }
}
