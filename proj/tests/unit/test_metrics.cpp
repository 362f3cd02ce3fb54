#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "sar2rgb/errors.hpp"
#include "sar2rgb/metrics.hpp"
#include "support.hpp"

using namespace sar2rgb;

namespace {

// SSIM written pixel by pixel with a full 2-D Gaussian window.
constexpr double kInf = std::numeric_limits<double>::infinity();

double loop_ssim(const Image& a, const Image& b, int win = 11, double sigma = 1.5, double range = 1.0) {
  const int r = win / 2;
  std::vector<std::vector<double>> w(win, std::vector<double>(win));
  double norm = 0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) norm += w[i][j] = std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2 * sigma * sigma));
  const double c1 = 0.01 * range * 0.01 * range, c2 = 0.03 * range * 0.03 * range;
  double total = 0;
  for (int c = 0; c < a.channels; ++c) {
    double sum = 0;
    int count = 0;
    for (int y = r; y < a.height - r; ++y)
      for (int x = r; x < a.width - r; ++x) {
        double mx = 0, my = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            mx += w[i][j] / norm * a.at(c, y + i - r, x + j - r);
            my += w[i][j] / norm * b.at(c, y + i - r, x + j - r);
          }
        double vx = 0, vy = 0, cov = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const double dx = a.at(c, y + i - r, x + j - r) - mx, dy = b.at(c, y + i - r, x + j - r) - my;
            vx += w[i][j] / norm * dx * dx;
            vy += w[i][j] / norm * dy * dy;
            cov += w[i][j] / norm * dx * dy;
          }
        sum += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    total += sum / count;
  }
  return total / a.channels;
}

Eigen::MatrixXd gaussian_sample(int n, int d, std::uint64_t seed, double scale = 1.0,
                                Eigen::VectorXd shift = Eigen::VectorXd()) {
  Rng rng(seed);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = scale * rng.normal() + (shift.size() ? shift(j) : 0.0);
  return m;
}

}  // namespace

TEST_CASE("mae") {
  const Image a = testing::random_image(3, 4, 4, 1, 0.0f, 0.8f);
  CHECK(mae(a, a) == 0.0);
  Image b = a;
  for (auto& v : b.data) v += 0.1f;
  CHECK(mae(a, b) == doctest::Approx(0.1).epsilon(1e-6));
  const Image c = testing::random_image(3, 4, 4, 2);
  double ref = 0;
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) ref += std::abs(double(a.at(ch, y, x)) - double(c.at(ch, y, x)));
  CHECK(std::abs(mae(a, c) - ref / 48) <= 1e-12);
  CHECK_THROWS_AS(mae(a, Image(3, 4, 5)), ConfigError);
}

TEST_CASE("psnr") {
  Image a(1, 10, 10, 0.5f), b(1, 10, 10, 0.5f);
  CHECK(std::isinf(psnr(a, b)));
  CHECK(psnr(a, b) > 0);
  // half the pixels off by 0.1414.. gives MSE 0.01
  for (int i = 0; i < 50; ++i) b.data[static_cast<std::size_t>(i)] = 0.5f + float(std::sqrt(0.02));
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));
  for (auto& v : b.data) v = 0.51f;
  CHECK(psnr(a, b) == doctest::Approx(40.0).epsilon(1e-5));

  double last = kInf;
  for (float d : {0.01f, 0.02f, 0.05f, 0.1f, 0.3f}) {
    for (auto& v : b.data) v = 0.5f + d;
    const double p = psnr(a, b);
    CHECK(p < last);
    last = p;
  }

  // ordering by MAE and by PSNR can disagree: one large error versus many small ones
  Image spread(1, 10, 10, 0.5f), spike(1, 10, 10, 0.5f);
  for (auto& v : spread.data) v = 0.55f;     // MAE 0.05, MSE 0.0025
  spike.data[0] = 1.0f;                      // MAE 0.005, MSE 0.0025
  spike.data[1] = 0.0f;                      // MAE 0.01,  MSE 0.005
  CHECK(mae(a, spike) < mae(a, spread));
  CHECK(psnr(a, spike) < psnr(a, spread));
}

TEST_CASE("ssim matches a pixel loop") {
  const Image a = testing::random_image(2, 16, 16, 3);
  Image b = testing::random_image(2, 16, 16, 4);
  for (std::size_t i = 0; i < b.size(); ++i) b.data[i] = 0.6f * a.data[i] + 0.4f * b.data[i];
  CHECK(std::abs(ssim(a, b) - loop_ssim(a, b)) <= 1e-9);
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-9);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-6));

  SsimConfig small;
  small.window = 5;
  small.sigma = 1.0;
  CHECK(std::abs(ssim(a, b, small) - loop_ssim(a, b, 5, 1.0)) <= 1e-9);

  // checkerboard against its inverse is anticorrelated everywhere
  Image board(1, 16, 16), inverse(1, 16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      board.at(0, y, x) = float((x + y) % 2);
      inverse.at(0, y, x) = 1.0f - board.at(0, y, x);
    }
  CHECK(ssim(board, inverse) < 0);

  CHECK_THROWS_AS(ssim(Image(1, 8, 8), Image(1, 8, 8)), ConfigError);
  small.window = 4;
  CHECK_THROWS_AS(ssim(a, b, small), ConfigError);
}

TEST_CASE("ssim is invariant under a shared rescale") {
  // a common offset would change the luminance term, so only the scale moves
  const Image a = testing::random_image(3, 16, 16, 5);
  const Image b = testing::random_image(3, 16, 16, 6);
  Image sa = a, sb = b;
  for (auto& v : sa.data) v = 255.0f * v;
  for (auto& v : sb.data) v = 255.0f * v;
  SsimConfig scaled;
  scaled.data_range = 255;
  CHECK(ssim(sa, sb, scaled) == doctest::Approx(ssim(a, b)).epsilon(1e-5));
}

TEST_CASE("frechet distance closed forms") {
  const int d = 4;
  GaussianFit a{Eigen::VectorXd::Zero(d), 4 * Eigen::MatrixXd::Identity(d, d)};
  GaussianFit b{Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d)};
  CHECK(frechet_distance(a, b) == doctest::Approx(d).epsilon(1e-12));
  b.mean(0) = 2;
  CHECK(frechet_distance(a, b) == doctest::Approx(d + 4).epsilon(1e-12));
  CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-12));

  // singular covariances stay non-negative
  GaussianFit r1{Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d)};
  r1.cov(0, 0) = 1;
  CHECK(frechet_distance(r1, r1) >= 0);
  CHECK(frechet_distance(r1, r1) <= 1e-9);
}

TEST_CASE("fid on samples") {
  const auto x = gaussian_sample(200, 6, 7);
  CHECK(fid(x, x) <= 1e-6);
  CHECK(fid(x, x) >= 0);
  const auto y = gaussian_sample(150, 6, 8, 1.5);
  CHECK(std::abs(fid(x, y) - fid(y, x)) <= 1e-6);

  Eigen::VectorXd mu = Eigen::VectorXd::Zero(4);
  mu(0) = 1;
  const double big = fid(gaussian_sample(100000, 4, 9), gaussian_sample(100000, 4, 10, 1.0, mu));
  CHECK(big == doctest::Approx(1.0).epsilon(0.02));

  CHECK_THROWS(fid(x, gaussian_sample(10, 5, 1)));
  CHECK_THROWS(fid(x.topRows(1), x));

  const GaussianFit g = fit_gaussian(x);
  const Eigen::MatrixXd centred = x.rowwise() - x.colwise().mean();
  CHECK((g.cov - centred.transpose() * centred / 199.0).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("feature extraction") {
  std::vector<Image> imgs;
  for (int i = 0; i < 5; ++i) imgs.push_back(testing::random_image(3, 24, 24, 40 + i));
  FeatureConfig cfg;
  cfg.dim = 16;
  const auto f = extract_features(imgs, cfg);
  CHECK(f.rows() == 5);
  CHECK(f.cols() == 16);
  CHECK(extract_features(imgs, cfg) == f);

  const std::vector<int> perm = {3, 0, 4, 1, 2};
  std::vector<Image> shuffled;
  for (int p : perm) shuffled.push_back(imgs[static_cast<std::size_t>(p)]);
  const auto g = extract_features(shuffled, cfg);
  for (int i = 0; i < 5; ++i) CHECK((g.row(i) - f.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <= 1e-12);

  FeatureConfig other = cfg;
  other.seed = 1;
  CHECK(extract_features(imgs, other) != f);
  CHECK(extractor_id(other) != extractor_id(cfg));

  FeatureConfig pooled;
  pooled.extractor = "pooled-stats";
  CHECK(extract_features(imgs, pooled).cols() == 96);
  FeatureConfig missing;
  missing.extractor = "inception";
  CHECK_THROWS_AS(extract_features(imgs, missing), ConfigError);
}

TEST_CASE("feature files round trip") {
  const auto dir = testing::scratch_dir("features");
  const auto x = gaussian_sample(7, 3, 11);
  write_feature_file(dir / "f.bin", x);
  const auto back = read_feature_file(dir / "f.bin");
  CHECK((back - x.cast<float>().cast<double>()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::filesystem::file_size(dir / "f.bin") == 8 + 7 * 3 * 4);
}

TEST_CASE("bilinear resize") {
  Image img(1, 2, 2);
  img.data = {0.0f, 1.0f, 2.0f, 3.0f};
  const Image same = resize_bilinear(img, 2, 2);
  CHECK(same == img);
  const Image up = resize_bilinear(img, 4, 4);
  CHECK(up.at(0, 0, 0) == 0.0f);  // edge clamped
  CHECK(up.at(0, 1, 1) == doctest::Approx(0.75));
  Image flat(3, 9, 5, 0.25f);
  for (float v : resize_bilinear(flat, 32, 32).data) CHECK(v == doctest::Approx(0.25f));
}

TEST_CASE("accuracy") {
  const std::vector<int> truth = {0, 1, 2, 3};
  CHECK(accuracy(truth, truth) == 1.0);
  const std::vector<int> wrong = {1, 2, 3, 0};
  CHECK(accuracy(wrong, truth) == 0.0);
  const std::vector<int> three = {0, 1, 2, 0};
  CHECK(accuracy(three, truth) == 0.75);
  CHECK_THROWS(accuracy(std::vector<int>{0}, truth));
}
