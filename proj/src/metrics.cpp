#include "sar2rgb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "sar2rgb/errors.hpp"
#include "sar2rgb/raster_io.hpp"
#include "sar2rgb/rng.hpp"

namespace sar2rgb {

namespace {

void require_same(const Image& a, const Image& b) {
  if (!a.same_shape(b))
    throw ConfigError("metric inputs differ in shape: " + std::to_string(a.channels) + "x" +
                      std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                      std::to_string(b.channels) + "x" + std::to_string(b.height) + "x" + std::to_string(b.width));
  if (a.empty()) throw ConfigError("metric inputs are empty");
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i) {
    k[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable valid-mode filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int oh = h - n + 1;
  const int ow = w - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * plane[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double mae(const Image& a, const Image& b) {
  require_same(a, b);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a.data[i]) - double(b.data[i]));
  return s / static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b, double data_range) {
  require_same(a, b);
  if (!(data_range > 0)) throw ConfigError("data_range must be > 0");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    s += d * d;
  }
  const double mse = s / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim(const Image& a, const Image& b, const SsimConfig& cfg) {
  require_same(a, b);
  if (cfg.window < 1 || cfg.window % 2 == 0) throw ConfigError("SSIM window must be odd");
  if (!(cfg.data_range > 0)) throw ConfigError("data_range must be > 0");
  if (a.height < cfg.window || a.width < cfg.window)
    throw ConfigError("image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                      " is smaller than the SSIM window " + std::to_string(cfg.window));
  const auto k = gaussian_kernel(cfg.window, cfg.sigma);
  const double c1 = std::pow(0.01 * cfg.data_range, 2);
  const double c2 = std::pow(0.03 * cfg.data_range, 2);
  const int h = a.height;
  const int w = a.width;
  const std::size_t plane = a.plane_size();
  double total = 0;
  for (int ch = 0; ch < a.channels; ++ch) {
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      x[i] = a.data[ch * plane + i];
      y[i] = b.data[ch * plane + i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    auto mx = filter_valid(x, h, w, k);
    auto my = filter_valid(y, h, w, k);
    auto sxx = filter_valid(xx, h, w, k);
    auto syy = filter_valid(yy, h, w, k);
    auto sxy = filter_valid(xy, h, w, k);
    double sum = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cxy = sxy[i] - mx[i] * my[i];
      sum += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += sum / static_cast<double>(mx.size());
  }
  return total / a.channels;
}

GaussianFit fit_gaussian(const FeatureMatrix& f) {
  if (f.rows() < 2) throw ConfigError("FID needs at least two feature rows per set");
  GaussianFit g;
  g.mean = f.colwise().mean().transpose();
  Eigen::MatrixXd centered = f.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / static_cast<double>(f.rows() - 1);
  return g;
}

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
  if (a.mean.size() != b.mean.size()) throw ConfigError("feature dimensions differ");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(0.5 * (a.cov + a.cov.transpose()));
  Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd sqrt_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = sqrt_a * b.cov * sqrt_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  const double cross = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  return std::max(d, 0.0);
}

double fid(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.cols() != b.cols()) throw ConfigError("feature dimensions differ: " + std::to_string(a.cols()) + " vs " +
                                              std::to_string(b.cols()));
  return frechet_distance(fit_gaussian(a), fit_gaussian(b));
}

std::string extractor_id(const FeatureConfig& cfg) {
  if (cfg.extractor == "random-projection")
    return "random-projection/r" + std::to_string(cfg.resize) + "/d" + std::to_string(cfg.dim) + "/s" +
           std::to_string(cfg.seed);
  if (cfg.extractor == "pooled-stats") return "pooled-stats/4x4";
  if (cfg.extractor == "file") return "file";
  throw ConfigError("unknown feature extractor '" + cfg.extractor + "'");
}

Image resize_bilinear(const Image& img, int height, int width) {
  if (height < 1 || width < 1) throw ConfigError("resize target must be positive");
  if (img.height == height && img.width == width) return img;
  Image out(img.channels, height, width);
  const double sy = double(img.height) / height;
  const double sx = double(img.width) / width;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < height; ++y) {
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(img.height - 1));
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, img.height - 1);
      const double wy = fy - y0;
      for (int x = 0; x < width; ++x) {
        const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(img.width - 1));
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, img.width - 1);
        const double wx = fx - x0;
        const double top = img.at(c, y0, x0) * (1 - wx) + img.at(c, y0, x1) * wx;
        const double bot = img.at(c, y1, x0) * (1 - wx) + img.at(c, y1, x1) * wx;
        out.at(c, y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  return out;
}

FeatureMatrix extract_features(std::span<const Image> images, const FeatureConfig& cfg) {
  extractor_id(cfg);
  if (cfg.extractor == "file") throw ConfigError("the file extractor reads precomputed features; use read_feature_file");
  if (images.empty()) return FeatureMatrix(0, cfg.dim);
  const int channels = images[0].channels;
  for (const auto& img : images)
    if (img.channels != channels) throw ConfigError("images differ in channel count");

  if (cfg.extractor == "pooled-stats") {
    constexpr int kCells = 4;
    FeatureMatrix f(static_cast<Eigen::Index>(images.size()), channels * kCells * kCells * 2);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const Image& img = images[i];
      if (img.height < kCells || img.width < kCells) throw ConfigError("image too small for pooled-stats");
      Eigen::Index col = 0;
      for (int c = 0; c < channels; ++c)
        for (int gy = 0; gy < kCells; ++gy)
          for (int gx = 0; gx < kCells; ++gx) {
            const int y0 = gy * img.height / kCells, y1 = (gy + 1) * img.height / kCells;
            const int x0 = gx * img.width / kCells, x1 = (gx + 1) * img.width / kCells;
            double s = 0, s2 = 0;
            for (int y = y0; y < y1; ++y)
              for (int x = x0; x < x1; ++x) {
                s += img.at(c, y, x);
                s2 += double(img.at(c, y, x)) * img.at(c, y, x);
              }
            const double n = double(y1 - y0) * (x1 - x0);
            const double m = s / n;
            f(Eigen::Index(i), col++) = m;
            f(Eigen::Index(i), col++) = std::sqrt(std::max(s2 / n - m * m, 0.0));
          }
    }
    return f;
  }

  if (cfg.dim < 1 || cfg.resize < 1) throw ConfigError("feature dim and resize must be positive");
  const Eigen::Index in_dim = Eigen::Index(channels) * cfg.resize * cfg.resize;
  Rng rng(cfg.seed);
  Eigen::MatrixXd proj(in_dim, cfg.dim);
  for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = rng.normal();
  proj /= std::sqrt(static_cast<double>(in_dim));
  Eigen::MatrixXd flat(static_cast<Eigen::Index>(images.size()), in_dim);
  for (std::size_t i = 0; i < images.size(); ++i) {
    Image r = resize_bilinear(images[i], cfg.resize, cfg.resize);
    for (Eigen::Index k = 0; k < in_dim; ++k) flat(Eigen::Index(i), k) = r.data[static_cast<std::size_t>(k)];
  }
  return flat * proj;
}

FeatureMatrix read_feature_file(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  auto u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
    return v;
  };
  if (bytes.size() < 8) throw DataError(path.string() + ": truncated feature file");
  const std::uint64_t n = u32(0), d = u32(4);
  if (bytes.size() != 8 + n * d * 4)
    throw DataError(path.string() + ": feature file size does not match its " + std::to_string(n) + "x" +
                    std::to_string(d) + " header");
  FeatureMatrix f(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::uint64_t i = 0; i < n * d; ++i) {
    std::uint32_t u = u32(8 + 4 * i);
    float v;
    std::memcpy(&v, &u, 4);
    f(static_cast<Eigen::Index>(i / d), static_cast<Eigen::Index>(i % d)) = v;
  }
  return f;
}

void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& f) {
  std::string bytes;
  auto put = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  put(static_cast<std::uint32_t>(f.rows()));
  put(static_cast<std::uint32_t>(f.cols()));
  for (Eigen::Index r = 0; r < f.rows(); ++r)
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
      const float v = static_cast<float>(f(r, c));
      std::uint32_t u;
      std::memcpy(&u, &v, 4);
      put(u);
    }
  write_file_atomic(path, bytes);
}

double accuracy(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size())
    throw ConfigError("prediction and truth lengths differ: " + std::to_string(pred.size()) + " vs " +
                      std::to_string(truth.size()));
  if (pred.empty()) throw ConfigError("accuracy of an empty set is undefined");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace sar2rgb
