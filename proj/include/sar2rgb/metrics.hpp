#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sar2rgb/raster.hpp"

// Image-quality metrics. Inputs are expected in the [0, 1] domain (see
// to_unit_range) unless a different data_range is passed.
namespace sar2rgb {

double mae(const Image& a, const Image& b);

/// 10 log10(range^2 / MSE). Identical inputs give +infinity; reports write
/// that as the string "inf".
double psnr(const Image& a, const Image& b, double data_range = 1.0);

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double data_range = 1.0;
};

/// Gaussian-window SSIM over the valid region, averaged over channels.
double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {});

using FeatureMatrix = Eigen::MatrixXd;

struct GaussianFit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased (N - 1)
};

GaussianFit fit_gaussian(const FeatureMatrix& features);

/// Fréchet distance between two Gaussians. The cross term uses the
/// eigenvalues of sqrt(S_a) S_b sqrt(S_a), with negative eigenvalues
/// clipped to zero; the result is clipped at zero.
double frechet_distance(const GaussianFit& a, const GaussianFit& b);

/// FID between two feature sets (rows are items).
double fid(const FeatureMatrix& a, const FeatureMatrix& b);

struct FeatureConfig {
  /// "random-projection", "pooled-stats" or "file"
  std::string extractor = "random-projection";
  int dim = 64;
  std::uint64_t seed = 0;
  int resize = 32;
};

/// Identifier recorded in reports; FID values compare only within one id.
std::string extractor_id(const FeatureConfig& cfg);

/// Deterministic per-image features; row i belongs to images[i].
/// "random-projection": bilinear resize to resize x resize, then a fixed
/// Gaussian projection to `dim`. "pooled-stats": per-channel mean and
/// standard deviation over a 4x4 grid of cells (dim = 32 * channels).
FeatureMatrix extract_features(std::span<const Image> images, const FeatureConfig& cfg);

/// Binary feature file: u32 N, u32 d, then N*d little-endian f32, row-major.
FeatureMatrix read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& features);

double accuracy(std::span<const int> pred, std::span<const int> truth);

/// Bilinear resize of every channel (half-pixel centres, edge clamped).
Image resize_bilinear(const Image& img, int height, int width);

}  // namespace sar2rgb
