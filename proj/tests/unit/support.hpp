#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "sar2rgb/nn/tensor.hpp"
#include "sar2rgb/raster.hpp"
#include "sar2rgb/rng.hpp"

namespace testing {

template <class T = float>
sar2rgb::nn::Matrix<T> random_matrix(long rows, long cols, std::uint64_t seed, double stddev = 1.0) {
  sar2rgb::Rng rng(seed);
  sar2rgb::nn::Matrix<T> m(rows, cols);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * rng.normal());
  return m;
}

inline sar2rgb::Image random_image(int c, int h, int w, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  sar2rgb::Rng rng(seed);
  sar2rgb::Image img(c, h, w);
  for (auto& v : img.data) v = static_cast<float>(lo + (hi - lo) * rng.uniform());
  return img;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sar2rgb_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

}  // namespace testing
