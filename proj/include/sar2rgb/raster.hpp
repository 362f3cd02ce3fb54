#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace sar2rgb {

/// Planar multi-channel grid stored channel-major (C, H, W).
template <class T>
struct Raster {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int c, int h, int w, T fill = T{})
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {
    if (c < 0 || h < 0 || w < 0) throw std::invalid_argument("negative raster dimension");
  }

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height + y) * width + x;
  }
  T& at(int c, int y, int x) { return data[index(c, y, x)]; }
  const T& at(int c, int y, int x) const { return data[index(c, y, x)]; }

  bool same_shape(const Raster& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool same_spatial(const Raster& o) const { return height == o.height && width == o.width; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

/// Real-valued image; standardized images live in [-1, 1].
using Image = Raster<float>;

}  // namespace sar2rgb
