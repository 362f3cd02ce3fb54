#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sar2rgb/raster.hpp"

// Raster files.
//
// `.r16`: little-endian header (u32 width, u32 height) followed by C planes of
// 16-bit little-endian samples; C is inferred from the file size. SAR grids
// are signed samples in hundredths of a dB, RGB grids are unsigned counts.
//
// `.pgm` / `.ppm`: binary netpbm (P5 / P6), 8- or 16-bit. Samples are read as
// raw counts regardless of maxval. Only valid for RGB grids.
namespace sar2rgb {

enum class RasterRole { kSar, kRgb };

Image read_raster(const std::filesystem::path& path, RasterRole role);
void write_raster(const std::filesystem::path& path, const Image& grid, RasterRole role);

/// 8-bit binary PPM for viewing; values are clamped to [0, 255].
void write_ppm8(const std::filesystem::path& path, const Raster<std::uint8_t>& rgb);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace sar2rgb
