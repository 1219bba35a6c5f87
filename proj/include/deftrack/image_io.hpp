#pragma once

#include <filesystem>
#include <vector>

#include "deftrack/image.hpp"

namespace deftrack {

/// Reads an 8-bit PGM (P2/P5) or PNG (gray, gray+alpha, RGB, RGBA, palette).
/// Colour inputs are converted to luminance.
ImageBuffer read_image(const std::filesystem::path& path);

/// Writes 8-bit output; intensities are rounded and saturated to 0..255.
void write_pgm(const std::filesystem::path& path, const ImageBuffer& image);
void write_png(const std::filesystem::path& path, const ImageBuffer& image);

/// .pgm and .png files in `dir`, sorted by filename.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);

}  // namespace deftrack
