#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "octgan/image.hpp"

namespace octgan::io {

/// 8-bit grayscale PNG; values are clamped to [0,1] and rounded to the nearest level.
std::vector<uint8_t> encode_png(const Raster &image);

/// Decodes any image OpenCV understands as grayscale, scaled to [0,1] by its bit depth.
Raster decode_image(std::span<const uint8_t> bytes);

void write_png(const std::filesystem::path &path, const Raster &image);
Raster read_image(const std::filesystem::path &path);

std::vector<uint8_t> read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, std::span<const uint8_t> bytes);

std::string base64_encode(std::span<const uint8_t> bytes);

} // namespace octgan::io
