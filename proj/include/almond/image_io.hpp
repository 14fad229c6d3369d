#pragma once

#include <filesystem>

#include "almond/image.hpp"

namespace almond {

// 8-bit PGM (P2/P5), PPM (P3/P6) and PNG (gray, gray+alpha, RGB, RGBA,
// palette; 16-bit PNG is reduced to 8 bits). Color inputs are returned as RGB.
RgbImage read_rgb(const std::filesystem::path& path);

// Reads any supported format; color images are converted with to_grayscale.
GrayImage read_gray(const std::filesystem::path& path);

// Binary P5, maxval 255.
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

}  // namespace almond
