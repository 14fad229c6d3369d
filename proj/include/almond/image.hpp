#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "almond/errors.hpp"

namespace almond {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Row-major H x W raster, origin top-left.
template <typename Pixel>
class Raster {
public:
  Raster() = default;
  Raster(int width, int height, Pixel fill = Pixel{}) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
      throw InvalidImage("raster dimensions must be positive");
    }
    pixels_.assign(static_cast<std::size_t>(width) * height, fill);
  }
  Raster(int width, int height, std::vector<Pixel> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width <= 0 || height <= 0) {
      throw InvalidImage("raster dimensions must be positive");
    }
    if (pixels_.size() != static_cast<std::size_t>(width) * height) {
      throw InvalidImage("pixel count does not match width*height");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return pixels_.empty(); }
  std::size_t size() const { return pixels_.size(); }

  Pixel& at(int row, int col) { return pixels_[static_cast<std::size_t>(row) * width_ + col]; }
  const Pixel& at(int row, int col) const {
    return pixels_[static_cast<std::size_t>(row) * width_ + col];
  }

  std::span<Pixel> pixels() & { return pixels_; }
  std::span<const Pixel> pixels() const& { return pixels_; }
  // A span into a temporary would dangle.
  void pixels() && = delete;

  friend bool operator==(const Raster&, const Raster&) = default;

private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Pixel> pixels_;
};

using GrayImage = Raster<std::uint8_t>;
using RgbImage = Raster<Rgb>;

// Two-level raster; every pixel is exactly 0 or 255.
class BinaryImage : public Raster<std::uint8_t> {
public:
  BinaryImage() = default;
  BinaryImage(int width, int height) : Raster(width, height, 0) {}
  explicit BinaryImage(GrayImage gray) : Raster(std::move(gray)) {
    for (auto v : pixels()) {
      if (v != 0 && v != 255) throw InvalidImage("binary image pixel not in {0,255}");
    }
  }
  const GrayImage& as_gray() const { return *this; }
  std::size_t count_set() const {
    std::size_t n = 0;
    for (auto v : pixels()) n += (v == 255);
    return n;
  }
};

// Reflect-101 border index: mirror about the edge pixel without repeating it
// (... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...). Shared by every kernel.
inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

inline RgbImage gray_to_rgb(const GrayImage& g) {
  RgbImage out(g.width(), g.height());
  auto src = g.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = {src[i], src[i], src[i]};
  return out;
}

// Nearest-neighbour resample to the requested size.
GrayImage resize_nearest(const GrayImage& img, int width, int height);

}  // namespace almond
