#include "almond/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "almond/imageproc.hpp"

namespace almond {

GrayImage resize_nearest(const GrayImage& img, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidSize("resize target must be positive");
  if (img.width() == width && img.height() == height) return img;
  GrayImage out(width, height);
  for (int r = 0; r < height; ++r) {
    const int sr = static_cast<int>(static_cast<long long>(r) * img.height() / height);
    for (int c = 0; c < width; ++c) {
      const int sc = static_cast<int>(static_cast<long long>(c) * img.width() / width);
      out.at(r, c) = img.at(sr, sc);
    }
  }
  return out;
}

namespace {

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Netpbm header token reader; skips whitespace and '#' comments.
class PnmCursor {
public:
  explicit PnmCursor(const std::string& bytes) : bytes_(bytes) {}

  int next_int() {
    skip();
    std::size_t start = pos_;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) throw IoError("malformed netpbm header");
    return std::stoi(bytes_.substr(start, pos_ - start));
  }
  // Exactly one whitespace byte separates the header from raster data.
  std::size_t raster_start() const { return pos_ + 1; }

private:
  void skip() {
    while (pos_ < bytes_.size()) {
      const char ch = bytes_[pos_];
      if (ch == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 2;
};

RgbImage read_pnm(const std::string& bytes, const std::string& name) {
  const char kind = bytes[1];
  PnmCursor cur(bytes);
  const int width = cur.next_int();
  const int height = cur.next_int();
  const int maxval = cur.next_int();
  if (width <= 0 || height <= 0) throw IoError(name + ": bad dimensions");
  if (maxval <= 0 || maxval > 255) throw IoError(name + ": only 8-bit netpbm is supported");
  const bool color = (kind == '3' || kind == '6');
  const bool ascii = (kind == '2' || kind == '3');
  const std::size_t channels = color ? 3 : 1;
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;

  std::vector<std::uint8_t> values(count);
  if (ascii) {
    for (auto& v : values) v = static_cast<std::uint8_t>(cur.next_int() * 255 / maxval);
  } else {
    const std::size_t start = cur.raster_start();
    if (bytes.size() < start + count) throw IoError(name + ": truncated raster");
    for (std::size_t i = 0; i < count; ++i) {
      const int v = static_cast<unsigned char>(bytes[start + i]);
      values[i] = static_cast<std::uint8_t>(v * 255 / maxval);
    }
  }

  RgbImage out(width, height);
  auto px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (color) {
      px[i] = {values[3 * i], values[3 * i + 1], values[3 * i + 2]};
    } else {
      px[i] = {values[i], values[i], values[i]};
    }
  }
  return out;
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IoError(path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError(path.string() + ": " + image.message);
  }
  RgbImage out(static_cast<int>(image.width), static_cast<int>(image.height));
  auto px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = {buffer[3 * i], buffer[3 * i + 1], buffer[3 * i + 2]};
  }
  return out;
}

}  // namespace

RgbImage read_rgb(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  if (bytes.size() >= 8 && static_cast<unsigned char>(bytes[0]) == 0x89 && bytes[1] == 'P' &&
      bytes[2] == 'N' && bytes[3] == 'G') {
    return read_png(path);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] >= '2' && bytes[1] <= '6' && bytes[1] != '4') {
    return read_pnm(bytes, path.string());
  }
  throw IoError(path.string() + ": unsupported image format");
}

GrayImage read_gray(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  // Fast path keeps PGM bytes untouched.
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '2')) {
    RgbImage rgb = read_pnm(bytes, path.string());
    GrayImage out(rgb.width(), rgb.height());
    auto src = rgb.pixels();
    auto dst = out.pixels();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i].r;
    return out;
  }
  return to_grayscale(read_rgb(path));
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  auto px = img.pixels();
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace almond
