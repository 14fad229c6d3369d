#include "almond/imageproc.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace almond {

namespace {

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
}

RealImage to_real(const GrayImage& img) {
  RealImage out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  std::copy(src.begin(), src.end(), dst.begin());
  return out;
}

GrayImage to_gray(const RealImage& img) {
  GrayImage out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  std::transform(src.begin(), src.end(), dst.begin(), quantize);
  return out;
}

// Correlation with a 3x3 kernel, reflect-101 borders.
RealImage correlate3x3(const RealImage& img, const std::array<double, 9>& k) {
  RealImage out(img.width(), img.height());
  const int h = img.height(), w = img.width();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -1; i <= 1; ++i) {
        const int rr = reflect101(r + i, h);
        for (int j = -1; j <= 1; ++j) {
          acc += k[(i + 1) * 3 + (j + 1)] * img.at(rr, reflect101(c + j, w));
        }
      }
      out.at(r, c) = acc;
    }
  }
  return out;
}

}  // namespace

GrayImage to_grayscale(const RgbImage& img) {
  GrayImage out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = quantize(0.299 * src[i].r + 0.587 * src[i].g + 0.114 * src[i].b);
  }
  return out;
}

std::vector<double> gaussian_kernel_1d(int kernel_size, double sigma) {
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw InvalidKernel("kernel size must be odd and positive, got " + std::to_string(kernel_size));
  }
  if (!(sigma > 0.0)) sigma = 0.3 * ((kernel_size - 1) * 0.5 - 1.0) + 0.8;
  const int radius = kernel_size / 2;
  std::vector<double> taps(kernel_size);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += taps[i + radius];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

RealImage gaussian_blur_real(const RealImage& img, int kernel_size, double sigma) {
  const auto taps = gaussian_kernel_1d(kernel_size, sigma);
  const int radius = kernel_size / 2;
  const int h = img.height(), w = img.width();

  RealImage horiz(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) acc += taps[j + radius] * img.at(r, reflect101(c + j, w));
      horiz.at(r, c) = acc;
    }
  }
  RealImage out(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += taps[i + radius] * horiz.at(reflect101(r + i, h), c);
      out.at(r, c) = acc;
    }
  }
  return out;
}

GrayImage gaussian_blur(const GrayImage& img, int kernel_size, double sigma) {
  return to_gray(gaussian_blur_real(to_real(img), kernel_size, sigma));
}

GrayImage nlm_denoise(const GrayImage& img, const NlmParams& p) {
  if (p.template_radius < 0 || p.search_radius < 0) {
    throw InvalidRadius("template and search radii must be non-negative");
  }
  if (!(p.h > 0.0)) throw InvalidRadius("filter strength h must be positive");
  if (p.search_radius == 0) return img;

  const int h = img.height(), w = img.width();
  const int t = p.template_radius, s = p.search_radius;
  const int pad = t + s;
  const int pw = w + 2 * pad, ph = h + 2 * pad;

  // Reflect-101 padded copy so the inner loops are branch-free.
  std::vector<double> padded(static_cast<std::size_t>(pw) * ph);
  for (int r = 0; r < ph; ++r) {
    const int sr = reflect101(r - pad, h);
    for (int c = 0; c < pw; ++c) padded[static_cast<std::size_t>(r) * pw + c] = img.at(sr, reflect101(c - pad, w));
  }
  auto at = [&](int r, int c) { return padded[static_cast<std::size_t>(r + pad) * pw + (c + pad)]; };

  const double patch_area = (2.0 * t + 1) * (2.0 * t + 1);
  const double inv_h2 = 1.0 / (p.h * p.h);
  const double bias = 2.0 * p.noise_sigma * p.noise_sigma;

  GrayImage out(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double wsum = 0.0, vsum = 0.0;
      for (int dr = -s; dr <= s; ++dr) {
        for (int dc = -s; dc <= s; ++dc) {
          double d2 = 0.0;
          for (int i = -t; i <= t; ++i) {
            for (int j = -t; j <= t; ++j) {
              const double diff = at(r + i, c + j) - at(r + dr + i, c + dc + j);
              d2 += diff * diff;
            }
          }
          d2 /= patch_area;
          const double weight = std::exp(-std::max(d2 - bias, 0.0) * inv_h2);
          wsum += weight;
          vsum += weight * at(r + dr, c + dc);
        }
      }
      out.at(r, c) = quantize(vsum / wsum);
    }
  }
  return out;
}

BinaryImage adaptive_threshold(const GrayImage& img, int block_size, double c) {
  if (block_size < 3 || block_size % 2 == 0) {
    throw InvalidBlockSize("block size must be odd and >= 3, got " + std::to_string(block_size));
  }
  const int radius = block_size / 2;
  const int h = img.height(), w = img.width();
  const double area = static_cast<double>(block_size) * block_size;
  BinaryImage out(w, h);
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      double sum = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int rr = reflect101(r + i, h);
        for (int j = -radius; j <= radius; ++j) sum += img.at(rr, reflect101(col + j, w));
      }
      out.at(r, col) = img.at(r, col) > sum / area - c ? 255 : 0;
    }
  }
  return out;
}

CannyDetail canny_detail(const GrayImage& img, double low, double high) {
  if (low < 0.0 || low > high) {
    throw InvalidThresholds("need 0 <= low <= high, got low=" + std::to_string(low) +
                            " high=" + std::to_string(high));
  }
  const int h = img.height(), w = img.width();
  const RealImage smooth = gaussian_blur_real(to_real(img), 5, 1.4);
  const RealImage gx = correlate3x3(smooth, {-1, 0, 1, -2, 0, 2, -1, 0, 1});
  const RealImage gy = correlate3x3(smooth, {-1, -2, -1, 0, 0, 0, 1, 2, 1});

  CannyDetail d{RealImage(w, h), std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h),
                RealImage(w, h), BinaryImage(w, h)};
  constexpr double kRadToDeg = 57.29577951308232;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double x = gx.at(r, c), y = gy.at(r, c);
      d.magnitude.at(r, c) = std::sqrt(x * x + y * y);
      double angle = std::atan2(y, x) * kRadToDeg;
      if (angle < 0) angle += 180.0;
      std::uint8_t bin = 0;
      if (angle >= 22.5 && angle < 67.5) {
        bin = 1;
      } else if (angle >= 67.5 && angle < 112.5) {
        bin = 2;
      } else if (angle >= 112.5 && angle < 157.5) {
        bin = 3;
      }
      d.direction[static_cast<std::size_t>(r) * w + c] = bin;
    }
  }

  // Neighbour offsets (dr, dc) pointing along the gradient, y axis down.
  static constexpr int kStep[4][2] = {{0, 1}, {1, 1}, {1, 0}, {1, -1}};
  auto mag = [&](int r, int c) {
    return (r < 0 || r >= h || c < 0 || c >= w) ? 0.0 : d.magnitude.at(r, c);
  };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double m = d.magnitude.at(r, c);
      if (m < low) continue;
      const auto* step = kStep[d.direction[static_cast<std::size_t>(r) * w + c]];
      const double behind = mag(r - step[0], c - step[1]);
      const double ahead = mag(r + step[0], c + step[1]);
      // Asymmetric comparison keeps exactly one pixel on a plateau of two.
      if (m > behind && m >= ahead) d.suppressed.at(r, c) = m;
    }
  }

  std::deque<std::pair<int, int>> frontier;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (d.suppressed.at(r, c) > high) {
        d.edges.at(r, c) = 255;
        frontier.emplace_back(r, c);
      }
    }
  }
  while (!frontier.empty()) {
    const auto [r, c] = frontier.front();
    frontier.pop_front();
    for (int i = -1; i <= 1; ++i) {
      for (int j = -1; j <= 1; ++j) {
        const int rr = r + i, cc = c + j;
        if (rr < 0 || rr >= h || cc < 0 || cc >= w || d.edges.at(rr, cc) == 255) continue;
        const double m = d.suppressed.at(rr, cc);
        if (m > 0.0 && m >= low) {
          d.edges.at(rr, cc) = 255;
          frontier.emplace_back(rr, cc);
        }
      }
    }
  }
  return d;
}

BinaryImage canny(const GrayImage& img, double low, double high) {
  return canny_detail(img, low, high).edges;
}

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::gray: return "gray";
    case Stage::blur: return "blur";
    case Stage::denoise: return "denoise";
    case Stage::thresh: return "thresh";
    case Stage::canny: return "canny";
  }
  return "unknown";
}

Stage parse_stage(std::string_view name) {
  for (int i = 0; i < kStageCount; ++i) {
    if (stage_name(static_cast<Stage>(i)) == name) return static_cast<Stage>(i);
  }
  throw InvalidConfig("unknown preprocessing stage '" + std::string(name) + "'");
}

const GrayImage& PreprocessResult::stage(Stage s) const {
  switch (s) {
    case Stage::gray: return gray;
    case Stage::blur: return blur;
    case Stage::denoise: return denoise;
    case Stage::thresh: return thresh.as_gray();
    case Stage::canny: return canny.as_gray();
  }
  return gray;
}

namespace {

void validate(const PreprocessParams& p) {
  gaussian_kernel_1d(p.blur_kernel, p.blur_sigma);
  if (p.nlm.template_radius < 0 || p.nlm.search_radius < 0 || !(p.nlm.h > 0.0)) {
    throw InvalidRadius("bad non-local means parameters");
  }
  if (p.thresh_block < 3 || p.thresh_block % 2 == 0) throw InvalidBlockSize("bad threshold block");
  if (p.canny_low < 0.0 || p.canny_low > p.canny_high) throw InvalidThresholds("bad canny thresholds");
  if (p.canny_input != Stage::denoise && p.canny_input != Stage::thresh) {
    throw InvalidConfig("canny input must be the denoise or thresh stage");
  }
}

}  // namespace

PreprocessResult preprocess_chain(const GrayImage& img, const PreprocessParams& p) {
  validate(p);
  PreprocessResult res;
  res.gray = img;
  res.blur = gaussian_blur(res.gray, p.blur_kernel, p.blur_sigma);
  res.denoise = nlm_denoise(res.blur, p.nlm);
  res.thresh = adaptive_threshold(res.denoise, p.thresh_block, p.thresh_c);
  const GrayImage& edge_src = p.canny_input == Stage::thresh ? res.thresh.as_gray() : res.denoise;
  res.canny = canny(edge_src, p.canny_low, p.canny_high);
  return res;
}

PreprocessResult preprocess_chain(const RgbImage& img, const PreprocessParams& p) {
  validate(p);
  return preprocess_chain(to_grayscale(img), p);
}

GrayImage preprocess_to_stage(const GrayImage& img, const PreprocessParams& p, Stage stage) {
  validate(p);
  if (stage == Stage::gray) return img;
  GrayImage blurred = gaussian_blur(img, p.blur_kernel, p.blur_sigma);
  if (stage == Stage::blur) return blurred;
  GrayImage denoised = nlm_denoise(blurred, p.nlm);
  if (stage == Stage::denoise) return denoised;
  BinaryImage thresh = adaptive_threshold(denoised, p.thresh_block, p.thresh_c);
  if (stage == Stage::thresh) return thresh.as_gray();
  const GrayImage& edge_src = p.canny_input == Stage::thresh ? thresh.as_gray() : denoised;
  return canny(edge_src, p.canny_low, p.canny_high).as_gray();
}

}  // namespace almond
