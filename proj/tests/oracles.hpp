#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// They favour obviousness over speed and share no code with src/.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "almond/imageproc.hpp"
#include "almond/nn/tensor.hpp"

namespace oracle {

inline int mirror(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

inline std::vector<double> gaussian_taps(int k, double sigma) {
  if (sigma <= 0) sigma = 0.3 * ((k - 1) * 0.5 - 1) + 0.8;
  std::vector<double> g(k);
  double s = 0;
  for (int i = 0; i < k; ++i) {
    const double d = i - (k - 1) / 2.0;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

// Full 2-D convolution with the outer-product kernel, reflect-101 borders.
inline almond::GrayImage blur_2d(const almond::GrayImage& img, int k, double sigma) {
  const auto g = gaussian_taps(k, sigma);
  const int r = k / 2;
  almond::GrayImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j)
          acc += g[i + r] * g[j + r] * img.at(mirror(y + i, img.height()), mirror(x + j, img.width()));
      out.at(y, x) = static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
    }
  }
  return out;
}

// Hysteresis by explicit flood fill: start from every strong pixel, spread
// through 8-neighbours whose suppressed magnitude is at least `low`.
inline std::vector<std::uint8_t> hysteresis(const almond::RealImage& suppressed, double low, double high) {
  const int H = suppressed.height(), W = suppressed.width();
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(H) * W, 0);
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (suppressed.at(y, x) > high) {
        keep[y * W + x] = 255;
        stack.emplace_back(y, x);
      }
  while (!stack.empty()) {
    auto [y, x] = stack.back();
    stack.pop_back();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = y + dy, nx = x + dx;
        if (ny < 0 || nx < 0 || ny >= H || nx >= W || keep[ny * W + nx]) continue;
        const double m = suppressed.at(ny, nx);
        if (m > 0 && m >= low) {
          keep[ny * W + nx] = 255;
          stack.emplace_back(ny, nx);
        }
      }
  }
  return keep;
}

// Seven nested loops over n, y, x, f, i, j, c. Bias first, taps in (i, j, c)
// order, out-of-image taps contribute nothing.
template <typename T>
almond::nn::Tensor<T> conv2d(const almond::nn::Tensor<T>& x, const almond::nn::Tensor<T>& w,
                             const almond::nn::Tensor<T>& b, int stride, bool same) {
  const int N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const int kh = w.dim(0), kw = w.dim(1), F = w.dim(3);
  int Ho, Wo, pt = 0, pl = 0;
  if (same) {
    Ho = (H + stride - 1) / stride;
    Wo = (W + stride - 1) / stride;
    pt = std::max(0, (Ho - 1) * stride + kh - H) / 2;
    pl = std::max(0, (Wo - 1) * stride + kw - W) / 2;
  } else {
    Ho = (H - kh) / stride + 1;
    Wo = (W - kw) / stride + 1;
  }
  almond::nn::Tensor<T> out({N, Ho, Wo, F});
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < Ho; ++y)
      for (int xo = 0; xo < Wo; ++xo)
        for (int f = 0; f < F; ++f) {
          T acc = b[f];
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j)
              for (int c = 0; c < C; ++c) {
                const int iy = y * stride + i - pt, ix = xo * stride + j - pl;
                if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
                acc += x.at(n, iy, ix, c) * w[((static_cast<std::size_t>(i) * kw + j) * C + c) * F + f];
              }
          out.at(n, y, xo, f) = acc;
        }
  return out;
}

template <typename T>
almond::nn::Tensor<T> dense(const almond::nn::Tensor<T>& x, const almond::nn::Tensor<T>& w,
                            const almond::nn::Tensor<T>& b) {
  const int N = x.dim(0), D = x.dim(1), U = w.dim(1);
  almond::nn::Tensor<T> out({N, U});
  for (int n = 0; n < N; ++n)
    for (int u = 0; u < U; ++u) {
      double acc = b[u];
      for (int d = 0; d < D; ++d) acc += static_cast<double>(x.at(n, d)) * w.at(d, u);
      out.at(n, u) = static_cast<T>(acc);
    }
  return out;
}

inline almond::GrayImage random_gray(int w, int h, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> d(0, 255);
  almond::GrayImage img(w, h);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(d(gen));
  return img;
}

// Blocky random image: smooth regions with sharp boundaries so Canny has
// both strong and weak responses.
inline almond::GrayImage random_blocks(int w, int h, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> v(0, 255), noise(-20, 20);
  almond::GrayImage img(w, h, static_cast<std::uint8_t>(v(gen)));
  for (int k = 0; k < 4; ++k) {
    std::uniform_int_distribution<int> cx(0, w - 1), cy(0, h - 1);
    int x0 = cx(gen), x1 = cx(gen), y0 = cy(gen), y1 = cy(gen);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    const int fill = v(gen);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) img.at(y, x) = static_cast<std::uint8_t>(fill);
  }
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(std::clamp(p + noise(gen), 0, 255));
  return img;
}

}  // namespace oracle
