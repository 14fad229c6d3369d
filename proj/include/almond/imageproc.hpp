#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "almond/image.hpp"

namespace almond {

using RealImage = Raster<double>;

GrayImage to_grayscale(const RgbImage& img);

// Normalized 1-D Gaussian taps of length kernel_size. sigma <= 0 selects
// 0.3*((kernel_size-1)*0.5 - 1) + 0.8.
std::vector<double> gaussian_kernel_1d(int kernel_size, double sigma);

// Separable convolution in real arithmetic, rounded once at the end.
RealImage gaussian_blur_real(const RealImage& img, int kernel_size, double sigma);
GrayImage gaussian_blur(const GrayImage& img, int kernel_size, double sigma);

struct NlmParams {
  double h = 10.0;
  int template_radius = 3;
  int search_radius = 10;
  double noise_sigma = 0.0;
};

// Direct non-local means; O(pixels * search^2 * template^2).
GrayImage nlm_denoise(const GrayImage& img, const NlmParams& params);

BinaryImage adaptive_threshold(const GrayImage& img, int block_size, double c);

// Intermediates kept so hysteresis can be re-derived independently.
struct CannyDetail {
  RealImage magnitude;   // Sobel gradient magnitude of the smoothed image
  std::vector<std::uint8_t> direction;  // quantized: 0,1,2,3 for 0,45,90,135 deg
  RealImage suppressed;  // magnitude after non-maximum suppression, else 0
  BinaryImage edges;
};

CannyDetail canny_detail(const GrayImage& img, double low, double high);
BinaryImage canny(const GrayImage& img, double low, double high);

enum class Stage { gray = 0, blur, denoise, thresh, canny };
inline constexpr int kStageCount = 5;
inline constexpr std::array<std::string_view, kStageCount> kStageSuffixes = {
    "_gray", "_blur", "_denoise", "_thresh", "_canny"};

std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view name);

struct PreprocessParams {
  int blur_kernel = 5;
  double blur_sigma = 0.0;
  NlmParams nlm{};
  int thresh_block = 11;
  double thresh_c = 2.0;
  double canny_low = 50.0;
  double canny_high = 150.0;
  // Canny reads the denoised image by default; set to Stage::thresh to run it
  // on the binary map instead.
  Stage canny_input = Stage::denoise;
  Stage feed_stage = Stage::denoise;
};

struct PreprocessResult {
  GrayImage gray;
  GrayImage blur;
  GrayImage denoise;
  BinaryImage thresh;
  BinaryImage canny;

  const GrayImage& stage(Stage s) const;
  // Image that feeds the classifier under params.feed_stage.
  const GrayImage& fed(const PreprocessParams& params) const { return stage(params.feed_stage); }
};

PreprocessResult preprocess_chain(const RgbImage& img, const PreprocessParams& params);
PreprocessResult preprocess_chain(const GrayImage& img, const PreprocessParams& params);

// Runs only the stages needed to produce `stage`.
GrayImage preprocess_to_stage(const GrayImage& img, const PreprocessParams& params, Stage stage);

}  // namespace almond
