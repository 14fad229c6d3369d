#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "almond/nn/optimizer.hpp"
#include "almond/nn/sequential.hpp"

namespace almond {

struct ModelConfig {
  std::string name = "almondnet20";
  int input_height = 210;
  int input_width = 320;
  int input_channels = 1;
  // Scales every conv filter count and the hidden dense width (rounded, min 1).
  double multiplier = 1.0;
  double spatial_dropout = 0.2;
  double dropout = 0.5;
  int kernel = 3;
  // How many of the seven conv/pool blocks to keep; 7 is the full stack.
  int conv_blocks = 7;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Full seven-block network on 210x320x1 inputs.
ModelConfig full_config();
// Desk-scale variant "mini-v1": 32x32 input, multiplier 0.25, first four blocks.
ModelConfig mini_config();

inline constexpr int kFullConvBlocks = 7;
inline constexpr int kNumOutputs = 2;

// Conv(64)+ReLU, MaxPool(2) | Conv(128)+ReLU, MaxPool(2), SpatialDropout |
// Conv(512)+ReLU, MaxPool(2) | Conv(256)+ReLU, MaxPool(2, stride 2) |
// Conv(256)+ReLU, MaxPool(3) | Conv(128)+ReLU, MaxPool(2) |
// Conv(128)+ReLU, MaxPool(2) | Dropout, Flatten, Dense(64)+ReLU, BatchNorm,
// Dense(2), Softmax. Throws ShapeUnderflow if a pool would not fit.
std::vector<nn::LayerSpec> build_almondnet20(const ModelConfig& config);

// Filter counts of the retained conv blocks after scaling.
std::vector<int> conv_filters(const ModelConfig& config);
int dense_width(const ModelConfig& config);

struct TraceRow {
  int index = 0;
  nn::LayerSpec spec;
  nn::Shape output;
  nn::ParamCounts params;
};

struct ShapeTrace {
  nn::Shape input;
  std::vector<TraceRow> rows;
  long long learnable = 0;
  long long non_learnable = 0;

  // H x W after the input and after each max-pool.
  std::vector<std::pair<int, int>> spatial_cascade() const;
  int flatten_width() const;
  const nn::Shape& final_shape() const { return rows.back().output; }
  std::string table() const;
};

ShapeTrace shape_trace(const std::vector<nn::LayerSpec>& specs, const nn::Shape& input);

struct Model {
  ModelConfig config;
  std::vector<std::string> class_names;
  nn::Sequential<float> net;

  Model(ModelConfig cfg, std::vector<std::string> classes, std::uint64_t seed);
  nn::Shape input_shape() const { return {config.input_height, config.input_width, config.input_channels}; }
};

struct ParamBlob {
  std::string name;
  nn::Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  int version = 1;
  ModelConfig config;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
  std::vector<ParamBlob> params;
  std::optional<nn::OptimizerState<float>> optimizer;
  nlohmann::json metadata = nlohmann::json::object();
};

inline constexpr int kCheckpointVersion = 1;

// Header line "ALMONDNET-CHECKPOINT", one JSON header line (version, config,
// class names, layer table with shapes and byte offsets), then the raw
// little-endian float32 blob. Written to a temp file and renamed into place.
void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     const nn::OptimizerState<float>* optimizer = nullptr,
                     const nlohmann::json& metadata = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint parameters into `model`; ShapeMismatch unless the config
// and every blob shape match.
void load_parameters(Model& model, const Checkpoint& ckpt);
Model model_from_checkpoint(const Checkpoint& ckpt);

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

}  // namespace almond
