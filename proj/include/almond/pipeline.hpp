#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "almond/almondnet.hpp"
#include "almond/dataset.hpp"
#include "almond/imageproc.hpp"
#include "almond/metrics.hpp"

namespace almond {

// Random flips applied per training sample. Off by default.
struct AugmentOptions {
  bool hflip = false;
  bool vflip = false;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  nn::OptimizerConfig optimizer;
  std::uint64_t seed = 42;
  // Used by callers that carve validation out of a single training manifest.
  double val_fraction = 0.2;
  PreprocessParams preprocess;  // preprocess.feed_stage picks the network input
  ModelConfig model = mini_config();
  std::filesystem::path out_dir = "run";
  bool class_weighted = true;
  bool whole_image = false;
  bool checkpoint_every_epoch = false;
  // When false the seconds column is written as 0 so history files are
  // byte-reproducible.
  bool record_wall_time = false;
  AugmentOptions augment;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path history_path;
  int best_epoch = 0;
  ClassWeights class_weights;
};

inline constexpr const char* kHistoryHeader = "epoch,train_loss,train_acc,val_loss,val_acc,seconds";

// Writes out_dir/history.csv after every epoch, out_dir/best.ckpt whenever
// validation accuracy strictly improves, and out_dir/last.ckpt at the end.
// A non-finite batch loss appends an abort line to the history and throws
// DivergedLoss; best.ckpt from earlier epochs is left in place.
TrainResult train(const TrainConfig& config, const DatasetManifest& train_set, const DatasetManifest& val_set);

std::string format_history(const std::vector<EpochRecord>& history);

// Network-ready inputs: N x H x W x 1, pixel / 255.
struct PreparedSet {
  nn::Tensor<float> x;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

nn::Tensor<float> image_to_input(const GrayImage& fed, const ModelConfig& model);
PreparedSet prepare_samples(const DatasetManifest& manifest, const ModelConfig& model,
                            const PreprocessParams& preprocess, bool whole_image);

struct SetMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;
};

// Infer-mode pass in fixed batches; the loss uses the same class weights as
// training (empty span means unweighted).
SetMetrics measure(nn::Sequential<float>& net, const PreparedSet& set, std::span<const double> class_weights,
                   int batch_size = 64);

// Index of the largest value; ties go to the lower index.
int argmax(std::span<const float> row);

struct EvalOptions {
  bool whole_image = false;
  // Overrides the preprocessing recorded in the checkpoint.
  std::optional<PreprocessParams> preprocess;
};

struct EvalResult {
  ConfusionMatrix matrix;
  EvalReport report;
  std::vector<int> predictions;
};

EvalResult evaluate(const std::filesystem::path& checkpoint, const DatasetManifest& test_set,
                    const EvalOptions& options = {});
EvalResult evaluate(Model& model, const DatasetManifest& test_set, const PreprocessParams& preprocess,
                    bool whole_image = false);

struct Prediction {
  int label_index = 0;
  std::string label;
  std::vector<double> probabilities;
};

Prediction predict(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                   const std::optional<PreprocessParams>& preprocess = std::nullopt);
Prediction predict(Model& model, const RgbImage& image, const PreprocessParams& preprocess);

nlohmann::json preprocess_to_json(const PreprocessParams& p);
PreprocessParams preprocess_from_json(const nlohmann::json& j);

}  // namespace almond
