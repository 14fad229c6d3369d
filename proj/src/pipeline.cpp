#include "almond/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "almond/image_io.hpp"
#include "almond/nn/loss.hpp"
#include "almond/rng.hpp"

namespace almond {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (!(optimizer.lr > 0.0) || !std::isfinite(optimizer.lr)) throw InvalidConfig("learning rate must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw InvalidFraction("val_fraction must lie in [0,1)");
  model.validate();
}

json preprocess_to_json(const PreprocessParams& p) {
  return {{"blur_kernel", p.blur_kernel},
          {"blur_sigma", p.blur_sigma},
          {"nlm_h", p.nlm.h},
          {"nlm_template_radius", p.nlm.template_radius},
          {"nlm_search_radius", p.nlm.search_radius},
          {"nlm_noise_sigma", p.nlm.noise_sigma},
          {"thresh_block", p.thresh_block},
          {"thresh_c", p.thresh_c},
          {"canny_low", p.canny_low},
          {"canny_high", p.canny_high},
          {"canny_input", std::string(stage_name(p.canny_input))},
          {"feed_stage", std::string(stage_name(p.feed_stage))}};
}

PreprocessParams preprocess_from_json(const json& j) {
  PreprocessParams p;
  try {
    p.blur_kernel = j.at("blur_kernel").get<int>();
    p.blur_sigma = j.at("blur_sigma").get<double>();
    p.nlm.h = j.at("nlm_h").get<double>();
    p.nlm.template_radius = j.at("nlm_template_radius").get<int>();
    p.nlm.search_radius = j.at("nlm_search_radius").get<int>();
    p.nlm.noise_sigma = j.at("nlm_noise_sigma").get<double>();
    p.thresh_block = j.at("thresh_block").get<int>();
    p.thresh_c = j.at("thresh_c").get<double>();
    p.canny_low = j.at("canny_low").get<double>();
    p.canny_high = j.at("canny_high").get<double>();
    p.canny_input = parse_stage(j.at("canny_input").get<std::string>());
    p.feed_stage = parse_stage(j.at("feed_stage").get<std::string>());
  } catch (const json::exception& e) {
    throw SchemaMismatch(std::string("preprocess block: ") + e.what());
  }
  return p;
}

nn::Tensor<float> image_to_input(const GrayImage& fed, const ModelConfig& model) {
  if (model.input_channels != 1) throw InvalidConfig("only single-channel models are supported");
  const GrayImage sized = (fed.width() == model.input_width && fed.height() == model.input_height)
                              ? fed
                              : resize_nearest(fed, model.input_width, model.input_height);
  nn::Tensor<float> x({1, model.input_height, model.input_width, 1});
  auto px = sized.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) x[i] = static_cast<float>(px[i]) / 255.0f;
  return x;
}

PreparedSet prepare_samples(const DatasetManifest& manifest, const ModelConfig& model,
                            const PreprocessParams& preprocess, bool whole_image) {
  const int n = static_cast<int>(manifest.size());
  const std::size_t per = static_cast<std::size_t>(model.input_height) * model.input_width * model.input_channels;
  PreparedSet set{nn::Tensor<float>({n, model.input_height, model.input_width, model.input_channels}), {}};
  set.labels.reserve(manifest.size());
  for (int i = 0; i < n; ++i) {
    Sample s = manifest.samples[i];
    if (whole_image) s.box.reset();
    const GrayImage fed = preprocess_to_stage(load_sample_image(s, manifest.base_dir), preprocess,
                                              preprocess.feed_stage);
    const nn::Tensor<float> x = image_to_input(fed, model);
    std::copy(x.values().begin(), x.values().end(), set.x.data() + per * i);
    set.labels.push_back(s.label_index);
  }
  return set;
}

int argmax(std::span<const float> row) {
  int best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = static_cast<int>(k);
  }
  return best;
}

namespace {

nn::Tensor<float> gather(const PreparedSet& set, std::span<const int> idx) {
  nn::Shape shape = set.x.shape();
  const std::size_t per = nn::Tensor<float>::count(nn::per_sample(shape));
  shape[0] = static_cast<int>(idx.size());
  nn::Tensor<float> out(shape);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    std::copy_n(set.x.data() + per * idx[b], per, out.data() + per * b);
  }
  return out;
}

void flip_sample(nn::Tensor<float>& x, int n, bool horizontal) {
  const int H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (horizontal) {
    for (int y = 0; y < H; ++y)
      for (int c0 = 0; c0 < W / 2; ++c0)
        for (int c = 0; c < C; ++c) std::swap(x.at(n, y, c0, c), x.at(n, y, W - 1 - c0, c));
  } else {
    for (int y = 0; y < H / 2; ++y)
      for (int c0 = 0; c0 < W; ++c0)
        for (int c = 0; c < C; ++c) std::swap(x.at(n, y, c0, c), x.at(n, H - 1 - y, c0, c));
  }
}

std::vector<int> labels_of(const PreparedSet& set, std::span<const int> idx) {
  std::vector<int> out;
  for (int i : idx) out.push_back(set.labels[i]);
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_history(const fs::path& path, const std::vector<EpochRecord>& history, const std::string& trailer = "") {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << format_history(history) << trailer;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

// Label sets must agree by name and order so indices mean the same class.
void require_same_classes(const std::vector<std::string>& expected, const std::vector<std::string>& got,
                          const std::string& what) {
  if (expected != got) {
    std::string a, b;
    for (const auto& s : expected) a += (a.empty() ? "" : ",") + s;
    for (const auto& s : got) b += (b.empty() ? "" : ",") + s;
    throw LabelMismatch(what + " classes [" + b + "] differ from [" + a + "]");
  }
}

}  // namespace

std::string format_history(const std::vector<EpochRecord>& history) {
  std::string out = std::string(kHistoryHeader) + "\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.train_acc) + "," + fmt(r.val_loss) + "," +
           fmt(r.val_acc) + "," + fmt(r.seconds) + "\n";
  }
  return out;
}

SetMetrics measure(nn::Sequential<float>& net, const PreparedSet& set, std::span<const double> class_weights,
                   int batch_size) {
  if (set.size() == 0) throw EmptyDataset("cannot measure an empty set");
  const int n = static_cast<int>(set.size());
  const int K = net.output_shape().at(0);
  SetMetrics m;
  m.predictions.reserve(set.size());
  double loss_sum = 0.0;
  long long correct = 0;
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    std::span<const int> chunk(idx.data() + start, static_cast<std::size_t>(end - start));
    const nn::Tensor<float> logits = net.logits(gather(set, chunk), nn::Mode::infer);
    const std::vector<int> labels = labels_of(set, chunk);
    const auto res = nn::softmax_cross_entropy(logits, nn::one_hot<float>(labels, K), class_weights);
    loss_sum += res.loss * static_cast<double>(chunk.size());
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const int p = argmax({logits.data() + b * K, static_cast<std::size_t>(K)});
      m.predictions.push_back(p);
      if (p == labels[b]) ++correct;
    }
  }
  m.loss = loss_sum / n;
  m.accuracy = static_cast<double>(correct) / n;
  return m;
}

TrainResult train(const TrainConfig& config, const DatasetManifest& train_set, const DatasetManifest& val_set) {
  config.validate();
  if (train_set.empty()) throw EmptyDataset("training manifest is empty");
  if (val_set.empty()) throw EmptyDataset("validation manifest is empty");
  train_set.validate();
  val_set.validate();
  require_same_classes(train_set.class_names, val_set.class_names, "validation");

  Model model(config.model, train_set.class_names, config.seed);
  TrainResult result;
  result.class_weights = config.class_weighted
                             ? compute_class_weights(train_set.class_counts)
                             : ClassWeights{std::vector<double>(train_set.class_names.size(), 1.0)};
  const std::span<const double> weights = result.class_weights.weights;

  const PreparedSet train_data = prepare_samples(train_set, config.model, config.preprocess, config.whole_image);
  const PreparedSet val_data = prepare_samples(val_set, config.model, config.preprocess, config.whole_image);

  fs::create_directories(config.out_dir);
  result.history_path = config.out_dir / "history.csv";
  result.best_checkpoint = config.out_dir / "best.ckpt";
  result.last_checkpoint = config.out_dir / "last.ckpt";

  Rng shuffle_rng(Rng::derive(config.seed, 0x5348554646ULL));
  Rng augment_rng(Rng::derive(config.seed, 0x4155474DULL));
  nn::OptimizerState<float> opt;
  long long step = 0;
  double best_val = -1.0;
  const int K = model.net.output_shape().at(0);
  const int n = static_cast<int>(train_data.size());
  std::vector<int> order(static_cast<std::size_t>(n));

  auto metadata = [&](int epoch, double val_acc) {
    return json{{"epoch", epoch},
                {"val_acc", val_acc},
                {"whole_image", config.whole_image},
                {"preprocess", preprocess_to_json(config.preprocess)}};
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(std::span<int>(order));

    for (int start = 0; start < n; start += config.batch_size) {
      const int end = std::min(n, start + config.batch_size);
      std::span<const int> chunk(order.data() + start, static_cast<std::size_t>(end - start));
      nn::Tensor<float> x = gather(train_data, chunk);
      if (config.augment.hflip || config.augment.vflip) {
        for (int b = 0; b < x.dim(0); ++b) {
          if (config.augment.hflip && augment_rng.below(2) == 1) flip_sample(x, b, true);
          if (config.augment.vflip && augment_rng.below(2) == 1) flip_sample(x, b, false);
        }
      }
      model.net.zero_grad();
      const nn::Tensor<float> logits = model.net.logits(x, nn::Mode::train);
      const auto res = nn::softmax_cross_entropy(logits, nn::one_hot<float>(labels_of(train_data, chunk), K), weights);
      bool diverged = !std::isfinite(res.loss);
      if (!diverged) {
        model.net.backward(res.grad);
        try {
          nn::optimizer_step(model.net.parameters(), config.optimizer, opt, ++step);
        } catch (const NonFiniteGradient&) {
          diverged = true;
        }
      }
      if (diverged) {
        const std::string where = "epoch " + std::to_string(epoch) + " batch " +
                                  std::to_string(start / config.batch_size + 1);
        write_history(result.history_path, result.history, "# aborted: non-finite loss at " + where + "\n");
        throw DivergedLoss("non-finite loss at " + where);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    const SetMetrics tm = measure(model.net, train_data, weights);
    const SetMetrics vm = measure(model.net, val_data, weights);
    rec.train_loss = tm.loss;
    rec.train_acc = tm.accuracy;
    rec.val_loss = vm.loss;
    rec.val_acc = vm.accuracy;
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
      write_history(result.history_path, result.history,
                    "# aborted: non-finite loss at epoch " + std::to_string(epoch) + " metrics\n");
      throw DivergedLoss("non-finite metric loss at epoch " + std::to_string(epoch));
    }
    if (config.record_wall_time) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    result.history.push_back(rec);

    if (rec.val_acc > best_val) {
      best_val = rec.val_acc;
      result.best_epoch = epoch;
      save_checkpoint(model, result.best_checkpoint, nullptr, metadata(epoch, rec.val_acc));
    }
    if (config.checkpoint_every_epoch) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
      save_checkpoint(model, config.out_dir / name, &opt, metadata(epoch, rec.val_acc));
    }
    write_history(result.history_path, result.history);
  }

  save_checkpoint(model, result.last_checkpoint, &opt, metadata(config.epochs, result.history.back().val_acc));
  return result;
}

EvalResult evaluate(Model& model, const DatasetManifest& test_set, const PreprocessParams& preprocess,
                    bool whole_image) {
  if (test_set.empty()) throw EmptyDataset("test manifest is empty");
  require_same_classes(model.class_names, test_set.class_names, "test manifest");
  test_set.validate();
  const PreparedSet data = prepare_samples(test_set, model.config, preprocess, whole_image);
  const SetMetrics m = measure(model.net, data, {});
  EvalResult r{confusion_from_predictions(data.labels, m.predictions, model.net.output_shape().at(0)), {},
               m.predictions};
  r.report = metrics_from_confusion(r.matrix, model.class_names);
  return r;
}

namespace {

PreprocessParams recorded_preprocess(const Checkpoint& ck) {
  if (ck.metadata.contains("preprocess")) return preprocess_from_json(ck.metadata.at("preprocess"));
  return PreprocessParams{};
}

}  // namespace

EvalResult evaluate(const fs::path& checkpoint, const DatasetManifest& test_set, const EvalOptions& options) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  Model model = model_from_checkpoint(ck);
  return evaluate(model, test_set, options.preprocess.value_or(recorded_preprocess(ck)), options.whole_image);
}

Prediction predict(Model& model, const RgbImage& image, const PreprocessParams& preprocess) {
  const GrayImage fed = preprocess_to_stage(to_grayscale(image), preprocess, preprocess.feed_stage);
  const nn::Tensor<float> probs = model.net.forward(image_to_input(fed, model.config), nn::Mode::infer);
  Prediction p;
  p.label_index = argmax(probs.values());
  p.label = model.class_names.at(static_cast<std::size_t>(p.label_index));
  for (float v : probs.values()) p.probabilities.push_back(v);
  return p;
}

Prediction predict(const fs::path& checkpoint, const fs::path& image, const std::optional<PreprocessParams>& preprocess) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  Model model = model_from_checkpoint(ck);
  return predict(model, read_rgb(image), preprocess.value_or(recorded_preprocess(ck)));
}

}  // namespace almond
