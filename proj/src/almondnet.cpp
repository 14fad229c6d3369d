#include "almond/almondnet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace almond {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::LayerKind;
using nn::LayerSpec;

namespace {

struct Block {
  int filters;
  int pool;
  int pool_stride;
};

// The seven conv/pool blocks at multiplier 1.
constexpr Block kBlocks[kFullConvBlocks] = {
    {64, 2, 2}, {128, 2, 2}, {512, 2, 2}, {256, 2, 2}, {256, 3, 3}, {128, 2, 2}, {128, 2, 2},
};
constexpr int kDenseWidth = 64;
constexpr int kSpatialDropoutAfterBlock = 1;

int scaled(int base, double multiplier) { return std::max(1, static_cast<int>(std::lround(base * multiplier))); }

constexpr char kMagic[] = "ALMONDNET-CHECKPOINT";

}  // namespace

void ModelConfig::validate() const {
  if (input_height < 1 || input_width < 1 || input_channels < 1) throw InvalidConfig("input dims must be >= 1");
  if (!(multiplier > 0.0)) throw InvalidConfig("channel multiplier must be positive");
  if (conv_blocks < 1 || conv_blocks > kFullConvBlocks) throw InvalidConfig("conv_blocks must be in [1,7]");
  if (kernel < 1) throw InvalidConfig("kernel must be >= 1");
  if (!(spatial_dropout >= 0.0 && spatial_dropout < 1.0) || !(dropout >= 0.0 && dropout < 1.0)) {
    throw InvalidRate("dropout rates must be in [0,1)");
  }
}

ModelConfig full_config() { return ModelConfig{}; }

ModelConfig mini_config() {
  ModelConfig c;
  c.name = "mini-v1";
  c.input_height = 32;
  c.input_width = 32;
  c.multiplier = 0.25;
  c.conv_blocks = 4;
  return c;
}

std::vector<int> conv_filters(const ModelConfig& config) {
  std::vector<int> out;
  for (int b = 0; b < config.conv_blocks; ++b) out.push_back(scaled(kBlocks[b].filters, config.multiplier));
  return out;
}

int dense_width(const ModelConfig& config) { return scaled(kDenseWidth, config.multiplier); }

std::vector<LayerSpec> build_almondnet20(const ModelConfig& config) {
  config.validate();
  std::vector<LayerSpec> specs;
  const auto filters = conv_filters(config);
  for (int b = 0; b < config.conv_blocks; ++b) {
    specs.push_back(LayerSpec::conv(filters[b], config.kernel));
    specs.push_back(LayerSpec::relu());
    specs.push_back(LayerSpec::maxpool(kBlocks[b].pool, kBlocks[b].pool_stride));
    if (b == kSpatialDropoutAfterBlock) specs.push_back(LayerSpec::spatial_dropout(config.spatial_dropout));
  }
  specs.push_back(LayerSpec::dropout(config.dropout));
  specs.push_back(LayerSpec::flatten());
  specs.push_back(LayerSpec::dense(dense_width(config)));
  specs.push_back(LayerSpec::relu());
  specs.push_back(LayerSpec::batchnorm());
  specs.push_back(LayerSpec::dense(kNumOutputs));
  specs.push_back(LayerSpec::softmax());

  shape_trace(specs, {config.input_height, config.input_width, config.input_channels});
  return specs;
}

ShapeTrace shape_trace(const std::vector<LayerSpec>& specs, const nn::Shape& input) {
  ShapeTrace t;
  t.input = input;
  nn::Shape shape = input;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const nn::ParamCounts pc = nn::param_counts(specs[i], shape);
    shape = nn::output_shape(specs[i], shape);
    t.rows.push_back({static_cast<int>(i), specs[i], shape, pc});
    t.learnable += pc.learnable;
    t.non_learnable += pc.non_learnable;
  }
  return t;
}

std::vector<std::pair<int, int>> ShapeTrace::spatial_cascade() const {
  std::vector<std::pair<int, int>> out{{input.at(0), input.at(1)}};
  for (const auto& r : rows) {
    if (r.spec.kind == LayerKind::maxpool2d) out.emplace_back(r.output[0], r.output[1]);
  }
  return out;
}

int ShapeTrace::flatten_width() const {
  for (const auto& r : rows) {
    if (r.spec.kind == LayerKind::flatten) return r.output.at(0);
  }
  return 0;
}

std::string ShapeTrace::table() const {
  std::ostringstream out;
  out << std::left << std::setw(4) << "#" << std::setw(34) << "layer" << std::setw(16) << "output"
      << "params\n";
  out << std::setw(4) << "-" << std::setw(34) << "input" << std::setw(16) << nn::shape_str(input) << "0\n";
  for (const auto& r : rows) {
    out << std::setw(4) << r.index << std::setw(34) << r.spec.describe() << std::setw(16) << nn::shape_str(r.output)
        << r.params.learnable + r.params.non_learnable << "\n";
  }
  out << "learnable parameters: " << learnable << "\n";
  out << "non-learnable parameters: " << non_learnable << "\n";
  return out.str();
}

Model::Model(ModelConfig cfg, std::vector<std::string> classes, std::uint64_t seed)
    : config(std::move(cfg)),
      class_names(std::move(classes)),
      net(build_almondnet20(config), {config.input_height, config.input_width, config.input_channels}, seed) {
  if (class_names.size() != kNumOutputs) {
    throw InvalidConfig("model needs exactly " + std::to_string(kNumOutputs) + " class names");
  }
}

json config_to_json(const ModelConfig& c) {
  return {{"name", c.name},
          {"input_height", c.input_height},
          {"input_width", c.input_width},
          {"input_channels", c.input_channels},
          {"multiplier", c.multiplier},
          {"spatial_dropout", c.spatial_dropout},
          {"dropout", c.dropout},
          {"kernel", c.kernel},
          {"conv_blocks", c.conv_blocks}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.name = j.at("name").get<std::string>();
  c.input_height = j.at("input_height").get<int>();
  c.input_width = j.at("input_width").get<int>();
  c.input_channels = j.at("input_channels").get<int>();
  c.multiplier = j.at("multiplier").get<double>();
  c.spatial_dropout = j.at("spatial_dropout").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.kernel = j.at("kernel").get<int>();
  c.conv_blocks = j.at("conv_blocks").get<int>();
  return c;
}

namespace {

void append_le(std::string& blob, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

float read_le(const char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<float>(bits);
}

json add_blob(std::string& blob, const std::string& name, const nn::Tensor<float>& t) {
  json entry = {{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}, {"count", t.size()}};
  for (float v : t.values()) append_le(blob, v);
  return entry;
}

std::string param_name(std::size_t layer, const nn::LayerSpec& spec, const std::string& leaf) {
  return "layer" + std::to_string(layer) + "." + std::string(nn::kind_name(spec.kind)) + "." + leaf;
}

}  // namespace

void save_checkpoint(const Model& model, const fs::path& path, const nn::OptimizerState<float>* optimizer,
                     const json& metadata) {
  auto& net = const_cast<nn::Sequential<float>&>(model.net);
  std::string blob;
  json layers = json::array();
  for (std::size_t li = 0; li < net.layer_count(); ++li) {
    for (nn::Param<float>* p : net.layer(li).params()) {
      layers.push_back(add_blob(blob, param_name(li, net.layer(li).spec(), p->name), p->value));
    }
  }
  json header = {{"version", kCheckpointVersion},
                 {"config", config_to_json(model.config)},
                 {"class_names", model.class_names},
                 {"seed", net.seed()},
                 {"layers", layers},
                 {"metadata", metadata}};
  if (optimizer != nullptr) {
    json moments = json::array();
    for (std::size_t k = 0; k < optimizer->m.size(); ++k) {
      moments.push_back(add_blob(blob, "adam.m." + std::to_string(k), optimizer->m[k]));
      moments.push_back(add_blob(blob, "adam.v." + std::to_string(k), optimizer->v[k]));
    }
    header["optimizer"] = {{"step", optimizer->step}, {"moments", moments}};
  }
  header["blob_bytes"] = blob.size();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << kMagic << '\n' << header.dump() << '\n';
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic, header_line;
  if (!std::getline(in, magic) || magic != kMagic) throw IoError(path.string() + ": not a checkpoint file");
  if (!std::getline(in, header_line)) throw IoError(path.string() + ": truncated header");
  std::string blob{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

  Checkpoint ck;
  try {
    const json header = json::parse(header_line);
    ck.version = header.at("version").get<int>();
    if (ck.version != kCheckpointVersion) {
      throw VersionMismatch("checkpoint version " + std::to_string(ck.version) + ", expected " +
                            std::to_string(kCheckpointVersion));
    }
    const auto blob_bytes = header.at("blob_bytes").get<std::size_t>();
    if (blob.size() != blob_bytes) {
      throw IoError(path.string() + ": parameter blob is " + std::to_string(blob.size()) + " bytes, header says " +
                    std::to_string(blob_bytes));
    }
    ck.config = config_from_json(header.at("config"));
    ck.class_names = header.at("class_names").get<std::vector<std::string>>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.metadata = header.value("metadata", json::object());

    auto read_blob = [&](const json& e) {
      ParamBlob b;
      b.name = e.at("name").get<std::string>();
      b.shape = e.at("shape").get<nn::Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      if (count != nn::Tensor<float>::count(b.shape) || offset + 4 * count > blob.size()) {
        throw IoError(path.string() + ": blob entry " + b.name + " out of bounds");
      }
      b.values.resize(count);
      for (std::size_t i = 0; i < count; ++i) b.values[i] = read_le(blob.data() + offset + 4 * i);
      return b;
    };
    for (const auto& e : header.at("layers")) ck.params.push_back(read_blob(e));
    if (header.contains("optimizer")) {
      nn::OptimizerState<float> st;
      st.step = header["optimizer"].at("step").get<long long>();
      for (const auto& e : header["optimizer"].at("moments")) {
        ParamBlob b = read_blob(e);
        nn::Tensor<float> t(b.shape, std::move(b.values));
        (b.name.rfind("adam.m.", 0) == 0 ? st.m : st.v).push_back(std::move(t));
      }
      ck.optimizer = std::move(st);
    }
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": bad checkpoint header: " + e.what());
  }
  return ck;
}

void load_parameters(Model& model, const Checkpoint& ck) {
  if (!(ck.config == model.config)) {
    throw ShapeMismatch("checkpoint config '" + ck.config.name + "' (multiplier " + std::to_string(ck.config.multiplier) +
                        ") does not match model config '" + model.config.name + "'");
  }
  auto params = model.net.parameters();
  if (params.size() != ck.params.size()) throw ShapeMismatch("checkpoint parameter count differs from model");
  // Validate everything before touching the model so a failure leaves it intact.
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.shape() != ck.params[i].shape) {
      throw ShapeMismatch("blob " + ck.params[i].name + " has shape " + nn::shape_str(ck.params[i].shape) +
                          ", model expects " + nn::shape_str(params[i]->value.shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.storage() = ck.params[i].values;
}

Model model_from_checkpoint(const Checkpoint& ck) {
  Model m(ck.config, ck.class_names, ck.seed);
  load_parameters(m, ck);
  return m;
}

}  // namespace almond
