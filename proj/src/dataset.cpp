#include "almond/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include <json.hpp>

#include "almond/image_io.hpp"
#include "almond/rng.hpp"

namespace almond {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::all: return "all";
  }
  return "all";
}

Split parse_split(std::string_view name) {
  for (Split s : {Split::train, Split::val, Split::test, Split::all}) {
    if (split_name(s) == name) return s;
  }
  throw SchemaMismatch("unknown split tag '" + std::string(name) + "'");
}

void DatasetManifest::recount() {
  class_counts.assign(class_names.size(), 0);
  for (const auto& s : samples) {
    if (s.label_index < 0 || s.label_index >= num_classes()) {
      throw SchemaMismatch("sample label index " + std::to_string(s.label_index) + " out of range");
    }
    ++class_counts[s.label_index];
  }
}

void DatasetManifest::validate() const {
  std::set<std::string> seen(class_names.begin(), class_names.end());
  if (seen.size() != class_names.size()) throw SchemaMismatch("duplicate class names");
  if (class_counts.size() != class_names.size()) throw SchemaMismatch("class_counts length mismatch");
  std::vector<long long> counts(class_names.size(), 0);
  for (const auto& s : samples) {
    if (s.label_index < 0 || s.label_index >= num_classes() ||
        class_names[s.label_index] != s.label_name) {
      throw SchemaMismatch("sample label '" + s.label_name + "' disagrees with class table");
    }
    ++counts[s.label_index];
  }
  if (counts != class_counts) throw SchemaMismatch("class_counts do not match samples");
}

ClassWeights compute_class_weights(std::span<const long long> class_counts) {
  if (class_counts.empty()) throw EmptyClass("no classes");
  long long total = 0;
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    if (class_counts[c] <= 0) throw EmptyClass("class " + std::to_string(c) + " has no samples");
    total += class_counts[c];
  }
  ClassWeights w;
  const double k = static_cast<double>(class_counts.size());
  for (auto n : class_counts) w.weights.push_back(static_cast<double>(total) / (k * static_cast<double>(n)));
  return w;
}

long long round_half_down(double x) { return static_cast<long long>(std::ceil(x - 0.5)); }

SplitResult split_dataset(const DatasetManifest& manifest, double val_fraction, double test_fraction,
                          std::uint64_t seed) {
  auto in_range = [](double f) { return f >= 0.0 && f < 1.0; };
  if (!in_range(val_fraction) || !in_range(test_fraction) || val_fraction + test_fraction >= 1.0) {
    throw InvalidFraction("fractions must lie in [0,1) and sum below 1");
  }

  SplitResult out;
  for (auto* part : {&out.train, &out.val, &out.test}) {
    part->class_names = manifest.class_names;
    part->base_dir = manifest.base_dir;
  }
  out.train.split = Split::train;
  out.val.split = Split::val;
  out.test.split = Split::test;

  for (int c = 0; c < manifest.num_classes(); ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
      if (manifest.samples[i].label_index == c) idx.push_back(i);
    }
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(std::span<std::size_t>(idx));

    const long long n = static_cast<long long>(idx.size());
    const long long n_test = round_half_down(test_fraction * static_cast<double>(n));
    const long long n_val = round_half_down(val_fraction * static_cast<double>(n - n_test));
    const long long n_train = n - n_test - n_val;
    if (n_train < 1 || (test_fraction > 0 && n_test < 1) || (val_fraction > 0 && n_val < 1)) {
      throw TooFewSamples("class '" + manifest.class_names[c] + "' has " + std::to_string(n) +
                          " samples, too few for the requested partitions");
    }
    for (long long k = 0; k < n; ++k) {
      DatasetManifest& dst = k < n_test ? out.test : (k < n_test + n_val ? out.val : out.train);
      dst.samples.push_back(manifest.samples[idx[static_cast<std::size_t>(k)]]);
    }
  }
  out.train.recount();
  out.val.recount();
  out.test.recount();
  return out;
}

namespace {

GrayImage synth_image(int label, int h, int w, std::uint64_t sample_seed) {
  Rng rng(sample_seed);
  const double background = rng.uniform(30.0, 90.0);
  const double foreground = rng.uniform(150.0, 230.0);
  const double cy = rng.uniform(0.38, 0.62) * h;
  const double cx = rng.uniform(0.38, 0.62) * w;
  const double ay = rng.uniform(0.22, 0.36) * h;
  const double ax = rng.uniform(0.22, 0.36) * w;
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double ring = rng.uniform(0.35, 0.55);  // inner radius as a fraction of the outer
  const double noise = 12.0;
  const double ct = std::cos(theta), st = std::sin(theta);

  GrayImage img(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double dy = r + 0.5 - cy, dx = c + 0.5 - cx;
      const double u = (dx * ct + dy * st) / ax;
      const double v = (-dx * st + dy * ct) / ay;
      const double rho = std::sqrt(u * u + v * v);
      const bool inside = label == 0 ? rho <= 1.0 : (rho <= 1.0 && rho >= ring);
      const double value = (inside ? foreground : background) + noise * rng.normal();
      img.at(r, c) = static_cast<std::uint8_t>(std::clamp(std::round(value), 0.0, 255.0));
    }
  }
  return img;
}

std::string sample_stem(std::string_view label, int index) {
  std::string num = std::to_string(index);
  if (num.size() < 4) num.insert(0, 4 - num.size(), '0');
  return std::string(label) + "_" + num;
}

}  // namespace

DatasetManifest generate_synthetic(int n_per_class, int height, int width, std::uint64_t seed) {
  if (n_per_class < 1) throw InvalidSize("n_per_class must be >= 1");
  if (height < 16 || width < 16) throw InvalidSize("synthetic images must be at least 16x16");

  DatasetManifest m;
  m.class_names = {std::string(kAlmondLabel), std::string(kShellLabel)};
  m.split = Split::all;
  for (int i = 0; i < n_per_class; ++i) {
    for (int label = 0; label < 2; ++label) {
      const auto k = static_cast<std::uint64_t>(2 * i + label);
      Sample s;
      s.label_index = label;
      s.label_name = m.class_names[label];
      s.path = "images/" + sample_stem(s.label_name, i) + ".pgm";
      s.image = synth_image(label, height, width, Rng::derive(seed, k));
      m.samples.push_back(std::move(s));
    }
  }
  m.recount();
  return m;
}

void write_sample_images(DatasetManifest& manifest, const fs::path& out_dir) {
  fs::create_directories(out_dir / "images");
  for (auto& s : manifest.samples) {
    if (!s.image) continue;
    if (s.path.empty()) throw IoError("in-memory sample has no target path");
    write_pgm(out_dir / s.path, *s.image);
  }
  manifest.base_dir = out_dir;
}

DatasetManifest manifest_from_annotations(const std::vector<AnnotatedImage>& pairs,
                                          std::vector<std::string> class_names) {
  if (class_names.empty()) {
    std::set<std::string> labels;
    for (const auto& p : pairs) {
      for (const auto& o : p.annotation.objects) labels.insert(o.label);
    }
    class_names.assign(labels.begin(), labels.end());
  }
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < class_names.size(); ++i) index[class_names[i]] = static_cast<int>(i);

  DatasetManifest m;
  m.class_names = class_names;
  for (const auto& p : pairs) {
    for (const auto& o : p.annotation.objects) {
      auto it = index.find(o.label);
      if (it == index.end()) throw LabelMismatch("label '" + o.label + "' not in class list");
      Sample s;
      s.path = p.image_path.string();
      s.box = o.box;
      s.label_index = it->second;
      s.label_name = o.label;
      m.samples.push_back(std::move(s));
    }
  }
  m.recount();
  return m;
}

GrayImage load_sample_image(const Sample& sample, const fs::path& base_dir) {
  if (sample.image) return *sample.image;
  if (sample.path.empty()) throw IoError("sample has neither pixels nor a path");
  fs::path p(sample.path);
  if (p.is_relative()) p = base_dir / p;
  GrayImage img = read_gray(p);
  if (!sample.box) return img;
  Annotation one{p.filename().string(), img.width(), img.height(), {{sample.label_name, *sample.box}}};
  return extract_crops(img, one).front().image;
}

namespace {

// Re-express a sample path relative to the directory the manifest is written to.
std::string portable_path(const std::string& path, const fs::path& from_dir, const fs::path& to_dir) {
  if (path.empty()) return path;
  fs::path p(path);
  if (p.is_relative()) p = from_dir / p;
  p = fs::absolute(p).lexically_normal();
  const fs::path rel = p.lexically_relative(fs::absolute(to_dir).lexically_normal());
  return rel.empty() ? p.generic_string() : rel.generic_string();
}

}  // namespace

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  m.validate();
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  if (!dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());

  json header = {{"format", "almond-manifest"},
                 {"version", kManifestVersion},
                 {"split", split_name(m.split)},
                 {"class_names", m.class_names}};
  out << header.dump() << '\n';
  for (const auto& s : m.samples) {
    json rec = {{"split", split_name(m.split)},
                {"label", s.label_name},
                {"path", portable_path(s.path, m.base_dir.empty() ? fs::path(".") : m.base_dir, dir)}};
    if (s.box) rec["box"] = {s.box->xmin, s.box->ymin, s.box->xmax, s.box->ymax};
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  DatasetManifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::string line;
  if (!std::getline(in, line)) throw SchemaMismatch(path.string() + ": empty manifest file");
  try {
    const json header = json::parse(line);
    if (header.value("format", "") != "almond-manifest") throw SchemaMismatch("not a manifest file");
    const std::string version = header.value("version", "");
    if (version != kManifestVersion) throw SchemaMismatch("unknown manifest version '" + version + "'");
    m.split = parse_split(header.at("split").get<std::string>());
    m.class_names = header.at("class_names").get<std::vector<std::string>>();

    std::map<std::string, int> index;
    for (std::size_t i = 0; i < m.class_names.size(); ++i) index[m.class_names[i]] = static_cast<int>(i);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json rec = json::parse(line);
      Sample s;
      s.label_name = rec.at("label").get<std::string>();
      auto it = index.find(s.label_name);
      if (it == index.end()) throw SchemaMismatch("label '" + s.label_name + "' not in header");
      s.label_index = it->second;
      s.path = rec.at("path").get<std::string>();
      if (rec.contains("box")) {
        const auto b = rec.at("box").get<std::vector<int>>();
        if (b.size() != 4) throw SchemaMismatch("box must have 4 coordinates");
        s.box = BBox{b[0], b[1], b[2], b[3]};
      }
      if (parse_split(rec.at("split").get<std::string>()) != m.split) {
        throw SchemaMismatch("record split differs from header split");
      }
      m.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw SchemaMismatch(path.string() + ": " + e.what());
  }
  m.recount();
  return m;
}

}  // namespace almond
