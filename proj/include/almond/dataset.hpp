#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "almond/annotation.hpp"
#include "almond/image.hpp"

namespace almond {

enum class Split { train, val, test, all };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct Sample {
  std::string path;            // image file; relative paths resolve against the manifest dir
  std::optional<BBox> box;     // crop region inside `path`, when built from annotations
  std::optional<GrayImage> image;  // in-memory pixels (synthetic data); never serialized
  int label_index = 0;
  std::string label_name;
};

struct DatasetManifest {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;
  std::vector<long long> class_counts;
  Split split = Split::all;
  std::filesystem::path base_dir;  // where relative sample paths live

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
  void recount();
  // Throws SchemaMismatch when labels/indices/names disagree.
  void validate() const;
};

struct ClassWeights {
  std::vector<double> weights;
};

// w_c = n_total / (n_classes * count_c).
ClassWeights compute_class_weights(std::span<const long long> class_counts);

struct SplitResult {
  DatasetManifest train, val, test;
};

// Stratified: per class, shuffle with a seeded stream, take
// round_half_down(test_fraction * n) for test, then
// round_half_down(val_fraction * remaining) for val; the rest is train.
SplitResult split_dataset(const DatasetManifest& manifest, double val_fraction,
                          double test_fraction, std::uint64_t seed);

long long round_half_down(double x);

inline constexpr std::string_view kAlmondLabel = "almond";
inline constexpr std::string_view kShellLabel = "shell";

// Class 0 "almond": filled ellipse; class 1 "shell": elliptical ring. Random
// pose/size/intensity on a flat background plus Gaussian pixel noise. Each
// image depends only on (seed, sample index), so generation order is free.
DatasetManifest generate_synthetic(int n_per_class, int height, int width, std::uint64_t seed);

// Writes in-memory sample images as PGM under out_dir/images and points the
// manifest paths at them (relative to out_dir).
void write_sample_images(DatasetManifest& manifest, const std::filesystem::path& out_dir);

// One sample per annotated object; class names are the sorted distinct labels
// unless `class_names` fixes them.
DatasetManifest manifest_from_annotations(const std::vector<AnnotatedImage>& pairs,
                                          std::vector<std::string> class_names = {});

// Pixels of a sample: in-memory image, else the file (cropped to `box`).
GrayImage load_sample_image(const Sample& sample, const std::filesystem::path& base_dir);

// Header line (format, version, split, class names) then one JSON record per
// sample: {"split", "label", "path"[, "box"]}.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

inline constexpr std::string_view kManifestVersion = "v1";

}  // namespace almond
