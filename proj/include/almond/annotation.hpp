#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "almond/image.hpp"

namespace almond {

// Pixel box, origin top-left; min inclusive, max exclusive.
struct BBox {
  int xmin = 0, ymin = 0, xmax = 0, ymax = 0;

  int width() const { return xmax - xmin; }
  int height() const { return ymax - ymin; }
  bool valid() const { return xmin >= 0 && ymin >= 0 && xmin < xmax && ymin < ymax; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct AnnotatedObject {
  std::string label;
  BBox box;
  friend bool operator==(const AnnotatedObject&, const AnnotatedObject&) = default;
};

struct Annotation {
  std::string image_filename;
  int image_width = 0;
  int image_height = 0;
  std::vector<AnnotatedObject> objects;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct VocOptions {
  // Some LabelImg versions write 1-based inclusive corners. When set, xmin and
  // ymin are shifted down by one; xmax/ymax already equal the 0-based
  // exclusive bound in that convention.
  bool one_based = false;
};

Annotation parse_voc_xml(std::string_view xml_text, const VocOptions& options = {});
Annotation read_voc_file(const std::filesystem::path& path, const VocOptions& options = {});

// Serializes in the layout LabelImg writes (0-based coordinates).
std::string to_voc_xml(const Annotation& annotation);

struct LabeledCrop {
  std::string label;
  GrayImage image;
};

std::vector<LabeledCrop> extract_crops(const GrayImage& image, const Annotation& annotation);

struct ScanIssue {
  std::filesystem::path annotation_file;
  std::string kind;  // error class name, e.g. "MissingImage"
  std::string message;
};

struct AnnotatedImage {
  std::filesystem::path image_path;
  Annotation annotation;
};

struct ScanResult {
  std::vector<AnnotatedImage> pairs;  // sorted by image filename
  std::vector<ScanIssue> issues;      // per-file failures; the scan continues past them
};

ScanResult scan_dataset(const std::filesystem::path& image_dir,
                        const std::filesystem::path& annotation_dir,
                        const VocOptions& options = {});

}  // namespace almond
