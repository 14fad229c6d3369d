#include "almond/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

namespace almond {

namespace pt = boost::property_tree;

namespace {

const pt::ptree& required_child(const pt::ptree& node, const std::string& path) {
  auto child = node.get_child_optional(path);
  if (!child) throw MissingField("missing <" + path + ">");
  return *child;
}

std::string trimmed(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// VOC files in the wild sometimes carry "12.0"; those round to the nearest pixel.
int required_int(const pt::ptree& node, const std::string& path) {
  const std::string text = trimmed(required_child(node, path).data());
  if (text.empty()) throw MissingField("empty <" + path + ">");
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || !std::isfinite(value)) {
    throw MalformedXml("<" + path + "> is not a number: '" + text + "'");
  }
  return static_cast<int>(std::lround(value));
}

}  // namespace

Annotation parse_voc_xml(std::string_view xml_text, const VocOptions& options) {
  pt::ptree doc;
  try {
    std::istringstream in{std::string(xml_text)};
    pt::read_xml(in, doc, pt::xml_parser::trim_whitespace);
  } catch (const pt::xml_parser_error& e) {
    throw MalformedXml(e.what());
  }

  const pt::ptree& root = required_child(doc, "annotation");
  Annotation ann;
  ann.image_filename = trimmed(required_child(root, "filename").data());
  if (ann.image_filename.empty()) throw MissingField("empty <filename>");
  ann.image_width = required_int(root, "size.width");
  ann.image_height = required_int(root, "size.height");
  if (ann.image_width <= 0 || ann.image_height <= 0) {
    throw MalformedXml("image size must be positive");
  }

  const int shift = options.one_based ? 1 : 0;
  for (const auto& [key, node] : root) {
    if (key != "object") continue;
    AnnotatedObject obj;
    obj.label = trimmed(required_child(node, "name").data());
    if (obj.label.empty()) throw MissingField("empty <object><name>");
    const pt::ptree& bb = required_child(node, "bndbox");
    BBox box{required_int(bb, "xmin") - shift, required_int(bb, "ymin") - shift,
             required_int(bb, "xmax"), required_int(bb, "ymax")};
    box.xmin = std::clamp(box.xmin, 0, ann.image_width);
    box.xmax = std::clamp(box.xmax, 0, ann.image_width);
    box.ymin = std::clamp(box.ymin, 0, ann.image_height);
    box.ymax = std::clamp(box.ymax, 0, ann.image_height);
    if (!box.valid()) {
      throw InvalidBox("object '" + obj.label + "' box (" + std::to_string(box.xmin) + "," +
                       std::to_string(box.ymin) + "," + std::to_string(box.xmax) + "," +
                       std::to_string(box.ymax) + ") is empty after clamping");
    }
    obj.box = box;
    ann.objects.push_back(std::move(obj));
  }
  return ann;
}

Annotation read_voc_file(const std::filesystem::path& path, const VocOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_voc_xml(ss.str(), options);
}

std::string to_voc_xml(const Annotation& ann) {
  pt::ptree root;
  root.put("folder", "");
  root.put("filename", ann.image_filename);
  root.put("size.width", ann.image_width);
  root.put("size.height", ann.image_height);
  root.put("size.depth", 1);
  root.put("segmented", 0);
  for (const auto& obj : ann.objects) {
    pt::ptree node;
    node.put("name", obj.label);
    node.put("pose", "Unspecified");
    node.put("truncated", 0);
    node.put("difficult", 0);
    node.put("bndbox.xmin", obj.box.xmin);
    node.put("bndbox.ymin", obj.box.ymin);
    node.put("bndbox.xmax", obj.box.xmax);
    node.put("bndbox.ymax", obj.box.ymax);
    root.add_child("object", node);
  }
  pt::ptree doc;
  doc.add_child("annotation", root);
  std::ostringstream out;
  pt::write_xml(out, doc, pt::xml_writer_make_settings<std::string>(' ', 2));
  return out.str();
}

std::vector<LabeledCrop> extract_crops(const GrayImage& image, const Annotation& ann) {
  if (image.width() != ann.image_width || image.height() != ann.image_height) {
    throw DimensionMismatch("image is " + std::to_string(image.width()) + "x" +
                            std::to_string(image.height()) + ", annotation declares " +
                            std::to_string(ann.image_width) + "x" + std::to_string(ann.image_height));
  }
  std::vector<LabeledCrop> crops;
  crops.reserve(ann.objects.size());
  for (const auto& obj : ann.objects) {
    const BBox& b = obj.box;
    GrayImage crop(b.width(), b.height());
    for (int r = 0; r < b.height(); ++r) {
      for (int c = 0; c < b.width(); ++c) crop.at(r, c) = image.at(b.ymin + r, b.xmin + c);
    }
    crops.push_back({obj.label, std::move(crop)});
  }
  return crops;
}

ScanResult scan_dataset(const std::filesystem::path& image_dir,
                        const std::filesystem::path& annotation_dir, const VocOptions& options) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(image_dir)) throw IoError("not a directory: " + image_dir.string());
  if (!fs::is_directory(annotation_dir)) throw IoError("not a directory: " + annotation_dir.string());

  std::vector<fs::path> xml_files;
  for (const auto& entry : fs::directory_iterator(annotation_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".xml") xml_files.push_back(entry.path());
  }
  std::sort(xml_files.begin(), xml_files.end());

  ScanResult result;
  for (const auto& xml : xml_files) {
    try {
      Annotation ann = read_voc_file(xml, options);
      fs::path image_path = image_dir / ann.image_filename;
      if (!fs::is_regular_file(image_path)) {
        throw MissingImage(xml.filename().string() + " references absent " + image_path.string());
      }
      result.pairs.push_back({std::move(image_path), std::move(ann)});
    } catch (const Error& e) {
      std::string what = e.what();
      result.issues.push_back({xml, what.substr(0, what.find(':')), what});
    }
  }
  std::stable_sort(result.pairs.begin(), result.pairs.end(), [](const auto& a, const auto& b) {
    return a.image_path.filename() < b.image_path.filename();
  });
  return result;
}

}  // namespace almond
