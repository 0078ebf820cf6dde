#include "oed/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace oed::data {

using nlohmann::json;

std::string_view to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::non_dysplastic: return "non_dysplastic";
    case ClassLabel::dysplastic: return "dysplastic";
    case ClassLabel::cancerous: return "cancerous";
  }
  throw InvalidArgument("unknown class label");
}

ClassLabel parse_label(std::string_view name) {
  for (ClassLabel l : kAllLabels) {
    if (to_string(l) == name) return l;
  }
  throw InvalidArgument("unknown class label '" + std::string(name) + "'");
}

ClassLabel label_from_index(int index) {
  if (index < 0 || index >= kNumClasses) throw InvalidArgument("class index out of range");
  return static_cast<ClassLabel>(index);
}

Rgb display_color(ClassLabel label) {
  switch (label) {
    case ClassLabel::non_dysplastic: return {0, 200, 0};
    case ClassLabel::dysplastic: return {255, 165, 0};
    case ClassLabel::cancerous: return {255, 0, 0};
  }
  throw InvalidArgument("unknown class label");
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw InvalidArgument("unknown split");
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw InvalidArgument("unknown split '" + std::string(name) + "'");
}

Box hull(std::span<const Point> points) {
  if (points.empty()) throw InvalidArgument("hull of empty point list");
  Box b{points[0].x, points[0].y, points[0].x, points[0].y};
  for (const Point& p : points) {
    b.x_min = std::min(b.x_min, p.x);
    b.y_min = std::min(b.y_min, p.y);
    b.x_max = std::max(b.x_max, p.x);
    b.y_max = std::max(b.y_max, p.y);
  }
  return b;
}

LesionAnnotation::LesionAnnotation(std::string image_id, std::vector<Point> polygon, ClassLabel label)
    : image_id_(std::move(image_id)), label_(label) {
  set_polygon(std::move(polygon));
}

void LesionAnnotation::set_polygon(std::vector<Point> polygon) {
  if (polygon.size() < 3) throw InvalidArgument("annotation polygon needs at least 3 points");
  bbox_ = hull(polygon);
  polygon_ = std::move(polygon);
}

// ---------------------------------------------------------------------------
// Geometry

namespace {

// Shared by the scanline rasterizer and the point test so both agree bit for bit.
inline bool edge_crosses(const Point& a, const Point& b, double y) { return (a.y > y) != (b.y > y); }
inline double crossing_x(const Point& a, const Point& b, double y) {
  return a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
}

std::size_t distinct_points(std::span<const Point> polygon) {
  std::set<std::pair<double, double>> seen;
  for (const Point& p : polygon) seen.emplace(p.x, p.y);
  return seen.size();
}

}  // namespace

bool point_in_polygon(Point p, std::span<const Point> polygon) {
  bool inside = false;
  const std::size_t n = polygon.size();
  if (n < 3) return false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = polygon[i];
    const Point& b = polygon[j];
    if (edge_crosses(a, b, p.y) && p.x < crossing_x(a, b, p.y)) inside = !inside;
  }
  return inside;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t v) { return v != 0; }));
}

BinaryMask polygon_to_mask(std::span<const Point> polygon, int height, int width) {
  if (height < 0 || width < 0) throw InvalidArgument("polygon_to_mask: negative size");
  if (distinct_points(polygon) < 3) throw InvalidArgument("polygon_to_mask: degenerate polygon");
  BinaryMask mask(width, height);
  if (width == 0 || height == 0) return mask;

  const Box bounds = hull(polygon);
  const int y0 = std::max(0, static_cast<int>(std::floor(bounds.y_min - 0.5)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(bounds.y_max)));
  std::vector<double> xs;
  const std::size_t n = polygon.size();
  for (int y = y0; y <= y1; ++y) {
    const double cy = y + 0.5;
    xs.clear();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      if (edge_crosses(polygon[i], polygon[j], cy)) xs.push_back(crossing_x(polygon[i], polygon[j], cy));
    }
    if (xs.empty()) continue;
    std::sort(xs.begin(), xs.end());
    for (int x = 0; x < width; ++x) {
      const double cx = x + 0.5;
      // Crossings strictly to the right of the center decide parity.
      auto right = xs.end() - std::upper_bound(xs.begin(), xs.end(), cx);
      if (right % 2 == 1) mask.at(x, y) = 1;
    }
  }
  return mask;
}

std::vector<Point> clip_polygon(std::span<const Point> polygon, double width, double height) {
  std::vector<Point> out(polygon.begin(), polygon.end());
  // Each stage: keep the half-plane where inside(p) holds.
  auto stage = [&out](auto inside, auto intersect) {
    if (out.empty()) return;
    std::vector<Point> in = std::move(out);
    out.clear();
    Point prev = in.back();
    for (const Point& cur : in) {
      if (inside(cur)) {
        if (!inside(prev)) out.push_back(intersect(prev, cur));
        out.push_back(cur);
      } else if (inside(prev)) {
        out.push_back(intersect(prev, cur));
      }
      prev = cur;
    }
  };
  auto at_x = [](Point a, Point b, double x) {
    return Point{x, a.y + (x - a.x) * (b.y - a.y) / (b.x - a.x)};
  };
  auto at_y = [](Point a, Point b, double y) {
    return Point{a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y), y};
  };
  stage([](Point p) { return p.x >= 0.0; }, [&](Point a, Point b) { return at_x(a, b, 0.0); });
  stage([&](Point p) { return p.x <= width; }, [&](Point a, Point b) { return at_x(a, b, width); });
  stage([](Point p) { return p.y >= 0.0; }, [&](Point a, Point b) { return at_y(a, b, 0.0); });
  stage([&](Point p) { return p.y <= height; }, [&](Point a, Point b) { return at_y(a, b, height); });
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    const std::string where = "images[" + std::to_string(i) + "]";
    if (img.id.empty()) throw SchemaError(where + ".id", "empty id");
    if (!ids.insert(img.id).second) throw SchemaError(where + ".id", "duplicate id '" + img.id + "'");
    if (img.width < 1) throw SchemaError(where + ".width", "must be >= 1");
    if (img.height < 1) throw SchemaError(where + ".height", "must be >= 1");
  }
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const auto& a = annotations[i];
    const std::string where = "annotations[" + std::to_string(i) + "]";
    if (!ids.contains(a.image_id())) {
      throw DanglingReference(where + ".image_id", "unknown image id '" + a.image_id() + "'");
    }
    if (a.polygon().size() < 3) throw SchemaError(where + ".polygon", "needs at least 3 points");
  }
  for (const auto& id : ids) {
    if (!splits.contains(id)) throw SchemaError("splits." + id, "image has no split assignment");
  }
  for (const auto& [id, split] : splits) {
    if (!ids.contains(id)) throw DanglingReference("splits." + id, "unknown image id");
  }
}

void DatasetManifest::normalize() {
  std::sort(images.begin(), images.end(), [](const ImageEntry& a, const ImageEntry& b) { return a.id < b.id; });
  std::stable_sort(annotations.begin(), annotations.end(),
                   [](const LesionAnnotation& a, const LesionAnnotation& b) { return a.image_id() < b.image_id(); });
}

const ImageEntry* DatasetManifest::find_image(std::string_view id) const {
  for (const auto& img : images) {
    if (img.id == id) return &img;
  }
  return nullptr;
}

std::vector<const LesionAnnotation*> DatasetManifest::annotations_for(std::string_view image_id) const {
  std::vector<const LesionAnnotation*> out;
  for (const auto& a : annotations) {
    if (a.image_id() == image_id) out.push_back(&a);
  }
  return out;
}

std::vector<std::string> DatasetManifest::ids_in(Split split) const {
  std::vector<std::string> out;
  for (const auto& img : images) {
    auto it = splits.find(img.id);
    if (it != splits.end() && it->second == split) out.push_back(img.id);
  }
  return out;
}

std::optional<ClassLabel> DatasetManifest::dominant_label(std::string_view image_id) const {
  std::optional<ClassLabel> out;
  for (const auto& a : annotations) {
    if (a.image_id() != image_id) continue;
    out = out ? most_severe(*out, a.label()) : a.label();
  }
  return out;
}

Image DatasetManifest::load_pixels(std::string_view image_id) const {
  const ImageEntry* entry = find_image(image_id);
  if (!entry) throw InvalidArgument("unknown image id '" + std::string(image_id) + "'");
  Image img = read_png(root / entry->path);
  if (img.width != entry->width || img.height != entry->height) {
    throw IoError(entry->path + ": size " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                  " does not match manifest");
  }
  return img;
}

namespace {

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw SchemaError(where, "expected object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(where + "." + key, "missing field");
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) throw SchemaError(where + "." + key, "expected string");
  return v.get<std::string>();
}

int require_int(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_integer()) throw SchemaError(where + "." + key, "expected integer");
  return v.get<int>();
}

const json& require_array(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_array()) throw SchemaError(where + "." + key, "expected array");
  return v;
}

}  // namespace

std::string serialize_manifest(const DatasetManifest& manifest) {
  json images = json::array();
  for (const auto& img : manifest.images) {
    images.push_back({{"id", img.id}, {"path", img.path}, {"width", img.width}, {"height", img.height}});
  }
  json annotations = json::array();
  for (const auto& a : manifest.annotations) {
    json poly = json::array();
    for (const Point& p : a.polygon()) poly.push_back({p.x, p.y});
    annotations.push_back({{"image_id", a.image_id()}, {"polygon", poly}, {"label", to_string(a.label())}});
  }
  json splits = json::object();
  for (const auto& [id, split] : manifest.splits) splits[id] = to_string(split);
  // nlohmann::json objects are std::map backed, so keys come out sorted.
  json doc = {{"images", images}, {"annotations", annotations}, {"splits", splits}};
  return doc.dump(2) + "\n";
}

DatasetManifest parse_manifest(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("$", std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("$", "expected top-level object");

  DatasetManifest m;
  const json& images = require_array(doc, "images", "$");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = "images[" + std::to_string(i) + "]";
    ImageEntry e;
    e.id = require_string(images[i], "id", where);
    e.path = require_string(images[i], "path", where);
    e.width = require_int(images[i], "width", where);
    e.height = require_int(images[i], "height", where);
    m.images.push_back(std::move(e));
  }

  const json& annotations = require_array(doc, "annotations", "$");
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const std::string where = "annotations[" + std::to_string(i) + "]";
    std::string image_id = require_string(annotations[i], "image_id", where);
    const json& poly = require_array(annotations[i], "polygon", where);
    std::vector<Point> points;
    for (std::size_t k = 0; k < poly.size(); ++k) {
      const json& pt = poly[k];
      if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number()) {
        throw SchemaError(where + ".polygon[" + std::to_string(k) + "]", "expected [x, y]");
      }
      points.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
    if (points.size() < 3) throw SchemaError(where + ".polygon", "needs at least 3 points");
    ClassLabel label;
    try {
      label = parse_label(require_string(annotations[i], "label", where));
    } catch (const InvalidArgument& e) {
      throw SchemaError(where + ".label", e.what());
    }
    m.annotations.emplace_back(std::move(image_id), std::move(points), label);
  }

  const json& splits = require(doc, "splits", "$");
  if (!splits.is_object()) throw SchemaError("$.splits", "expected object");
  for (auto it = splits.begin(); it != splits.end(); ++it) {
    if (!it.value().is_string()) throw SchemaError("splits." + it.key(), "expected string");
    try {
      m.splits[it.key()] = parse_split(it.value().get<std::string>());
    } catch (const InvalidArgument& e) {
      throw SchemaError("splits." + it.key(), e.what());
    }
  }

  m.validate();
  for (auto& a : m.annotations) {
    const ImageEntry* img = m.find_image(a.image_id());
    auto clipped = clip_polygon(a.polygon(), img->width, img->height);
    if (clipped.size() < 3) throw SchemaError("annotations", "polygon lies outside image '" + a.image_id() + "'");
    if (clipped != a.polygon()) a.set_polygon(std::move(clipped));
  }
  m.normalize();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  DatasetManifest m = parse_manifest(buf.str());
  m.root = path.parent_path();
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  DatasetManifest sorted = manifest;
  sorted.normalize();
  const std::string text = serialize_manifest(sorted);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

void Detection::validate() const {
  if (!bbox.valid()) throw InvalidArgument("detection box must satisfy x_min < x_max and y_min < y_max");
  if (!(score >= 0.0 && score <= 1.0)) throw InvalidArgument("detection score outside [0, 1]");
  for (float v : mask.values) {
    if (!(v >= 0.0f && v <= 1.0f)) throw InvalidArgument("detection mask value outside [0, 1]");
  }
}

}  // namespace oed::data
