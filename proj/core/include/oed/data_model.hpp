#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oed/error.hpp"
#include "oed/image.hpp"

namespace oed::data {

enum class ClassLabel : int { non_dysplastic = 0, dysplastic = 1, cancerous = 2 };

inline constexpr int kNumClasses = 3;
inline constexpr std::array<ClassLabel, kNumClasses> kAllLabels{
    ClassLabel::non_dysplastic, ClassLabel::dysplastic, ClassLabel::cancerous};

std::string_view to_string(ClassLabel label);
/// Throws InvalidArgument for anything other than the three canonical names.
ClassLabel parse_label(std::string_view name);

inline int index_of(ClassLabel label) { return static_cast<int>(label); }
ClassLabel label_from_index(int index);

/// Severity order is non_dysplastic < dysplastic < cancerous.
inline ClassLabel most_severe(ClassLabel a, ClassLabel b) { return index_of(a) >= index_of(b) ? a : b; }

/// Dysplastic and cancerous lesions form the positive (cancerous) group.
inline bool is_positive_group(ClassLabel label) { return label != ClassLabel::non_dysplastic; }

struct Rgb {
  std::uint8_t r, g, b;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Fixed display palette: green, orange, red.
Rgb display_color(ClassLabel label);

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Half-open pixel rectangle [x_min, x_max) x [y_min, y_max).
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
  bool valid() const noexcept { return x_min < x_max && y_min < y_max; }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Axis-aligned hull. Throws InvalidArgument on an empty point list.
Box hull(std::span<const Point> points);

struct ImageRecord {
  std::string id;
  Image pixels;
  std::string source;
};

/// Manifest reference to an image file; `path` is relative to the manifest directory.
struct ImageEntry {
  std::string id;
  std::string path;
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageEntry&, const ImageEntry&) = default;
};

/// A polygon-annotated lesion. The bounding box is always the tight hull of the polygon.
class LesionAnnotation {
 public:
  LesionAnnotation() = default;
  LesionAnnotation(std::string image_id, std::vector<Point> polygon, ClassLabel label);

  const std::string& image_id() const noexcept { return image_id_; }
  const std::vector<Point>& polygon() const noexcept { return polygon_; }
  const Box& bbox() const noexcept { return bbox_; }
  ClassLabel label() const noexcept { return label_; }

  void set_polygon(std::vector<Point> polygon);
  void set_label(ClassLabel label) noexcept { label_ = label; }

  friend bool operator==(const LesionAnnotation&, const LesionAnnotation&) = default;

 private:
  std::string image_id_;
  std::vector<Point> polygon_;
  Box bbox_;
  ClassLabel label_ = ClassLabel::non_dysplastic;
};

enum class Split { train, val, test };
std::string_view to_string(Split split);
Split parse_split(std::string_view name);

class DanglingReference : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

struct DatasetManifest {
  std::vector<ImageEntry> images;
  std::vector<LesionAnnotation> annotations;
  std::map<std::string, Split> splits;
  /// Directory that relative image paths resolve against. Not serialized.
  std::filesystem::path root;

  /// Throws SchemaError / DanglingReference when an invariant is broken.
  void validate() const;
  /// Sorts images by id and annotations (stably) by image id.
  void normalize();

  const ImageEntry* find_image(std::string_view id) const;
  std::vector<const LesionAnnotation*> annotations_for(std::string_view image_id) const;
  std::vector<std::string> ids_in(Split split) const;
  /// Most severe annotation label on an image, if it has any annotation.
  std::optional<ClassLabel> dominant_label(std::string_view image_id) const;

  Image load_pixels(std::string_view image_id) const;

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.images == b.images && a.annotations == b.annotations && a.splits == b.splits;
  }
};

std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view text);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct Detection {
  Box bbox;
  /// Probability map in image coordinates; may be empty when only boxes are evaluated.
  Raster mask;
  ClassLabel label = ClassLabel::non_dysplastic;
  double score = 0.0;

  void validate() const;
};

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Even-odd containment test.
bool point_in_polygon(Point p, std::span<const Point> polygon);

/// Pixel (x, y) is set iff its center (x + 0.5, y + 0.5) lies inside the polygon.
/// Throws InvalidArgument for fewer than three distinct points.
BinaryMask polygon_to_mask(std::span<const Point> polygon, int height, int width);

/// Sutherland-Hodgman clip against [0, width] x [0, height].
std::vector<Point> clip_polygon(std::span<const Point> polygon, double width, double height);

}  // namespace oed::data
