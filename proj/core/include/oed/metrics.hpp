#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oed/data_model.hpp"

namespace oed::metrics {

using data::BinaryMask;
using data::Box;
using data::ClassLabel;
using data::Detection;
using data::LesionAnnotation;

/// 2|X n Y| / (|X| + |Y|); 1 when both masks are empty. Throws on a shape mismatch.
double mask_dice(const BinaryMask& x, const BinaryMask& y);

double box_iou(const Box& a, const Box& b);

struct Matching {
  std::vector<std::pair<int, int>> pairs;  // (prediction, ground truth)
  std::vector<int> unmatched_predictions;
  std::vector<int> unmatched_truths;

  int tp() const noexcept { return static_cast<int>(pairs.size()); }
  int fp() const noexcept { return static_cast<int>(unmatched_predictions.size()); }
  int fn() const noexcept { return static_cast<int>(unmatched_truths.size()); }
};

/// Visits predictions by descending score (ties by index); each takes the unmatched
/// ground truth of highest IoU (ties by index) if that IoU reaches the threshold.
Matching match_detections(std::span<const Box> predicted, std::span<const double> scores, std::span<const Box> truth,
                          double iou_threshold);
Matching match_detections(std::span<const Detection> predicted, std::span<const LesionAnnotation> truth,
                          double iou_threshold);

/// Predictions and ground truth of one image.
struct ImageResult {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<Detection> predictions;
  std::vector<LesionAnnotation> truth;
};

struct DetectionCounts {
  int tp = 0, fp = 0, fn = 0;
};

DetectionCounts count_detections(std::span<const ImageResult> images, double iou_threshold);

/// Fraction of ground-truth lesions matched at IoU >= threshold, pooled over images.
/// Throws InvalidArgument when there is no ground truth at all.
double overlap_accuracy(std::span<const ImageResult> images, double iou_threshold = 0.25);

/// 2TP / (2TP + FP + FN); 1 when there is nothing to detect and nothing predicted.
double detection_f1(std::span<const ImageResult> images, double iou_threshold = 0.25);
double detection_f1(const DetectionCounts& counts);

/// Union of predicted masks (probability >= mask_threshold; a box fill for detections
/// without a mask) against the union of rasterized ground-truth polygons.
double image_mask_dice(const ImageResult& image, double mask_threshold = 0.5);
/// Mean of image_mask_dice over images.
double mean_mask_dice(std::span<const ImageResult> images, double mask_threshold = 0.5);

struct ClassificationReport {
  std::array<double, data::kNumClasses> f1{};
  std::array<double, data::kNumClasses> sensitivity{};
  std::array<double, data::kNumClasses> specificity{};
  std::array<int, data::kNumClasses> support{};
  double macro_f1 = 0.0;
  /// confusion[true][predicted]
  std::array<std::array<int, data::kNumClasses>, data::kNumClasses> confusion{};
};

/// One-vs-rest rates per class; a rate whose denominator is zero is reported as 0.
ClassificationReport classification_report(std::span<const ClassLabel> predicted, std::span<const ClassLabel> truth);

struct ModelRow {
  std::string model;
  double mask_dice = 0.0;
  double bbox_f1 = 0.0;
  double bbox_overlap_accuracy = 0.0;
  double iou_threshold = 0.25;
  DetectionCounts counts;
};

struct EvalReport {
  std::vector<ModelRow> rows;
  std::optional<ClassificationReport> lesion_classification;
  std::optional<ClassificationReport> patch_classification;
  /// Echo of the evaluation configuration as a JSON document ("{}" if none).
  std::string config_json = "{}";
};

std::string report_json(const EvalReport& report);
std::string report_table(const EvalReport& report);

/// Writes `<dir>/report.json` and `<dir>/report.txt`. Throws InvalidArgument without
/// rows and IoError when the files cannot be written.
void emit_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace oed::metrics
