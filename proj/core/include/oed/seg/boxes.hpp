#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "oed/data_model.hpp"

namespace oed::seg {

using data::Box;
using Deltas = std::array<double, 4>;

/// Intersection over union of half-open rectangles; 0 when the union is empty.
double iou(const Box& a, const Box& b);

/// Greedy non-maximum suppression. Candidates are visited by descending score (ties
/// by index); returns kept indices in visit order, at most `max_keep` when positive.
std::vector<int> nms(std::span<const Box> boxes, std::span<const double> scores, double iou_threshold,
                     int max_keep = -1);

Box clip(const Box& b, double width, double height);

/// (dx, dy, log dw, log dh) relative to a reference box, scaled per coordinate.
struct BoxCoder {
  Deltas weights{1.0, 1.0, 1.0, 1.0};
  double max_log_scale = std::log(1000.0 / 16.0);

  Deltas encode(const Box& reference, const Box& target) const;
  Box decode(const Box& reference, const Deltas& t) const;
};

struct AnchorConfig {
  /// One anchor size per pyramid level, finest first.
  std::vector<double> sizes{24.0, 48.0, 96.0};
  std::vector<double> aspect_ratios{0.5, 1.0, 2.0};

  void validate() const;
  int per_location() const noexcept { return static_cast<int>(aspect_ratios.size()); }
};

/// Anchors ordered (y, x, aspect) and centered on feature cells.
std::vector<Box> make_anchors(int feat_h, int feat_w, int stride, double size, std::span<const double> aspect_ratios);

struct AnchorMatch {
  std::vector<int> labels;       // 1 foreground, 0 background, -1 ignored
  std::vector<int> matched_gt;   // best ground truth per anchor, -1 without ground truth
  std::vector<double> best_iou;
};

/// IoU >= fg_threshold is foreground, < bg_threshold background. Every ground truth
/// additionally claims the anchors that share its highest IoU.
AnchorMatch match_anchors(std::span<const Box> anchors, std::span<const Box> gts, double fg_threshold = 0.7,
                          double bg_threshold = 0.3);

}  // namespace oed::seg
