#include "oed/seg/boxes.hpp"

#include <algorithm>
#include <numeric>

namespace oed::seg {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<int> nms(std::span<const Box> boxes, std::span<const double> scores, double iou_threshold, int max_keep) {
  if (boxes.size() != scores.size()) throw InvalidArgument("nms: box/score count mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> keep;
  std::vector<char> dead(boxes.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const int a = order[i];
    if (dead[a]) continue;
    keep.push_back(a);
    if (max_keep > 0 && static_cast<int>(keep.size()) >= max_keep) break;
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const int b = order[j];
      if (!dead[b] && iou(boxes[a], boxes[b]) > iou_threshold) dead[b] = 1;
    }
  }
  return keep;
}

Box clip(const Box& b, double width, double height) {
  return {std::clamp(b.x_min, 0.0, width), std::clamp(b.y_min, 0.0, height), std::clamp(b.x_max, 0.0, width),
          std::clamp(b.y_max, 0.0, height)};
}

Deltas BoxCoder::encode(const Box& r, const Box& t) const {
  const double rw = r.width(), rh = r.height();
  const double rx = r.x_min + 0.5 * rw, ry = r.y_min + 0.5 * rh;
  const double tw = t.width(), th = t.height();
  const double tx = t.x_min + 0.5 * tw, ty = t.y_min + 0.5 * th;
  return {weights[0] * (tx - rx) / rw, weights[1] * (ty - ry) / rh, weights[2] * std::log(tw / rw),
          weights[3] * std::log(th / rh)};
}

Box BoxCoder::decode(const Box& r, const Deltas& t) const {
  const double rw = r.width(), rh = r.height();
  const double rx = r.x_min + 0.5 * rw, ry = r.y_min + 0.5 * rh;
  const double dx = t[0] / weights[0], dy = t[1] / weights[1];
  const double dw = std::min(t[2] / weights[2], max_log_scale), dh = std::min(t[3] / weights[3], max_log_scale);
  const double cx = rx + dx * rw, cy = ry + dy * rh;
  const double w = rw * std::exp(dw), h = rh * std::exp(dh);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

void AnchorConfig::validate() const {
  if (sizes.empty() || aspect_ratios.empty()) throw InvalidArgument("anchors: need sizes and aspect ratios");
  for (double s : sizes) {
    if (!(s > 0)) throw InvalidArgument("anchors: sizes must be > 0");
  }
  for (double a : aspect_ratios) {
    if (!(a > 0)) throw InvalidArgument("anchors: aspect ratios must be > 0");
  }
}

std::vector<Box> make_anchors(int feat_h, int feat_w, int stride, double size, std::span<const double> aspect_ratios) {
  std::vector<Box> out;
  out.reserve(static_cast<std::size_t>(feat_h) * feat_w * aspect_ratios.size());
  for (int y = 0; y < feat_h; ++y) {
    for (int x = 0; x < feat_w; ++x) {
      const double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
      for (double ar : aspect_ratios) {
        // ar = height / width, area = size^2
        const double w = size / std::sqrt(ar), h = size * std::sqrt(ar);
        out.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
      }
    }
  }
  return out;
}

AnchorMatch match_anchors(std::span<const Box> anchors, std::span<const Box> gts, double fg_threshold,
                          double bg_threshold) {
  AnchorMatch m;
  m.labels.assign(anchors.size(), 0);
  m.matched_gt.assign(anchors.size(), -1);
  m.best_iou.assign(anchors.size(), 0.0);
  if (gts.empty()) return m;

  std::vector<double> gt_best(gts.size(), 0.0);
  std::vector<double> ious(anchors.size() * gts.size());
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[a], gts[g]);
      ious[a * gts.size() + g] = v;
      if (v > m.best_iou[a] || m.matched_gt[a] < 0) {
        m.best_iou[a] = v;
        m.matched_gt[a] = static_cast<int>(g);
      }
      gt_best[g] = std::max(gt_best[g], v);
    }
    const double b = m.best_iou[a];
    m.labels[a] = b >= fg_threshold ? 1 : (b < bg_threshold ? 0 : -1);
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_best[g] <= 0.0) continue;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      if (ious[a * gts.size() + g] == gt_best[g]) {
        m.labels[a] = 1;
        m.matched_gt[a] = static_cast<int>(g);
      }
    }
  }
  return m;
}

}  // namespace oed::seg
