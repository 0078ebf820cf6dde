#include "oed/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "oed/seg/boxes.hpp"

namespace oed::metrics {

double mask_dice(const BinaryMask& x, const BinaryMask& y) {
  if (x.width != y.width || x.height != y.height) throw InvalidArgument("mask_dice: shape mismatch");
  std::size_t inter = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.bits.size(); ++i) {
    const bool a = x.bits[i] != 0, b = y.bits[i] != 0;
    sx += a;
    sy += b;
    inter += a && b;
  }
  if (sx + sy == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sx + sy);
}

double box_iou(const Box& a, const Box& b) { return seg::iou(a, b); }

Matching match_detections(std::span<const Box> predicted, std::span<const double> scores, std::span<const Box> truth,
                          double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw InvalidArgument("iou_threshold must be in (0, 1]");
  if (predicted.size() != scores.size()) throw InvalidArgument("match_detections: score count mismatch");
  std::vector<int> order(predicted.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });

  Matching m;
  std::vector<char> taken(truth.size(), 0);
  for (int p : order) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      if (taken[t]) continue;
      const double v = box_iou(predicted[p], truth[t]);
      if (v >= iou_threshold && v > best_iou) {
        best = static_cast<int>(t);
        best_iou = v;
      }
    }
    if (best >= 0) {
      taken[best] = 1;
      m.pairs.emplace_back(p, best);
    } else {
      m.unmatched_predictions.push_back(p);
    }
  }
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (!taken[t]) m.unmatched_truths.push_back(static_cast<int>(t));
  }
  return m;
}

Matching match_detections(std::span<const Detection> predicted, std::span<const LesionAnnotation> truth,
                          double iou_threshold) {
  std::vector<Box> pb, tb;
  std::vector<double> sc;
  for (const auto& d : predicted) {
    pb.push_back(d.bbox);
    sc.push_back(d.score);
  }
  for (const auto& a : truth) tb.push_back(a.bbox());
  return match_detections(pb, sc, tb, iou_threshold);
}

DetectionCounts count_detections(std::span<const ImageResult> images, double iou_threshold) {
  DetectionCounts c;
  for (const auto& im : images) {
    const Matching m = match_detections(im.predictions, im.truth, iou_threshold);
    c.tp += m.tp();
    c.fp += m.fp();
    c.fn += m.fn();
  }
  return c;
}

double overlap_accuracy(std::span<const ImageResult> images, double iou_threshold) {
  const DetectionCounts c = count_detections(images, iou_threshold);
  if (c.tp + c.fn == 0) throw InvalidArgument("overlap_accuracy: no ground-truth lesions");
  return static_cast<double>(c.tp) / (c.tp + c.fn);
}

double detection_f1(const DetectionCounts& c) {
  const int denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * c.tp / denom;
}

double detection_f1(std::span<const ImageResult> images, double iou_threshold) {
  return detection_f1(count_detections(images, iou_threshold));
}

double image_mask_dice(const ImageResult& im, double mask_threshold) {
  BinaryMask pred(im.width, im.height), truth(im.width, im.height);
  for (const auto& d : im.predictions) {
    if (!d.mask.empty()) {
      if (d.mask.width != im.width || d.mask.height != im.height)
        throw InvalidArgument("image_mask_dice: mask size differs from image " + im.image_id);
      for (std::size_t i = 0; i < pred.bits.size(); ++i) pred.bits[i] |= d.mask.values[i] >= mask_threshold;
    } else {
      for (int y = 0; y < im.height; ++y) {
        for (int x = 0; x < im.width; ++x) {
          const double cx = x + 0.5, cy = y + 0.5;
          if (cx >= d.bbox.x_min && cx < d.bbox.x_max && cy >= d.bbox.y_min && cy < d.bbox.y_max) pred.at(x, y) = 1;
        }
      }
    }
  }
  for (const auto& a : im.truth) {
    const BinaryMask m = data::polygon_to_mask(a.polygon(), im.height, im.width);
    for (std::size_t i = 0; i < truth.bits.size(); ++i) truth.bits[i] |= m.bits[i];
  }
  return mask_dice(pred, truth);
}

double mean_mask_dice(std::span<const ImageResult> images, double mask_threshold) {
  if (images.empty()) throw InvalidArgument("mean_mask_dice: no images");
  double s = 0.0;
  for (const auto& im : images) s += image_mask_dice(im, mask_threshold);
  return s / static_cast<double>(images.size());
}

ClassificationReport classification_report(std::span<const ClassLabel> predicted, std::span<const ClassLabel> truth) {
  if (predicted.empty() || predicted.size() != truth.size())
    throw InvalidArgument("classification_report: need equal-length, nonempty label lists");
  ClassificationReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) ++r.confusion[data::index_of(truth[i])][data::index_of(predicted[i])];
  const int n = static_cast<int>(truth.size());
  auto ratio = [](int num, int den) { return den == 0 ? 0.0 : static_cast<double>(num) / den; };
  for (int k = 0; k < data::kNumClasses; ++k) {
    int tp = r.confusion[k][k], fn = 0, fp = 0;
    for (int j = 0; j < data::kNumClasses; ++j) {
      if (j == k) continue;
      fn += r.confusion[k][j];
      fp += r.confusion[j][k];
    }
    const int tn = n - tp - fn - fp;
    r.support[k] = tp + fn;
    r.sensitivity[k] = ratio(tp, tp + fn);
    r.specificity[k] = ratio(tn, tn + fp);
    r.f1[k] = ratio(2 * tp, 2 * tp + fp + fn);
  }
  r.macro_f1 = (r.f1[0] + r.f1[1] + r.f1[2]) / data::kNumClasses;
  return r;
}

namespace {

nlohmann::json classification_json(const ClassificationReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (ClassLabel l : data::kAllLabels) {
    const int k = data::index_of(l);
    per[std::string(data::to_string(l))] = {
        {"f1", r.f1[k]}, {"sensitivity", r.sensitivity[k]}, {"specificity", r.specificity[k]}, {"support", r.support[k]}};
  }
  nlohmann::json conf = nlohmann::json::array();
  for (const auto& row : r.confusion) conf.push_back(row);
  return {{"per_class", per}, {"overall_f1", r.macro_f1}, {"confusion_matrix", conf}};
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string report_json(const EvalReport& report) {
  nlohmann::json j;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"model", r.model},
                    {"mask_dice", r.mask_dice},
                    {"bbox_f1", r.bbox_f1},
                    {"bbox_overlap_accuracy", r.bbox_overlap_accuracy},
                    {"iou_threshold", r.iou_threshold},
                    {"tp", r.counts.tp},
                    {"fp", r.counts.fp},
                    {"fn", r.counts.fn}});
  }
  j["rows"] = rows;
  if (report.lesion_classification) j["classification"]["lesion_level"] = classification_json(*report.lesion_classification);
  if (report.patch_classification) j["classification"]["patch_level"] = classification_json(*report.patch_classification);
  j["config"] = nlohmann::json::parse(report.config_json.empty() ? "{}" : report.config_json);
  return j.dump(2) + "\n";
}

std::string report_table(const EvalReport& report) {
  std::vector<std::array<std::string, 5>> cells;
  cells.push_back({"Model", "Mask Dice", "BBox F1", "BBox Overlap Accuracy", "IoU"});
  for (const auto& r : report.rows) {
    cells.push_back({r.model, fixed(r.mask_dice), fixed(r.bbox_f1), fixed(r.bbox_overlap_accuracy),
                     fixed(r.iou_threshold, 2)});
  }
  std::array<std::size_t, 5> width{};
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto line = [&](const std::array<std::string, 5>& row) {
    out << "|";
    for (std::size_t c = 0; c < row.size(); ++c) out << " " << row[c] << std::string(width[c] - row[c].size(), ' ') << " |";
    out << "\n";
  };
  line(cells[0]);
  out << "|";
  for (std::size_t c = 0; c < width.size(); ++c) out << std::string(width[c] + 2, '-') << "|";
  out << "\n";
  for (std::size_t i = 1; i < cells.size(); ++i) line(cells[i]);

  auto block = [&](const char* title, const ClassificationReport& r) {
    out << "\n" << title << " (overall F1 " << fixed(r.macro_f1) << ")\n";
    out << "| Class | F1 | Sensitivity | Specificity | Support |\n|---|---|---|---|---|\n";
    for (ClassLabel l : data::kAllLabels) {
      const int k = data::index_of(l);
      out << "| " << data::to_string(l) << " | " << fixed(r.f1[k]) << " | " << fixed(r.sensitivity[k]) << " | "
          << fixed(r.specificity[k]) << " | " << r.support[k] << " |\n";
    }
  };
  if (report.lesion_classification) block("Lesion-level grading", *report.lesion_classification);
  if (report.patch_classification) block("Patch-level grading", *report.patch_classification);
  return out.str();
}

void emit_report(const EvalReport& report, const std::filesystem::path& dir) {
  if (report.rows.empty()) throw InvalidArgument("emit_report: need at least one model row");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    f << text;
    if (!f) throw IoError("cannot write " + p.string());
  };
  write(dir / "report.json", report_json(report));
  write(dir / "report.txt", report_table(report));
}

}  // namespace oed::metrics
