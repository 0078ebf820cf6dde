#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "oed/checkpoint.hpp"
#include "oed/data_model.hpp"
#include "oed/nn/graph.hpp"
#include "oed/nn/layers.hpp"
#include "oed/preprocess.hpp"
#include "oed/seg/backbone.hpp"
#include "oed/seg/boxes.hpp"

namespace oed::seg {

enum class MaskLossKind { dice, bce };
std::string_view to_string(MaskLossKind kind);
MaskLossKind parse_mask_loss_kind(std::string_view name);

struct SegModelConfig {
  BackboneConfig backbone;
  AnchorConfig anchors;
  MaskLossKind mask_loss = MaskLossKind::dice;

  double rpn_fg_iou = 0.7;
  double rpn_bg_iou = 0.3;
  int rpn_batch = 128;
  double rpn_fg_fraction = 0.5;
  double rpn_nms_iou = 0.7;
  int rpn_pre_nms_train = 400;
  int rpn_post_nms_train = 32;
  int rpn_pre_nms_test = 300;
  int rpn_post_nms_test = 50;

  int roi_batch = 48;
  double roi_fg_fraction = 0.33;
  double roi_fg_iou = 0.5;
  int mask_rois = 16;
  int box_pool = 7;
  int mask_pool = 14;
  int head_dim = 256;
  int mask_dim = 48;

  double score_threshold = 0.5;
  double nms_iou = 0.5;
  int max_detections = 20;

  void validate() const;
};

std::string to_json(const SegModelConfig& config);
SegModelConfig seg_config_from_json(std::string_view text);

/// Individual objectives of one training sample. The first three make up the
/// detector-head objective; the RPN terms are optimized alongside.
struct LossBreakdown {
  double cls = 0.0;
  double box = 0.0;
  double mask = 0.0;
  double rpn_objectness = 0.0;
  double rpn_box = 0.0;

  double head_total() const;
  double total() const { return head_total() + rpn_objectness + rpn_box; }
  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown scaled(double f) const;
};

/// Image [H, W, 3] uint8 -> normalized [1, 3, H', W'] padded to `multiple`.
nn::Tensor image_to_tensor(const Image& image, int multiple);

/// Ground-truth mask of `polygon` sampled on an n x n grid spanning `box` (cell centers).
std::vector<double> polygon_roi_target(std::span<const data::Point> polygon, const Box& box, int n);

/// Writes an n x n ROI probability grid into a full-image probability map.
void paste_mask(std::span<const double> roi, int n, const Box& box, Raster& target);

class SegModel {
 public:
  explicit SegModel(SegModelConfig config, std::uint64_t seed = 0);

  const SegModelConfig& config() const noexcept { return config_; }
  nn::ParamStore& params() noexcept { return params_; }
  const nn::ParamStore& params() const noexcept { return params_; }

  /// Forward + backward on one sample; parameter gradients accumulate (scaled by
  /// `grad_scale`). Sampling of anchors and ROIs draws from `rng`.
  LossBreakdown accumulate_gradients(const preprocess::Sample& sample, std::mt19937_64& rng, double grad_scale = 1.0);

  /// Loss evaluation without touching gradients.
  LossBreakdown evaluate_losses(const preprocess::Sample& sample, std::mt19937_64& rng) const;

  /// Detections in the coordinates of `image`; large images are internally reduced first.
  std::vector<data::Detection> predict(const Image& image) const;

  Checkpoint to_checkpoint(const std::string& metadata_json = "{}") const;
  static SegModel from_checkpoint(const Checkpoint& ckpt);

 private:
  struct Heads;
  struct RawDetection {
    data::Detection det;
    std::vector<double> roi_mask;
  };
  LossBreakdown run(const preprocess::Sample& sample, std::mt19937_64& rng, bool backward, double grad_scale) const;
  std::vector<RawDetection> detect(const Image& image) const;

  SegModelConfig config_;
  // mutable: forward passes read parameters through the store while gradients accumulate
  mutable nn::ParamStore params_;
  std::unique_ptr<Backbone> backbone_;
  std::shared_ptr<Heads> heads_;
};

}  // namespace oed::seg
