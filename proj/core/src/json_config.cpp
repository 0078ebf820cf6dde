#include "json_config.hpp"

namespace oed::detail {

namespace {

nn::OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return nn::OptimizerKind::sgd;
  if (s == "adamw") return nn::OptimizerKind::adamw;
  throw InvalidArgument("expected 'sgd' or 'adamw'");
}

}  // namespace

json to_json_value(const seg::BackboneConfig& c) {
  return {{"kind", seg::to_string(c.kind)}, {"embed_dim", c.embed_dim},     {"depth", c.depth},
          {"window_size", c.window_size},   {"patch_size", c.patch_size},   {"num_heads", c.num_heads},
          {"mlp_ratio", c.mlp_ratio},       {"fpn_dim", c.fpn_dim}};
}

void read(const json& j, seg::BackboneConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  r.get_enum("kind", c.kind, seg::parse_backbone_kind)
      .get("embed_dim", c.embed_dim)
      .get("depth", c.depth)
      .get("window_size", c.window_size)
      .get("patch_size", c.patch_size)
      .get("num_heads", c.num_heads)
      .get("mlp_ratio", c.mlp_ratio)
      .get("fpn_dim", c.fpn_dim)
      .finish();
  validated(path, [&] { c.validate(); });
}

json to_json_value(const seg::AnchorConfig& c) { return {{"sizes", c.sizes}, {"aspect_ratios", c.aspect_ratios}}; }

void read(const json& j, seg::AnchorConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  r.get("sizes", c.sizes).get("aspect_ratios", c.aspect_ratios).finish();
  validated(path, [&] { c.validate(); });
}

json to_json_value(const seg::SegModelConfig& c) {
  return {{"backbone", to_json_value(c.backbone)},
          {"anchors", to_json_value(c.anchors)},
          {"mask_loss", seg::to_string(c.mask_loss)},
          {"rpn_fg_iou", c.rpn_fg_iou},
          {"rpn_bg_iou", c.rpn_bg_iou},
          {"rpn_batch", c.rpn_batch},
          {"rpn_fg_fraction", c.rpn_fg_fraction},
          {"rpn_nms_iou", c.rpn_nms_iou},
          {"rpn_pre_nms_train", c.rpn_pre_nms_train},
          {"rpn_post_nms_train", c.rpn_post_nms_train},
          {"rpn_pre_nms_test", c.rpn_pre_nms_test},
          {"rpn_post_nms_test", c.rpn_post_nms_test},
          {"roi_batch", c.roi_batch},
          {"roi_fg_fraction", c.roi_fg_fraction},
          {"roi_fg_iou", c.roi_fg_iou},
          {"mask_rois", c.mask_rois},
          {"box_pool", c.box_pool},
          {"mask_pool", c.mask_pool},
          {"head_dim", c.head_dim},
          {"mask_dim", c.mask_dim},
          {"score_threshold", c.score_threshold},
          {"nms_iou", c.nms_iou},
          {"max_detections", c.max_detections}};
}

void read(const json& j, seg::SegModelConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  if (r.has("backbone")) read(r.at("backbone"), c.backbone, r.child("backbone"));
  if (r.has("anchors")) read(r.at("anchors"), c.anchors, r.child("anchors"));
  r.get_enum("mask_loss", c.mask_loss, seg::parse_mask_loss_kind)
      .get("rpn_fg_iou", c.rpn_fg_iou)
      .get("rpn_bg_iou", c.rpn_bg_iou)
      .get("rpn_batch", c.rpn_batch)
      .get("rpn_fg_fraction", c.rpn_fg_fraction)
      .get("rpn_nms_iou", c.rpn_nms_iou)
      .get("rpn_pre_nms_train", c.rpn_pre_nms_train)
      .get("rpn_post_nms_train", c.rpn_post_nms_train)
      .get("rpn_pre_nms_test", c.rpn_pre_nms_test)
      .get("rpn_post_nms_test", c.rpn_post_nms_test)
      .get("roi_batch", c.roi_batch)
      .get("roi_fg_fraction", c.roi_fg_fraction)
      .get("roi_fg_iou", c.roi_fg_iou)
      .get("mask_rois", c.mask_rois)
      .get("box_pool", c.box_pool)
      .get("mask_pool", c.mask_pool)
      .get("head_dim", c.head_dim)
      .get("mask_dim", c.mask_dim)
      .get("score_threshold", c.score_threshold)
      .get("nms_iou", c.nms_iou)
      .get("max_detections", c.max_detections)
      .finish();
  validated(path, [&] { c.validate(); });
}

json to_json_value(const preprocess::AugmentationConfig& c) {
  const auto& p = c.probability;
  return {{"seed", c.seed},
          {"probability",
           {{"horizontal_flip", p.horizontal_flip},
            {"rotation", p.rotation},
            {"gaussian_blur", p.gaussian_blur},
            {"brightness_contrast", p.brightness_contrast},
            {"hue_saturation", p.hue_saturation}}},
          {"rotation_limit", c.rotation_limit},
          {"blur_sigma_range", {c.blur_sigma_range.first, c.blur_sigma_range.second}},
          {"brightness_contrast_limit", c.brightness_contrast_limit},
          {"hue_saturation_limit", c.hue_saturation_limit}};
}

void read(const json& j, preprocess::AugmentationConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  r.get("seed", c.seed);
  if (r.has("probability")) {
    const std::string pp = r.child("probability");
    const json& pj = r.at("probability");
    if (pj.is_number()) {
      const double v = pj.get<double>();
      c.probability = {v, v, v, v, v};
    } else {
      auto& p = c.probability;
      ObjectReader(pj, pp)
          .get("horizontal_flip", p.horizontal_flip)
          .get("rotation", p.rotation)
          .get("gaussian_blur", p.gaussian_blur)
          .get("brightness_contrast", p.brightness_contrast)
          .get("hue_saturation", p.hue_saturation)
          .finish();
    }
  }
  if (r.has("blur_sigma_range")) {
    const json& b = r.at("blur_sigma_range");
    if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number())
      throw SchemaError(r.child("blur_sigma_range"), "expected [low, high]");
    c.blur_sigma_range = {b[0].get<double>(), b[1].get<double>()};
  }
  r.get("rotation_limit", c.rotation_limit)
      .get("brightness_contrast_limit", c.brightness_contrast_limit)
      .get("hue_saturation_limit", c.hue_saturation_limit)
      .finish();
  validated(path, [&] { c.validate(); });
}

json to_json_value(const nn::OptimizerConfig& c) {
  return {{"kind", c.kind == nn::OptimizerKind::sgd ? "sgd" : "adamw"},
          {"momentum", c.momentum},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"clip_norm", c.clip_norm}};
}

void read(const json& j, nn::OptimizerConfig& c, const std::string& path) {
  ObjectReader(j, path)
      .get_enum("kind", c.kind, parse_optimizer)
      .get("momentum", c.momentum)
      .get("beta1", c.beta1)
      .get("beta2", c.beta2)
      .get("eps", c.eps)
      .get("clip_norm", c.clip_norm)
      .finish();
}

json to_json_value(const synth::SynthConfig& c) {
  return {{"n_images", c.n_images},
          {"height", c.height},
          {"width", c.width},
          {"class_mix", c.class_mix},
          {"seed", c.seed}};
}

void read(const json& j, synth::SynthConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  r.get("n_images", c.n_images).get("height", c.height).get("width", c.width).get("seed", c.seed);
  if (r.has("class_mix")) {
    const json& m = r.at("class_mix");
    if (!m.is_array() || m.size() != 3) throw SchemaError(r.child("class_mix"), "expected three numbers");
    for (int i = 0; i < 3; ++i) {
      if (!m[i].is_number()) throw SchemaError(r.child("class_mix"), "expected three numbers");
      c.class_mix[i] = m[i].get<double>();
    }
  }
  r.finish();
  validated(path, [&] { c.validate(); });
}

void read(const json& j, seg::TrainConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  r.get("learning_rate", c.learning_rate)
      .get("weight_decay", c.weight_decay)
      .get("epochs", c.epochs)
      .get("seed", c.seed)
      .get("batch_size", c.batch_size)
      .get("warmup_steps", c.warmup_steps);
  if (r.has("optimizer")) read(r.at("optimizer"), c.optimizer, r.child("optimizer"));
  if (r.has("augmentation")) read(r.at("augmentation"), c.augmentation, r.child("augmentation"));
  r.finish();
  validated(path, [&] { c.validate(); });
}

json to_json_value(const mil::MILTrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"bag_size", c.bag_size},
          {"patch_size", c.patch_size},
          {"stride", c.stride},
          {"epochs", c.epochs},
          {"pretrain_epochs", c.pretrain_epochs},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"bag_loss_weight", c.bag_loss_weight},
          {"backbone_kind", mil::to_string(c.backbone_kind)},
          {"init", mil::to_string(c.init)}};
}

void read(const json& j, mil::MILTrainConfig& c, const std::string& path) {
  ObjectReader(j, path)
      .get("batch_size", c.batch_size)
      .get("bag_size", c.bag_size)
      .get("patch_size", c.patch_size)
      .get("stride", c.stride)
      .get("epochs", c.epochs)
      .get("pretrain_epochs", c.pretrain_epochs)
      .get("learning_rate", c.learning_rate)
      .get("weight_decay", c.weight_decay)
      .get("seed", c.seed)
      .get("bag_loss_weight", c.bag_loss_weight)
      .get_enum("backbone_kind", c.backbone_kind, mil::parse_patch_backbone)
      .get_enum("init", c.init, mil::parse_mil_init)
      .finish();
  validated(path, [&] { c.validate(); });
}

}  // namespace oed::detail
