#include "oed/seg/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json_config.hpp"
#include "oed/losses.hpp"
#include "oed/nn/ops.hpp"
#include "oed/seg/roi_align.hpp"

namespace oed::seg {

using nn::Graph;
using nn::Tensor;
using nn::Var;

std::string_view to_string(MaskLossKind kind) { return kind == MaskLossKind::dice ? "dice" : "bce"; }

MaskLossKind parse_mask_loss_kind(std::string_view name) {
  if (name == "dice") return MaskLossKind::dice;
  if (name == "bce") return MaskLossKind::bce;
  throw InvalidArgument("unknown mask loss '" + std::string(name) + "'");
}

void SegModelConfig::validate() const {
  backbone.validate();
  anchors.validate();
  if (anchors.sizes.size() != 3) throw InvalidArgument("anchors.sizes needs one size per pyramid level (3)");
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument(std::string(name) + " must be in [0, 1]");
  };
  unit(rpn_fg_iou, "rpn_fg_iou");
  unit(rpn_bg_iou, "rpn_bg_iou");
  unit(rpn_fg_fraction, "rpn_fg_fraction");
  unit(rpn_nms_iou, "rpn_nms_iou");
  unit(roi_fg_fraction, "roi_fg_fraction");
  unit(roi_fg_iou, "roi_fg_iou");
  unit(score_threshold, "score_threshold");
  unit(nms_iou, "nms_iou");
  if (rpn_bg_iou > rpn_fg_iou) throw InvalidArgument("rpn_bg_iou must not exceed rpn_fg_iou");
  for (int v : {rpn_batch, rpn_pre_nms_train, rpn_post_nms_train, rpn_pre_nms_test, rpn_post_nms_test, roi_batch,
                mask_rois, box_pool, mask_pool, head_dim, mask_dim, max_detections}) {
    if (v < 1) throw InvalidArgument("seg model sizes and counts must be >= 1");
  }
}

std::string to_json(const SegModelConfig& config) { return detail::to_json_value(config).dump(); }

SegModelConfig seg_config_from_json(std::string_view text) {
  SegModelConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("<root>", e.what());
  }
  detail::read(j, c, "");
  return c;
}

double LossBreakdown::head_total() const { return loss::seg_total_loss(cls, box, mask); }

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  cls += o.cls;
  box += o.box;
  mask += o.mask;
  rpn_objectness += o.rpn_objectness;
  rpn_box += o.rpn_box;
  return *this;
}

LossBreakdown LossBreakdown::scaled(double f) const {
  return {cls * f, box * f, mask * f, rpn_objectness * f, rpn_box * f};
}

Tensor image_to_tensor(const Image& image, int multiple) {
  const int H = image.height, W = image.width;
  const int Hp = (H + multiple - 1) / multiple * multiple, Wp = (W + multiple - 1) / multiple * multiple;
  Tensor t({1, 3, Hp, Wp});
  const std::size_t plane = static_cast<std::size_t>(Hp) * Wp;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) t[c * plane + static_cast<std::size_t>(y) * Wp + x] = (image.at(x, y, c) / 255.0 - 0.5) / 0.25;
    }
  }
  return t;
}

std::vector<double> polygon_roi_target(std::span<const data::Point> polygon, const Box& box, int n) {
  std::vector<double> out(static_cast<std::size_t>(n) * n);
  const double cw = box.width() / n, ch = box.height() / n;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const data::Point p{box.x_min + (j + 0.5) * cw, box.y_min + (i + 0.5) * ch};
      out[static_cast<std::size_t>(i) * n + j] = data::point_in_polygon(p, polygon) ? 1.0 : 0.0;
    }
  }
  return out;
}

void paste_mask(std::span<const double> roi, int n, const Box& box, Raster& target) {
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x_min)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y_min)));
  const int x1 = std::min(target.width, static_cast<int>(std::ceil(box.x_max)));
  const int y1 = std::min(target.height, static_cast<int>(std::ceil(box.y_max)));
  const double sx = n / box.width(), sy = n / box.height();
  for (int y = y0; y < y1; ++y) {
    const double cy = y + 0.5;
    if (cy < box.y_min || cy >= box.y_max) continue;
    const double v = std::clamp((cy - box.y_min) * sy - 0.5, 0.0, n - 1.0);
    const int v0 = std::min(static_cast<int>(v), n - 1), v1 = std::min(v0 + 1, n - 1);
    const double fv = v - v0;
    for (int x = x0; x < x1; ++x) {
      const double cx = x + 0.5;
      if (cx < box.x_min || cx >= box.x_max) continue;
      const double u = std::clamp((cx - box.x_min) * sx - 0.5, 0.0, n - 1.0);
      const int u0 = std::min(static_cast<int>(u), n - 1), u1 = std::min(u0 + 1, n - 1);
      const double fu = u - u0;
      const double p = (1 - fv) * ((1 - fu) * roi[v0 * n + u0] + fu * roi[v0 * n + u1]) +
                       fv * ((1 - fu) * roi[v1 * n + u0] + fu * roi[v1 * n + u1]);
      target.at(x, y) = static_cast<float>(std::clamp(p, 0.0, 1.0));
    }
  }
}

struct SegModel::Heads {
  nn::Conv2d rpn_conv, rpn_obj, rpn_delta;
  nn::Linear fc1, fc2, cls, bbox;
  nn::Conv2d mask1, mask2, mask3, mask_out;
  BoxCoder rpn_coder;
  BoxCoder roi_coder{{10.0, 10.0, 5.0, 5.0}};

  Heads(const SegModelConfig& c, nn::ParamStore& s, std::mt19937_64& rng) {
    const int F = c.backbone.fpn_dim, A = c.anchors.per_location();
    rpn_conv = nn::Conv2d(s, "rpn.conv", F, F, 3, 1, 1, rng);
    rpn_obj = nn::Conv2d(s, "rpn.objectness", F, A, 1, 1, 0, rng, nn::Init::small);
    rpn_delta = nn::Conv2d(s, "rpn.deltas", F, 4 * A, 1, 1, 0, rng, nn::Init::small);
    fc1 = nn::Linear(s, "roi.fc1", F * c.box_pool * c.box_pool, c.head_dim, rng, nn::Init::he);
    fc2 = nn::Linear(s, "roi.fc2", c.head_dim, c.head_dim, rng, nn::Init::he);
    cls = nn::Linear(s, "roi.cls", c.head_dim, data::kNumClasses + 1, rng, nn::Init::small);
    bbox = nn::Linear(s, "roi.bbox", c.head_dim, 4, rng, nn::Init::small);
    mask1 = nn::Conv2d(s, "mask.conv1", F, c.mask_dim, 3, 1, 1, rng);
    mask2 = nn::Conv2d(s, "mask.conv2", c.mask_dim, c.mask_dim, 3, 1, 1, rng);
    mask3 = nn::Conv2d(s, "mask.conv3", c.mask_dim + 3, c.mask_dim, 3, 1, 1, rng);
    mask_out = nn::Conv2d(s, "mask.out", c.mask_dim, 1, 1, 1, 0, rng, nn::Init::xavier);
  }
};

namespace {

constexpr double kMinBoxSide = 1.0;

struct RpnOutputs {
  std::vector<Var> obj;     // [1, A, h, w] per level
  std::vector<Var> deltas;  // [1, 4A, h, w] per level
  std::vector<Box> anchors;
  std::vector<int> level_offset;  // first anchor of each level
  std::vector<std::pair<int, int>> level_hw;
};

// anchor index -> flat offset of its objectness logit within its level tensor
struct AnchorRef {
  int level, obj, delta0, plane;
};

AnchorRef locate(const RpnOutputs& r, int idx, int A) {
  int l = static_cast<int>(r.level_offset.size()) - 1;
  while (r.level_offset[l] > idx) --l;
  const int local = idx - r.level_offset[l];
  const auto [h, w] = r.level_hw[l];
  const int a = local % A, cell = local / A;
  const int plane = h * w;
  return {l, a * plane + cell, 4 * a * plane + cell, plane};
}

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

template <class T>
void shuffle_in_place(std::vector<T>& v, std::mt19937_64& rng) {
  // Fisher-Yates with explicit draws so results do not depend on the library's shuffle
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

std::vector<Box> gt_boxes(const preprocess::Sample& s) {
  std::vector<Box> out;
  for (const auto& a : s.annotations) out.push_back(a.bbox());
  return out;
}

}  // namespace

SegModel::SegModel(SegModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  backbone_ = build_backbone(config_.backbone, params_, rng);
  heads_ = std::make_shared<Heads>(config_, params_, rng);
}

namespace {

RpnOutputs run_rpn(Graph& g, const FeaturePyramid& pyr, const SegModelConfig& c, const nn::Conv2d& conv,
                   const nn::Conv2d& obj, const nn::Conv2d& delta) {
  RpnOutputs r;
  for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
    Var h = nn::relu(g, conv(g, pyr.levels[l]));
    r.obj.push_back(obj(g, h));
    r.deltas.push_back(delta(g, h));
    const Tensor& fv = g.value(pyr.levels[l]);
    r.level_hw.emplace_back(fv.dim(2), fv.dim(3));
    r.level_offset.push_back(static_cast<int>(r.anchors.size()));
    auto a = make_anchors(fv.dim(2), fv.dim(3), pyr.strides[l], c.anchors.sizes[l], c.anchors.aspect_ratios);
    r.anchors.insert(r.anchors.end(), a.begin(), a.end());
  }
  if (r.anchors.empty()) throw InvalidArgument("no anchors generated");
  return r;
}

std::vector<Box> propose(const Graph& g, const RpnOutputs& r, const BoxCoder& coder, int A, int pre_nms, int post_nms,
                         double nms_iou, double width, double height) {
  const int n = static_cast<int>(r.anchors.size());
  std::vector<double> score(n);
  for (int i = 0; i < n; ++i) {
    const AnchorRef ref = locate(r, i, A);
    score[i] = g.value(r.obj[ref.level])[ref.obj];
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const int k = std::min(pre_nms, n);
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](int a, int b) { return score[a] > score[b] || (score[a] == score[b] && a < b); });
  std::vector<Box> boxes;
  std::vector<double> kept_scores;
  for (int i = 0; i < k; ++i) {
    const int idx = order[i];
    const AnchorRef ref = locate(r, idx, A);
    const Tensor& d = g.value(r.deltas[ref.level]);
    const Deltas t{d[ref.delta0], d[ref.delta0 + ref.plane], d[ref.delta0 + 2 * ref.plane],
                   d[ref.delta0 + 3 * ref.plane]};
    const Box b = clip(coder.decode(r.anchors[idx], t), width, height);
    if (b.width() < kMinBoxSide || b.height() < kMinBoxSide) continue;
    boxes.push_back(b);
    kept_scores.push_back(score[idx]);
  }
  std::vector<Box> out;
  for (int i : nms(boxes, kept_scores, nms_iou, post_nms)) out.push_back(boxes[i]);
  return out;
}

}  // namespace

LossBreakdown SegModel::run(const preprocess::Sample& sample, std::mt19937_64& rng, bool backward,
                            double grad_scale) const {
  const SegModelConfig& c = config_;
  const Heads& h = *heads_;
  const int A = c.anchors.per_location();
  const double W = sample.image.width, H = sample.image.height;
  const auto gts = gt_boxes(sample);

  Graph g(backward);
  Var image = g.input(image_to_tensor(sample.image, c.backbone.pad_multiple()));
  const FeaturePyramid pyr = backbone_->forward(g, image);
  const RpnOutputs rpn = run_rpn(g, pyr, c, h.rpn_conv, h.rpn_obj, h.rpn_delta);

  LossBreakdown out;
  std::vector<std::pair<Var, Tensor>> seeds;

  // RPN targets
  {
    const AnchorMatch m = match_anchors(rpn.anchors, gts, c.rpn_fg_iou, c.rpn_bg_iou);
    std::vector<int> pos, neg;
    for (int i = 0; i < static_cast<int>(m.labels.size()); ++i) {
      if (m.labels[i] == 1) pos.push_back(i);
      else if (m.labels[i] == 0) neg.push_back(i);
    }
    shuffle_in_place(pos, rng);
    shuffle_in_place(neg, rng);
    const int npos = std::min<int>(pos.size(), static_cast<int>(std::lround(c.rpn_batch * c.rpn_fg_fraction)));
    const int nneg = std::min<int>(neg.size(), c.rpn_batch - npos);
    std::vector<int> sampled(pos.begin(), pos.begin() + npos);
    sampled.insert(sampled.end(), neg.begin(), neg.begin() + nneg);
    const double N = std::max<std::size_t>(sampled.size(), 1);

    std::vector<Tensor> gobj, gdel;
    for (std::size_t l = 0; l < rpn.obj.size(); ++l) {
      gobj.emplace_back(g.value(rpn.obj[l]).shape());
      gdel.emplace_back(g.value(rpn.deltas[l]).shape());
    }
    loss::BoxRegressionBatch batch;
    batch.lambda = 1.0;
    batch.n_box = N;
    std::vector<AnchorRef> refs;
    for (std::size_t s = 0; s < sampled.size(); ++s) {
      const int idx = sampled[s];
      const int y = s < static_cast<std::size_t>(npos) ? 1 : 0;
      const AnchorRef ref = locate(rpn, idx, A);
      refs.push_back(ref);
      const double z = g.value(rpn.obj[ref.level])[ref.obj];
      // BCE on the logit, written in the overflow-safe softplus form
      out.rpn_objectness += (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)))) / N;
      gobj[ref.level][ref.obj] += (sigmoid(z) - y) / N * grad_scale;

      const Tensor& d = g.value(rpn.deltas[ref.level]);
      batch.t.push_back({d[ref.delta0], d[ref.delta0 + ref.plane], d[ref.delta0 + 2 * ref.plane],
                         d[ref.delta0 + 3 * ref.plane]});
      batch.t_star.push_back(y ? h.rpn_coder.encode(rpn.anchors[idx], gts[m.matched_gt[idx]]) : loss::Box4{});
      batch.p_star.push_back(y);
    }
    out.rpn_box = loss::box_loss(batch);
    if (backward) {
      const auto gb = loss::box_loss_grad(batch);
      for (std::size_t s = 0; s < refs.size(); ++s) {
        for (int k = 0; k < 4; ++k) gdel[refs[s].level][refs[s].delta0 + k * refs[s].plane] += gb[s][k] * grad_scale;
      }
      for (std::size_t l = 0; l < rpn.obj.size(); ++l) {
        seeds.emplace_back(rpn.obj[l], std::move(gobj[l]));
        seeds.emplace_back(rpn.deltas[l], std::move(gdel[l]));
      }
    }
  }

  // proposals and ROI sampling
  std::vector<Box> proposals = propose(g, rpn, h.rpn_coder, A, c.rpn_pre_nms_train, c.rpn_post_nms_train,
                                       c.rpn_nms_iou, W, H);
  proposals.insert(proposals.end(), gts.begin(), gts.end());
  std::vector<int> fg, bg;
  std::vector<int> match(proposals.size(), -1);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    double best = 0.0;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double v = iou(proposals[i], gts[j]);
      if (v > best) {
        best = v;
        match[i] = static_cast<int>(j);
      }
    }
    (best >= c.roi_fg_iou ? fg : bg).push_back(static_cast<int>(i));
  }
  shuffle_in_place(fg, rng);
  shuffle_in_place(bg, rng);
  const int nfg = std::min<int>(fg.size(), static_cast<int>(std::lround(c.roi_batch * c.roi_fg_fraction)));
  const int nbg = std::min<int>(bg.size(), c.roi_batch - nfg);
  std::vector<Box> rois;
  std::vector<int> roi_label, roi_gt;
  for (int i = 0; i < nfg; ++i) {
    rois.push_back(proposals[fg[i]]);
    roi_gt.push_back(match[fg[i]]);
    roi_label.push_back(data::index_of(sample.annotations[match[fg[i]]].label()) + 1);
  }
  for (int i = 0; i < nbg; ++i) {
    rois.push_back(proposals[bg[i]]);
    roi_gt.push_back(-1);
    roi_label.push_back(0);
  }

  const int R = static_cast<int>(rois.size());
  const double stride0 = pyr.strides[0];
  if (R > 0) {
    Var pooled = roi_align(g, pyr.levels[0], rois, c.box_pool, 1.0 / stride0);
    Var flat = nn::reshape(g, pooled, {R, c.backbone.fpn_dim * c.box_pool * c.box_pool});
    Var hid = nn::relu(g, h.fc2(g, nn::relu(g, h.fc1(g, flat))));
    Var probs = nn::softmax_rows(g, h.cls(g, hid));
    Var deltas = h.bbox(g, hid);

    const Tensor& pv = g.value(probs);
    const int K = data::kNumClasses + 1;
    Tensor gp({R, K});
    for (int r = 0; r < R; ++r) {
      std::vector<double> target(K, 0.0);
      target[roi_label[r]] = 1.0;
      std::span<const double> p(pv.data() + r * K, K);
      out.cls += loss::cls_loss(p, target) / R;
      if (backward) {
        const auto gr = loss::cls_loss_grad(p, target);
        for (int k = 0; k < K; ++k) gp[r * K + k] = gr[k] / R * grad_scale;
      }
    }
    loss::BoxRegressionBatch batch;
    batch.n_box = R;
    const Tensor& dv = g.value(deltas);
    for (int r = 0; r < R; ++r) {
      batch.t.push_back({dv[r * 4], dv[r * 4 + 1], dv[r * 4 + 2], dv[r * 4 + 3]});
      batch.p_star.push_back(roi_label[r] > 0 ? 1 : 0);
      batch.t_star.push_back(roi_label[r] > 0 ? h.roi_coder.encode(rois[r], gts[roi_gt[r]]) : loss::Box4{});
    }
    out.box = loss::box_loss(batch);
    if (backward) {
      Tensor gd({R, 4});
      const auto gb = loss::box_loss_grad(batch);
      for (int r = 0; r < R; ++r) {
        for (int k = 0; k < 4; ++k) gd[r * 4 + k] = gb[r][k] * grad_scale;
      }
      seeds.emplace_back(probs, std::move(gp));
      seeds.emplace_back(deltas, std::move(gd));
    }
  }

  const int M = std::min(nfg, c.mask_rois);
  if (M > 0) {
    std::vector<Box> mrois(rois.begin(), rois.begin() + M);
    const int n = 2 * c.mask_pool;
    Var x = roi_align(g, pyr.levels[0], mrois, c.mask_pool, 1.0 / stride0);
    x = nn::relu(g, h.mask1(g, x));
    x = nn::relu(g, h.mask2(g, x));
    x = nn::upsample_nearest2x(g, x);
    x = nn::concat_channels(g, {x, roi_align(g, image, mrois, n, 1.0)});
    x = nn::relu(g, h.mask3(g, x));
    Var p = nn::sigmoid(g, h.mask_out(g, x));
    const Tensor& pv = g.value(p);
    Tensor gm({M, 1, n, n});
    const std::size_t cells = static_cast<std::size_t>(n) * n;
    for (int r = 0; r < M; ++r) {
      const auto y = polygon_roi_target(sample.annotations[roi_gt[r]].polygon(), mrois[r], n);
      const loss::MaskPair pair{y, std::span<const double>(pv.data() + r * cells, cells), n, n};
      const bool dice = c.mask_loss == MaskLossKind::dice;
      out.mask += (dice ? loss::dice_mask_loss(pair) : loss::bce_mask_loss(pair)) / M;
      if (backward) {
        const auto gr = dice ? loss::dice_mask_loss_grad(pair) : loss::bce_mask_loss_grad(pair);
        for (std::size_t k = 0; k < cells; ++k) gm[r * cells + k] = gr[k] / M * grad_scale;
      }
    }
    if (backward) seeds.emplace_back(p, std::move(gm));
  }

  if (backward) g.backward(seeds);
  return out;
}

LossBreakdown SegModel::accumulate_gradients(const preprocess::Sample& sample, std::mt19937_64& rng,
                                             double grad_scale) {
  return run(sample, rng, true, grad_scale);
}

LossBreakdown SegModel::evaluate_losses(const preprocess::Sample& sample, std::mt19937_64& rng) const {
  return run(sample, rng, false, 1.0);
}

std::vector<SegModel::RawDetection> SegModel::detect(const Image& image) const {
  const SegModelConfig& c = config_;
  const Heads& h = *heads_;
  const int A = c.anchors.per_location();
  Graph g(false);
  Var input = g.input(image_to_tensor(image, c.backbone.pad_multiple()));
  const FeaturePyramid pyr = backbone_->forward(g, input);
  const RpnOutputs rpn = run_rpn(g, pyr, c, h.rpn_conv, h.rpn_obj, h.rpn_delta);
  const std::vector<Box> proposals = propose(g, rpn, h.rpn_coder, A, c.rpn_pre_nms_test, c.rpn_post_nms_test,
                                             c.rpn_nms_iou, image.width, image.height);
  std::vector<RawDetection> out;
  if (proposals.empty()) return out;

  const int R = static_cast<int>(proposals.size());
  const double stride0 = pyr.strides[0];
  Var pooled = roi_align(g, pyr.levels[0], proposals, c.box_pool, 1.0 / stride0);
  Var flat = nn::reshape(g, pooled, {R, c.backbone.fpn_dim * c.box_pool * c.box_pool});
  Var hid = nn::relu(g, h.fc2(g, nn::relu(g, h.fc1(g, flat))));
  const Tensor& pv = g.value(nn::softmax_rows(g, h.cls(g, hid)));
  const Tensor& dv = g.value(h.bbox(g, hid));
  const int K = data::kNumClasses + 1;

  std::vector<Box> boxes;
  std::vector<double> scores;
  std::vector<data::ClassLabel> labels;
  for (int r = 0; r < R; ++r) {
    const double* p = pv.data() + r * K;
    const double score = std::clamp(1.0 - p[0], 0.0, 1.0);
    if (score < c.score_threshold) continue;
    int best = 1;
    for (int k = 2; k < K; ++k) {
      if (p[k] > p[best]) best = k;
    }
    const Box b = clip(h.roi_coder.decode(proposals[r], {dv[r * 4], dv[r * 4 + 1], dv[r * 4 + 2], dv[r * 4 + 3]}),
                       image.width, image.height);
    if (b.width() < kMinBoxSide || b.height() < kMinBoxSide) continue;
    boxes.push_back(b);
    scores.push_back(score);
    labels.push_back(data::label_from_index(best - 1));
  }
  const std::vector<int> keep = nms(boxes, scores, c.nms_iou, c.max_detections);
  if (keep.empty()) return out;

  std::vector<Box> kept;
  for (int i : keep) kept.push_back(boxes[i]);
  const int M = static_cast<int>(kept.size());
  const int n = 2 * c.mask_pool;
  Var x = roi_align(g, pyr.levels[0], kept, c.mask_pool, 1.0 / stride0);
  x = nn::relu(g, h.mask1(g, x));
  x = nn::relu(g, h.mask2(g, x));
  x = nn::upsample_nearest2x(g, x);
  x = nn::concat_channels(g, {x, roi_align(g, input, kept, n, 1.0)});
  x = nn::relu(g, h.mask3(g, x));
  const Tensor& mv = g.value(nn::sigmoid(g, h.mask_out(g, x)));
  const std::size_t cells = static_cast<std::size_t>(n) * n;
  for (int m = 0; m < M; ++m) {
    RawDetection d;
    d.det.bbox = kept[m];
    d.det.score = scores[keep[m]];
    d.det.label = labels[keep[m]];
    d.roi_mask.assign(mv.data() + m * cells, mv.data() + (m + 1) * cells);
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<data::Detection> SegModel::predict(const Image& image) const {
  if (image.empty()) throw InvalidArgument("predict: empty image");
  const bool reduce = preprocess::needs_downsample(image.width, image.height);
  const double f = reduce ? preprocess::kDownsampleFactor : 1.0;
  auto raw = detect(reduce ? preprocess::downsample_area(image, preprocess::kDownsampleFactor) : image);
  std::vector<data::Detection> out;
  const int n = 2 * config_.mask_pool;
  for (auto& r : raw) {
    data::Detection d = r.det;
    d.bbox = clip({d.bbox.x_min * f, d.bbox.y_min * f, d.bbox.x_max * f, d.bbox.y_max * f}, image.width,
                  image.height);
    d.mask = Raster(image.width, image.height);
    paste_mask(r.roi_mask, n, d.bbox, d.mask);
    out.push_back(std::move(d));
  }
  return out;
}

Checkpoint SegModel::to_checkpoint(const std::string& metadata_json) const {
  Checkpoint ck;
  ck.header = kSegCheckpointHeader;
  ck.config_json = to_json(config_);
  ck.metadata_json = metadata_json;
  ck.store_params(params_);
  return ck;
}

SegModel SegModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.header != kSegCheckpointHeader)
    throw InvalidArgument("not a segmentation checkpoint (header '" + ckpt.header + "')");
  SegModel m(seg_config_from_json(ckpt.config_json), 0);
  ckpt.load_params(m.params_);
  return m;
}

}  // namespace oed::seg
