#include <random>

#include "doctest.h"
#include "oed/checkpoint.hpp"
#include "oed/seg/backbone.hpp"
#include "oed/seg/model.hpp"
#include "oed/seg/train.hpp"
#include "oed/synth.hpp"
#include "oracles.hpp"
#include "suites.hpp"

using namespace oed;
using namespace oed::seg;

namespace {

SegModelConfig tiny_config() {
  SegModelConfig c;
  c.backbone.embed_dim = 16;
  c.backbone.depth = 1;
  c.backbone.num_heads = 2;
  c.backbone.fpn_dim = 8;
  c.head_dim = 16;
  c.mask_dim = 4;
  c.mask_pool = 4;
  c.box_pool = 3;
  c.roi_batch = 8;
  c.mask_rois = 2;
  c.rpn_batch = 16;
  return c;
}

std::vector<preprocess::Sample> samples(int n, std::uint32_t seed, int side = 128) {
  synth::SynthConfig c;
  c.n_images = n;
  c.seed = seed;
  c.width = c.height = side;
  return synth::generate_samples(c);
}

TrainConfig quick_train(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.seed = 5;
  t.warmup_steps = 5;
  return t;
}

bool same_detections(const std::vector<data::Detection>& a, const std::vector<data::Detection>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i].bbox == b[i].bbox) || a[i].label != b[i].label || a[i].score != b[i].score ||
        !(a[i].mask == b[i].mask))
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("128 and 512 inputs give valid pyramids") {
  BackboneConfig c;
  for (auto kind : {BackboneKind::windowed_transformer, BackboneKind::conv_fpn}) {
    c.kind = kind;
    nn::ParamStore store;
    std::mt19937_64 rng(1);
    const auto backbone = build_backbone(c, store, rng);
    for (int side : {128, 512}) {
      nn::Graph g(false);
      const nn::Var img = g.input(image_to_tensor(Image(side, side, 90), c.pad_multiple()));
      const FeaturePyramid p = backbone->forward(g, img);
      REQUIRE(p.levels.size() == 3);
      for (std::size_t l = 0; l < 3; ++l) {
        const nn::Tensor& t = g.value(p.levels[l]);
        CHECK(t.dim(1) == c.fpn_dim);
        CHECK(t.dim(2) == side / p.strides[l]);
        CHECK(t.dim(3) == side / p.strides[l]);
        for (std::size_t k = 0; k < t.numel(); ++k) REQUIRE(std::isfinite(t[k]));
      }
    }
  }
}

TEST_CASE("128 input with patch 16 gives an 8x8 token grid") {
  BackboneConfig c;
  c.patch_size = 16;
  c.window_size = 4;
  nn::ParamStore store;
  std::mt19937_64 rng(2);
  const auto backbone = build_backbone(c, store, rng);
  nn::Graph g(false);
  const FeaturePyramid p = backbone->forward(g, g.input(image_to_tensor(Image(128, 128), c.pad_multiple())));
  CHECK(p.strides[1] == 16);
  CHECK(g.value(p.levels[1]).dim(2) == 8);
  CHECK(g.value(p.levels[1]).dim(3) == 8);
  CHECK(c.pad_multiple() % 64 == 0);
}

TEST_CASE("backbone config validation") {
  BackboneConfig c;
  c.embed_dim = 30;
  c.num_heads = 4;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.patch_size = 12;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.depth = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK(parse_backbone_kind("conv_fpn") == BackboneKind::conv_fpn);
  CHECK_THROWS_AS(parse_backbone_kind("resnet"), InvalidArgument);
  CHECK_THROWS_AS(parse_mask_loss_kind("focal"), InvalidArgument);
}

TEST_CASE("mask loss toggle changes only the mask term") {
  const auto s = samples(1, 3)[0];
  SegModelConfig dice = tiny_config(), bce = tiny_config();
  bce.mask_loss = MaskLossKind::bce;
  const SegModel a(dice, 11), b(bce, 11);
  std::mt19937_64 ra(4), rb(4);
  const LossBreakdown la = a.evaluate_losses(s, ra), lb = b.evaluate_losses(s, rb);
  CHECK(la.cls == lb.cls);
  CHECK(la.box == lb.box);
  CHECK(la.rpn_objectness == lb.rpn_objectness);
  CHECK(la.rpn_box == lb.rpn_box);
  CHECK(la.mask != lb.mask);
  CHECK(la.total() == doctest::Approx(la.cls + la.box + la.mask + la.rpn_objectness + la.rpn_box));
}

TEST_CASE("mask-head gradient matches finite differences on a frozen tiny model") {
  const auto s = samples(1, 8, 64)[0];
  SegModel model(tiny_config(), 21);
  std::mt19937_64 rng(9);
  for (auto* p : model.params().all()) p->grad.fill(0.0);
  model.accumulate_gradients(s, rng);

  std::vector<double> analytic, numeric;
  std::mt19937_64 pick(10);
  for (const char* name : {"mask.conv1.weight", "mask.conv2.bias", "mask.conv3.weight", "mask.out.weight",
                           "mask.out.bias"}) {
    nn::Parameter& p = model.params().get(name);
    for (int k = 0; k < 4; ++k) {
      const std::size_t i = pick() % p.value.numel();
      analytic.push_back(p.grad[i]);
      const double x0 = p.value[i];
      numeric.push_back(testing::central_difference(
          [&](const std::vector<double>& x) {
            p.value[i] = x[0];
            std::mt19937_64 r(9);
            const LossBreakdown l = model.evaluate_losses(s, r);
            p.value[i] = x0;
            return l.total();
          },
          {x0}, testing::kFdStep)[0]);
    }
  }
  const double err = testing::relative_error(analytic, numeric);
  INFO("relative error " << err);
  CHECK(err <= testing::kGradientTol);
}

TEST_CASE("one epoch on two images is deterministic") {
  const auto train = samples(2, 4);
  const auto a = train_seg(train, tiny_config(), quick_train(1));
  const auto b = train_seg(train, tiny_config(), quick_train(1));
  REQUIRE(a.history.size() == 1);
  CHECK(a.history[0].total() == b.history[0].total());
  CHECK(a.history[0].mask == b.history[0].mask);
}

TEST_CASE("checkpoint reload reproduces predictions bit for bit") {
  const SegModel model(tiny_config(), 33);
  const auto img = samples(1, 12)[0].image;
  const Checkpoint ck = model.to_checkpoint();
  CHECK(ck.header == kSegCheckpointHeader);
  const auto bytes = encode_checkpoint(ck);
  const SegModel back = SegModel::from_checkpoint(decode_checkpoint(bytes));
  CHECK(same_detections(model.predict(img), back.predict(img)));
  CHECK(encode_checkpoint(back.to_checkpoint()) == bytes);

  Checkpoint wrong = ck;
  wrong.header = kMilCheckpointHeader;
  CHECK_THROWS(SegModel::from_checkpoint(wrong));
}

TEST_CASE("training on 20 images lowers the loss and leaves a blank image empty") {
  const auto train = samples(20, 6);
  TrainConfig t = quick_train(10);
  t.augmentation = preprocess::AugmentationConfig::disabled();
  const auto r = train_seg(train, SegModelConfig{}, t);
  REQUIRE(r.history.size() == 10);
  CHECK(r.history.back().total() < r.history.front().total());

  synth::SynthConfig sc;
  const Image blank = synth::render_background(sc, 3);
  CHECK(r.model.predict(blank).empty());

  const auto img = samples(1, 77)[0].image;
  const auto d1 = r.model.predict(img), d2 = r.model.predict(img);
  CHECK(same_detections(d1, d2));
  for (const auto& d : d1) {
    CHECK_NOTHROW(d.validate());
    CHECK(d.score >= r.model.config().score_threshold);
    CHECK(d.mask.width == img.width);
    CHECK(d.mask.height == img.height);
  }
}

TEST_CASE("train config validation") {
  TrainConfig t;
  t.learning_rate = 0.0;
  CHECK_THROWS_AS(t.validate(), InvalidArgument);
  t = {};
  t.weight_decay = -1.0;
  CHECK_THROWS_AS(t.validate(), InvalidArgument);
  CHECK_THROWS_AS(train_seg(std::vector<preprocess::Sample>{}, SegModelConfig{}, TrainConfig{}), InvalidArgument);
  CHECK(lr_schedule(0, 100, 10) < lr_schedule(9, 100, 10));
  CHECK(lr_schedule(99, 100, 10) == doctest::Approx(0.05).epsilon(1e-9));
}
