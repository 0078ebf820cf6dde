#include <benchmark/benchmark.h>

#include <random>

#include "oed/losses.hpp"
#include "oed/metrics.hpp"
#include "oed/mil.hpp"
#include "oed/nn/ops.hpp"
#include "oed/seg/boxes.hpp"
#include "oed/seg/model.hpp"
#include "oed/seg/roi_align.hpp"
#include "oed/synth.hpp"

using namespace oed;

namespace {

std::vector<double> uniform(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<data::Box> random_boxes(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.0, 100.0), len(4.0, 28.0);
  std::vector<data::Box> boxes;
  for (int i = 0; i < n; ++i) {
    const double x = pos(rng), y = pos(rng);
    boxes.push_back({x, y, x + len(rng), y + len(rng)});
  }
  return boxes;
}

preprocess::Sample sample(std::uint32_t seed) {
  synth::SynthConfig c;
  c.n_images = 1;
  c.seed = seed;
  return synth::generate_samples(c)[0];
}

}  // namespace

static void BM_DiceLossGrad(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto y = uniform(side * side, 1), p = uniform(side * side, 2);
  const loss::MaskPair pair{y, p, side, side};
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss::dice_mask_loss(pair));
    benchmark::DoNotOptimize(loss::dice_mask_loss_grad(pair));
  }
}
BENCHMARK(BM_DiceLossGrad)->Arg(28)->Arg(128);

static void BM_Nms(benchmark::State& state) {
  const auto boxes = random_boxes(static_cast<int>(state.range(0)), 3);
  const auto scores = uniform(boxes.size(), 4);
  for (auto _ : state) benchmark::DoNotOptimize(seg::nms(boxes, scores, 0.7));
}
BENCHMARK(BM_Nms)->Arg(300)->Arg(2000);

static void BM_RoiAlign(benchmark::State& state) {
  const auto boxes = random_boxes(static_cast<int>(state.range(0)), 5);
  nn::Tensor fm({1, 32, 16, 16}, uniform(32 * 16 * 16, 6));
  for (auto _ : state) {
    nn::Graph g(false);
    benchmark::DoNotOptimize(seg::roi_align(g, g.input(fm), boxes, 7, 1.0 / 8.0));
  }
}
BENCHMARK(BM_RoiAlign)->Arg(64);

static void BM_WindowedAttentionBackward(benchmark::State& state) {
  const int grid = 16, dim = 64, heads = 4;
  const auto windows = nn::make_windows(grid, grid, static_cast<int>(state.range(0)));
  nn::Parameter qkv{"qkv", nn::Tensor({grid * grid, 3 * dim}, uniform(grid * grid * 3 * dim, 7)), {}};
  qkv.grad = nn::Tensor({grid * grid, 3 * dim});
  for (auto _ : state) {
    nn::Graph g;
    const nn::Var out = nn::windowed_attention(g, g.param(qkv), heads, windows);
    const std::pair<nn::Var, nn::Tensor> seed{out, nn::Tensor(g.value(out).shape(), 1.0)};
    g.backward(std::span(&seed, 1));
    benchmark::DoNotOptimize(qkv.grad[0]);
  }
}
BENCHMARK(BM_WindowedAttentionBackward)->Arg(4)->Arg(16);

static void BM_SegPredict(benchmark::State& state) {
  seg::SegModelConfig c;
  c.backbone.kind = state.range(0) == 0 ? seg::BackboneKind::windowed_transformer : seg::BackboneKind::conv_fpn;
  const seg::SegModel model(c, 1);
  const Image img = sample(8).image;
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(img));
  state.SetLabel(state.range(0) == 0 ? "transformer" : "conv");
}
BENCHMARK(BM_SegPredict)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_ClassifyLesion(benchmark::State& state) {
  const mil::MilModel model(mil::MILTrainConfig{}, 2);
  const auto s = sample(9);
  const data::Box box = s.annotations.front().bbox();
  for (auto _ : state) benchmark::DoNotOptimize(model.classify_lesion(s.image, box));
}
BENCHMARK(BM_ClassifyLesion)->Unit(benchmark::kMillisecond);

static void BM_MatchDetections(benchmark::State& state) {
  const auto truth = random_boxes(20, 10), pred = random_boxes(static_cast<int>(state.range(0)), 11);
  const auto scores = uniform(pred.size(), 12);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::match_detections(pred, scores, truth, 0.25));
}
BENCHMARK(BM_MatchDetections)->Arg(20)->Arg(200);

BENCHMARK_MAIN();
