#include "oed/seg/roi_align.hpp"

#include <cmath>
#include <memory>
#include <vector>

namespace oed::seg {

namespace {

struct Tap {
  int idx[4];
  double w[4];
};

// Matches the usual ROIAlign boundary handling: samples more than one cell outside
// the map contribute nothing, the rest are clamped to the edge.
Tap bilinear_tap(double y, double x, int H, int W) {
  Tap t{{0, 0, 0, 0}, {0, 0, 0, 0}};
  if (y < -1.0 || y > H || x < -1.0 || x > W) return t;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
  int y1, x1;
  if (y0 >= H - 1) {
    y0 = y1 = H - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= W - 1) {
    x0 = x1 = W - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - y0, lx = x - x0, hy = 1.0 - ly, hx = 1.0 - lx;
  t.idx[0] = y0 * W + x0;
  t.idx[1] = y0 * W + x1;
  t.idx[2] = y1 * W + x0;
  t.idx[3] = y1 * W + x1;
  t.w[0] = hy * hx;
  t.w[1] = hy * lx;
  t.w[2] = ly * hx;
  t.w[3] = ly * lx;
  return t;
}

}  // namespace

nn::Var roi_align(nn::Graph& g, nn::Var features, std::span<const Box> boxes, int out_size, double spatial_scale,
                  int sampling_ratio) {
  const nn::Tensor& f = g.value(features);
  if (f.rank() != 4 || f.dim(0) != 1) throw InvalidArgument("roi_align: features must be [1, C, H, W]");
  if (out_size < 1 || sampling_ratio < 1) throw InvalidArgument("roi_align: out_size and sampling_ratio must be >= 1");
  const int C = f.dim(1), H = f.dim(2), W = f.dim(3);
  const int R = static_cast<int>(boxes.size());
  const int S = sampling_ratio;
  const int bins = out_size * out_size;

  // taps[r][bin][sample]
  auto taps = std::make_shared<std::vector<Tap>>();
  taps->reserve(static_cast<std::size_t>(R) * bins * S * S);
  for (const Box& b : boxes) {
    if (!(b.width() > 0) || !(b.height() > 0)) throw InvalidArgument("roi_align: degenerate box");
    const double x0 = b.x_min * spatial_scale - 0.5, y0 = b.y_min * spatial_scale - 0.5;
    const double bw = b.width() * spatial_scale / out_size, bh = b.height() * spatial_scale / out_size;
    for (int py = 0; py < out_size; ++py) {
      for (int px = 0; px < out_size; ++px) {
        for (int iy = 0; iy < S; ++iy) {
          const double y = y0 + py * bh + (iy + 0.5) * bh / S;
          for (int ix = 0; ix < S; ++ix) {
            const double x = x0 + px * bw + (ix + 0.5) * bw / S;
            taps->push_back(bilinear_tap(y, x, H, W));
          }
        }
      }
    }
  }

  const double inv = 1.0 / (S * S);
  nn::Tensor out({R, C, out_size, out_size});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < C; ++c) {
      const double* src = f.data() + c * plane;
      double* dst = out.data() + (static_cast<std::size_t>(r) * C + c) * bins;
      const Tap* tp = taps->data() + static_cast<std::size_t>(r) * bins * S * S;
      for (int bin = 0; bin < bins; ++bin) {
        double acc = 0.0;
        for (int s = 0; s < S * S; ++s, ++tp) {
          acc += tp->w[0] * src[tp->idx[0]] + tp->w[1] * src[tp->idx[1]] + tp->w[2] * src[tp->idx[2]] +
                 tp->w[3] * src[tp->idx[3]];
        }
        dst[bin] = acc * inv;
      }
    }
  }

  return g.record(std::move(out), {features}, [=](nn::Graph& gr, const nn::Tensor& go) {
    nn::Tensor* gf = gr.grad_slot(features);
    if (!gf) return;
    for (int r = 0; r < R; ++r) {
      for (int c = 0; c < C; ++c) {
        double* dst = gf->data() + c * plane;
        const double* src = go.data() + (static_cast<std::size_t>(r) * C + c) * bins;
        const Tap* tp = taps->data() + static_cast<std::size_t>(r) * bins * S * S;
        for (int bin = 0; bin < bins; ++bin) {
          const double gv = src[bin] * inv;
          for (int s = 0; s < S * S; ++s, ++tp) {
            for (int k = 0; k < 4; ++k) dst[tp->idx[k]] += tp->w[k] * gv;
          }
        }
      }
    }
  });
}

}  // namespace oed::seg
