#include "oed/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "oed/error.hpp"

namespace oed::nn {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw InvalidArgument(std::string(op) + ": " + what);
}

void accumulate(Tensor* slot, const Tensor& g) {
  if (slot) *slot += g;
}

Var unary(Graph& g, Var x, auto&& f, auto&& df_from_xy) {
  const Tensor& in = g.value(x);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = f(in[i]);
  return g.record(std::move(out), {x}, [x, df_from_xy](Graph& gr, const Tensor& go) {
    Tensor* gx = gr.grad_slot(x);
    if (!gx) return;
    const Tensor& in = gr.value(x);
    for (std::size_t i = 0; i < in.numel(); ++i) (*gx)[i] += go[i] * df_from_xy(in[i]);
  });
}

void im2col(const double* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, double* cols) {
  const int L = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * L;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, double* dx) {
  const int L = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * L;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          double* dst = dx + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var add(Graph& g, Var a, Var b) {
  const Tensor& va = g.value(a);
  const Tensor& vb = g.value(b);
  require(va.numel() == vb.numel(), "add", "shape mismatch " + to_string(va.shape()) + " vs " + to_string(vb.shape()));
  Tensor out = va;
  out += vb;
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& go) {
    accumulate(gr.grad_slot(a), go);
    accumulate(gr.grad_slot(b), go);
  });
}

Var scale(Graph& g, Var x, double factor) {
  Tensor out = g.value(x);
  for (double& v : out.storage()) v *= factor;
  return g.record(std::move(out), {x}, [x, factor](Graph& gr, const Tensor& go) {
    if (Tensor* gx = gr.grad_slot(x)) {
      for (std::size_t i = 0; i < go.numel(); ++i) (*gx)[i] += factor * go[i];
    }
  });
}

Var linear(Graph& g, Var x, Var w, Var b) {
  const Tensor& vx = g.value(x);
  const Tensor& vw = g.value(w);
  require(vx.rank() == 2 && vw.rank() == 2 && vx.dim(1) == vw.dim(0), "linear",
          "bad shapes " + to_string(vx.shape()) + " x " + to_string(vw.shape()));
  const int n = vx.dim(0), in = vx.dim(1), out_dim = vw.dim(1);
  Tensor out({n, out_dim});
  MapR Y(out.data(), n, out_dim);
  Y.noalias() = CMapR(vx.data(), n, in) * CMapR(vw.data(), in, out_dim);
  if (b.valid()) {
    const Tensor& vb = g.value(b);
    require(static_cast<int>(vb.numel()) == out_dim, "linear", "bias size mismatch");
    Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(vb.data(), out_dim);
  }
  std::vector<Var> parents{x, w};
  if (b.valid()) parents.push_back(b);
  return g.record(std::move(out), parents, [x, w, b, n, in, out_dim](Graph& gr, const Tensor& go) {
    CMapR dY(go.data(), n, out_dim);
    if (Tensor* gx = gr.grad_slot(x)) {
      MapR(gx->data(), n, in).noalias() += dY * CMapR(gr.value(w).data(), in, out_dim).transpose();
    }
    if (Tensor* gw = gr.grad_slot(w)) {
      MapR(gw->data(), in, out_dim).noalias() += CMapR(gr.value(x).data(), n, in).transpose() * dY;
    }
    if (b.valid()) {
      if (Tensor* gb = gr.grad_slot(b)) {
        Eigen::Map<Eigen::RowVectorXd>(gb->data(), out_dim) += dY.colwise().sum();
      }
    }
  });
}

Var relu(Graph& g, Var x) {
  return unary(g, x, [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Var gelu(Graph& g, Var x) {
  static constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  static constexpr double c = 0.044715;
  return unary(
      g, x, [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); },
      [](double v) {
        const double t = std::tanh(k * (v + c * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v);
      });
}

Var sigmoid(Graph& g, Var x) {
  auto sig = [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(g, x, sig, [sig](double v) {
    const double s = sig(v);
    return s * (1.0 - s);
  });
}

Var softmax_rows(Graph& g, Var x) {
  const Tensor& in = g.value(x);
  require(in.rank() == 2, "softmax_rows", "expected rank 2");
  const int n = in.dim(0), k = in.dim(1);
  Tensor out(in.shape());
  for (int r = 0; r < n; ++r) {
    const double* src = in.data() + static_cast<std::size_t>(r) * k;
    double* dst = out.data() + static_cast<std::size_t>(r) * k;
    const double mx = *std::max_element(src, src + k);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += (dst[j] = std::exp(src[j] - mx));
    for (int j = 0; j < k; ++j) dst[j] /= sum;
  }
  const Var self{static_cast<int>(g.size())};
  return g.record(std::move(out), {x}, [x, self, n, k](Graph& gr, const Tensor& go) {
    Tensor* gx = gr.grad_slot(x);
    if (!gx) return;
    const Tensor& p = gr.value(self);
    for (int r = 0; r < n; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * k;
      double dot = 0.0;
      for (int j = 0; j < k; ++j) dot += go[off + j] * p[off + j];
      for (int j = 0; j < k; ++j) (*gx)[off + j] += p[off + j] * (go[off + j] - dot);
    }
  });
}

Var layer_norm_rows(Graph& g, Var x, Var gamma, Var beta, double eps) {
  const Tensor& in = g.value(x);
  require(in.rank() == 2, "layer_norm_rows", "expected rank 2");
  const int n = in.dim(0), c = in.dim(1);
  const Tensor& ga = g.value(gamma);
  const Tensor& be = g.value(beta);
  require(static_cast<int>(ga.numel()) == c && static_cast<int>(be.numel()) == c, "layer_norm_rows", "affine size");
  Tensor out(in.shape());
  auto xhat = std::make_shared<std::vector<double>>(in.numel());
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (int r = 0; r < n; ++r) {
    const double* src = in.data() + static_cast<std::size_t>(r) * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += src[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (src[j] - mean) * (src[j] - mean);
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int j = 0; j < c; ++j) {
      const double h = (src[j] - mean) * is;
      (*xhat)[static_cast<std::size_t>(r) * c + j] = h;
      out[static_cast<std::size_t>(r) * c + j] = h * ga[j] + be[j];
    }
  }
  return g.record(std::move(out), {x, gamma, beta}, [x, gamma, beta, n, c, xhat, inv_std](Graph& gr, const Tensor& go) {
    const Tensor& ga = gr.value(gamma);
    Tensor* gx = gr.grad_slot(x);
    Tensor* gg = gr.grad_slot(gamma);
    Tensor* gb = gr.grad_slot(beta);
    for (int r = 0; r < n; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * c;
      double m1 = 0.0, m2 = 0.0;
      for (int j = 0; j < c; ++j) {
        const double d = go[off + j] * ga[j];
        m1 += d;
        m2 += d * (*xhat)[off + j];
        if (gg) (*gg)[j] += go[off + j] * (*xhat)[off + j];
        if (gb) (*gb)[j] += go[off + j];
      }
      if (!gx) continue;
      m1 /= c;
      m2 /= c;
      for (int j = 0; j < c; ++j) {
        const double d = go[off + j] * ga[j];
        (*gx)[off + j] += (*inv_std)[r] * (d - m1 - (*xhat)[off + j] * m2);
      }
    }
  });
}

Var conv2d(Graph& g, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& vx = g.value(x);
  const Tensor& vw = g.value(w);
  require(vx.rank() == 4 && vw.rank() == 4 && vw.dim(1) == vx.dim(1) && vw.dim(2) == vw.dim(3), "conv2d",
          "bad shapes x" + to_string(vx.shape()) + " w" + to_string(vw.shape()));
  require(stride >= 1 && pad >= 0, "conv2d", "bad stride/pad");
  const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  const int O = vw.dim(0), k = vw.dim(2);
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  require(Ho >= 1 && Wo >= 1, "conv2d", "input smaller than kernel");
  const int K = C * k * k, L = Ho * Wo;
  const bool pointwise = k == 1 && stride == 1 && pad == 0;

  Tensor out({N, O, Ho, Wo});
  Storage cols(pointwise ? 0 : static_cast<std::size_t>(K) * L);
  CMapR Wm(vw.data(), O, K);
  for (int n = 0; n < N; ++n) {
    const double* xn = vx.data() + static_cast<std::size_t>(n) * C * H * W;
    if (!pointwise) im2col(xn, C, H, W, k, stride, pad, Ho, Wo, cols.data());
    MapR Y(out.data() + static_cast<std::size_t>(n) * O * L, O, L);
    Y.noalias() = Wm * CMapR(pointwise ? xn : cols.data(), K, L);
    if (b.valid()) Y.colwise() += Eigen::Map<const Eigen::VectorXd>(g.value(b).data(), O);
  }

  std::vector<Var> parents{x, w};
  if (b.valid()) parents.push_back(b);
  return g.record(std::move(out), parents, [=](Graph& gr, const Tensor& go) {
    const Tensor& vx = gr.value(x);
    const Tensor& vw = gr.value(w);
    Tensor* gx = gr.grad_slot(x);
    Tensor* gw = gr.grad_slot(w);
    Tensor* gb = b.valid() ? gr.grad_slot(b) : nullptr;
    Storage cols(pointwise ? 0 : static_cast<std::size_t>(K) * L);
    Storage dcols(pointwise || !gx ? 0 : static_cast<std::size_t>(K) * L);
    CMapR Wm(vw.data(), O, K);
    for (int n = 0; n < N; ++n) {
      const double* xn = vx.data() + static_cast<std::size_t>(n) * C * H * W;
      CMapR dY(go.data() + static_cast<std::size_t>(n) * O * L, O, L);
      if (gw) {
        if (!pointwise) im2col(xn, C, H, W, k, stride, pad, Ho, Wo, cols.data());
        MapR(gw->data(), O, K).noalias() += dY * CMapR(pointwise ? xn : cols.data(), K, L).transpose();
      }
      if (gb) Eigen::Map<Eigen::VectorXd>(gb->data(), O) += dY.rowwise().sum();
      if (gx) {
        double* dxn = gx->data() + static_cast<std::size_t>(n) * C * H * W;
        if (pointwise) {
          MapR(dxn, K, L).noalias() += Wm.transpose() * dY;
        } else {
          MapR(dcols.data(), K, L).noalias() = Wm.transpose() * dY;
          col2im(dcols.data(), C, H, W, k, stride, pad, Ho, Wo, dxn);
        }
      }
    }
  });
}

Var upsample_nearest2x(Graph& g, Var x) {
  const Tensor& in = g.value(x);
  require(in.rank() == 4, "upsample_nearest2x", "expected NCHW");
  const int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  Tensor out({N, C, 2 * H, 2 * W});
  for (int p = 0; p < N * C; ++p) {
    const double* src = in.data() + static_cast<std::size_t>(p) * H * W;
    double* dst = out.data() + static_cast<std::size_t>(p) * 4 * H * W;
    for (int y = 0; y < 2 * H; ++y) {
      for (int xx = 0; xx < 2 * W; ++xx) dst[y * 2 * W + xx] = src[(y / 2) * W + xx / 2];
    }
  }
  return g.record(std::move(out), {x}, [x, N, C, H, W](Graph& gr, const Tensor& go) {
    Tensor* gx = gr.grad_slot(x);
    if (!gx) return;
    for (int p = 0; p < N * C; ++p) {
      const double* src = go.data() + static_cast<std::size_t>(p) * 4 * H * W;
      double* dst = gx->data() + static_cast<std::size_t>(p) * H * W;
      for (int y = 0; y < 2 * H; ++y) {
        for (int xx = 0; xx < 2 * W; ++xx) dst[(y / 2) * W + xx / 2] += src[y * 2 * W + xx];
      }
    }
  });
}

Var maxpool2x2(Graph& g, Var x) {
  const Tensor& in = g.value(x);
  require(in.rank() == 4, "maxpool2x2", "expected NCHW");
  const int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Tensor out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int>>(out.numel());
  for (int p = 0; p < N * C; ++p) {
    const double* src = in.data() + static_cast<std::size_t>(p) * H * W;
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        int best = -1;
        double bv = -std::numeric_limits<double>::infinity();
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int iy = 2 * oy + dy, ix = 2 * ox + dx;
            if (iy >= H || ix >= W) continue;
            if (src[iy * W + ix] > bv || best < 0) {
              bv = src[iy * W + ix];
              best = iy * W + ix;
            }
          }
        }
        const std::size_t o = static_cast<std::size_t>(p) * Ho * Wo + oy * Wo + ox;
        out[o] = bv;
        (*argmax)[o] = best;
      }
    }
  }
  return g.record(std::move(out), {x}, [x, N, C, H, W, Ho, Wo, argmax](Graph& gr, const Tensor& go) {
    Tensor* gx = gr.grad_slot(x);
    if (!gx) return;
    for (int p = 0; p < N * C; ++p) {
      for (int o = 0; o < Ho * Wo; ++o) {
        const std::size_t oi = static_cast<std::size_t>(p) * Ho * Wo + o;
        (*gx)[static_cast<std::size_t>(p) * H * W + (*argmax)[oi]] += go[oi];
      }
    }
  });
}

Var global_avg_pool(Graph& g, Var x) {
  const Tensor& in = g.value(x);
  require(in.rank() == 4, "global_avg_pool", "expected NCHW");
  const int N = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
  Tensor out({N, C});
  for (int p = 0; p < N * C; ++p) {
    const double* src = in.data() + static_cast<std::size_t>(p) * HW;
    double s = 0.0;
    for (int i = 0; i < HW; ++i) s += src[i];
    out[p] = s / HW;
  }
  return g.record(std::move(out), {x}, [x, N, C, HW](Graph& gr, const Tensor& go) {
    Tensor* gx = gr.grad_slot(x);
    if (!gx) return;
    for (int p = 0; p < N * C; ++p) {
      double* dst = gx->data() + static_cast<std::size_t>(p) * HW;
      const double v = go[p] / HW;
      for (int i = 0; i < HW; ++i) dst[i] += v;
    }
  });
}

Var concat_channels(Graph& g, const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_channels", "no inputs");
  const Tensor& first = g.value(xs[0]);
  require(first.rank() == 4, "concat_channels", "expected NCHW");
  const int N = first.dim(0), H = first.dim(2), W = first.dim(3);
  std::vector<int> chans;
  int total = 0;
  for (Var v : xs) {
    const Tensor& t = g.value(v);
    require(t.rank() == 4 && t.dim(0) == N && t.dim(2) == H && t.dim(3) == W, "concat_channels", "shape mismatch");
    chans.push_back(t.dim(1));
    total += t.dim(1);
  }
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out({N, total, H, W});
  for (int n = 0; n < N; ++n) {
    std::size_t off = static_cast<std::size_t>(n) * total * hw;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Tensor& t = g.value(xs[i]);
      const double* src = t.data() + static_cast<std::size_t>(n) * chans[i] * hw;
      std::copy(src, src + chans[i] * hw, out.data() + off);
      off += chans[i] * hw;
    }
  }
  return g.record(std::move(out), xs, [xs, chans, N, total, hw](Graph& gr, const Tensor& go) {
    for (int n = 0; n < N; ++n) {
      std::size_t off = static_cast<std::size_t>(n) * total * hw;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (Tensor* gx = gr.grad_slot(xs[i])) {
          double* dst = gx->data() + static_cast<std::size_t>(n) * chans[i] * hw;
          for (std::size_t j = 0; j < chans[i] * hw; ++j) dst[j] += go[off + j];
        }
        off += chans[i] * hw;
      }
    }
  });
}

Var reshape(Graph& g, Var x, Shape shape) {
  Tensor out = g.value(x).reshaped(std::move(shape));
  return g.record(std::move(out), {x}, [x](Graph& gr, const Tensor& go) {
    if (Tensor* gx = gr.grad_slot(x)) {
      for (std::size_t i = 0; i < go.numel(); ++i) (*gx)[i] += go[i];
    }
  });
}

Var transpose2d(Graph& g, Var x) {
  const Tensor& in = g.value(x);
  require(in.rank() == 2, "transpose2d", "expected rank 2");
  const int a = in.dim(0), b = in.dim(1);
  Tensor out({b, a});
  MapR(out.data(), b, a) = CMapR(in.data(), a, b).transpose();
  return g.record(std::move(out), {x}, [x, a, b](Graph& gr, const Tensor& go) {
    if (Tensor* gx = gr.grad_slot(x)) MapR(gx->data(), a, b) += CMapR(go.data(), b, a).transpose();
  });
}

Var map_to_tokens(Graph& g, Var x) {
  const Tensor& in = g.value(x);
  require(in.rank() == 4 && in.dim(0) == 1, "map_to_tokens", "expected [1,C,H,W]");
  const int C = in.dim(1), HW = in.dim(2) * in.dim(3);
  return transpose2d(g, reshape(g, x, {C, HW}));
}

Var tokens_to_map(Graph& g, Var x, int height, int width) {
  const Tensor& in = g.value(x);
  require(in.rank() == 2 && in.dim(0) == height * width, "tokens_to_map", "token count mismatch");
  const int C = in.dim(1);
  return reshape(g, transpose2d(g, x), {1, C, height, width});
}

std::vector<std::vector<int>> make_windows(int h, int w, int window) {
  if (window < 1) throw InvalidArgument("window size must be >= 1");
  const int wy = (h + window - 1) / window, wx = (w + window - 1) / window;
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(wy) * wx);
  for (int by = 0; by < wy; ++by) {
    for (int bx = 0; bx < wx; ++bx) {
      std::vector<int> idx;
      for (int y = by * window; y < std::min(h, (by + 1) * window); ++y) {
        for (int x = bx * window; x < std::min(w, (bx + 1) * window); ++x) idx.push_back(y * w + x);
      }
      out.push_back(std::move(idx));
    }
  }
  return out;
}

}  // namespace oed::nn
