#include <Eigen/Core>
#include <cmath>
#include <memory>

#include "oed/error.hpp"
#include "oed/nn/ops.hpp"

namespace oed::nn {

namespace {
using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Gathers rows `idx` of columns [col, col + d) of a [T, stride] buffer.
MatR gather(const double* base, int stride, const std::vector<int>& idx, int col, int d) {
  MatR m(static_cast<int>(idx.size()), d);
  for (int r = 0; r < m.rows(); ++r) {
    const double* src = base + static_cast<std::size_t>(idx[r]) * stride + col;
    for (int j = 0; j < d; ++j) m(r, j) = src[j];
  }
  return m;
}

void scatter_add(double* base, int stride, const std::vector<int>& idx, int col, const MatR& m) {
  for (int r = 0; r < m.rows(); ++r) {
    double* dst = base + static_cast<std::size_t>(idx[r]) * stride + col;
    for (int j = 0; j < m.cols(); ++j) dst[j] += m(r, j);
  }
}

void softmax_inplace(MatR& s) {
  for (int r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}
}  // namespace

Var windowed_attention(Graph& g, Var qkv, int heads, const std::vector<std::vector<int>>& windows) {
  const Tensor& in = g.value(qkv);
  if (in.rank() != 2 || in.dim(1) % 3 != 0) throw InvalidArgument("windowed_attention: qkv must be [T, 3C]");
  const int T = in.dim(0), C = in.dim(1) / 3;
  if (heads < 1 || C % heads != 0) throw InvalidArgument("windowed_attention: channels not divisible by heads");
  const int d = C / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const int stride = 3 * C;

  Tensor out({T, C});
  auto probs = std::make_shared<std::vector<MatR>>();
  probs->reserve(windows.size() * heads);
  for (const auto& win : windows) {
    for (int t : win) {
      if (t < 0 || t >= T) throw InvalidArgument("windowed_attention: token index out of range");
    }
    for (int h = 0; h < heads; ++h) {
      MatR q = gather(in.data(), stride, win, h * d, d);
      MatR k = gather(in.data(), stride, win, C + h * d, d);
      MatR v = gather(in.data(), stride, win, 2 * C + h * d, d);
      MatR p = (q * k.transpose()) * scale;
      softmax_inplace(p);
      scatter_add(out.data(), C, win, h * d, p * v);
      probs->push_back(std::move(p));
    }
  }

  return g.record(std::move(out), {qkv}, [=](Graph& gr, const Tensor& go) {
    Tensor* gq = gr.grad_slot(qkv);
    if (!gq) return;
    const Tensor& in = gr.value(qkv);
    std::size_t slot = 0;
    for (const auto& win : windows) {
      for (int h = 0; h < heads; ++h, ++slot) {
        const MatR& p = (*probs)[slot];
        MatR q = gather(in.data(), stride, win, h * d, d);
        MatR k = gather(in.data(), stride, win, C + h * d, d);
        MatR v = gather(in.data(), stride, win, 2 * C + h * d, d);
        MatR dout = gather(go.data(), C, win, h * d, d);
        MatR dv = p.transpose() * dout;
        MatR dp = dout * v.transpose();
        Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
        MatR ds = (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * scale;
        scatter_add(gq->data(), stride, win, h * d, ds * k);
        scatter_add(gq->data(), stride, win, C + h * d, ds.transpose() * q);
        scatter_add(gq->data(), stride, win, 2 * C + h * d, dv);
      }
    }
  });
}

}  // namespace oed::nn
