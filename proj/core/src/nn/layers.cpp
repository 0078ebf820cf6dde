#include "oed/nn/layers.hpp"

#include <cmath>

namespace oed::nn {

Tensor init_weights(Shape shape, int fan_in, int fan_out, Init kind, std::mt19937_64& rng) {
  double stddev = 0.0;
  switch (kind) {
    case Init::he: stddev = std::sqrt(2.0 / fan_in); break;
    case Init::xavier: stddev = std::sqrt(2.0 / (fan_in + fan_out)); break;
    case Init::small: stddev = 0.01; break;
  }
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = dist(rng);
  return t;
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng, Init init,
               bool bias)
    : in_(in), out_(out) {
  w_ = &store.create(name + ".weight", init_weights({in, out}, in, out, init, rng));
  if (bias) b_ = &store.create(name + ".bias", Tensor({out}));
}

Var Linear::operator()(Graph& g, Var x) const { return linear(g, x, g.param(*w_), b_ ? g.param(*b_) : Var{}); }

Conv2d::Conv2d(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride, int pad,
               std::mt19937_64& rng, Init init)
    : out_(out), stride_(stride), pad_(pad) {
  const int fan_in = in * kernel * kernel;
  w_ = &store.create(name + ".weight", init_weights({out, in, kernel, kernel}, fan_in, out * kernel * kernel, init, rng));
  b_ = &store.create(name + ".bias", Tensor({out}));
}

Var Conv2d::operator()(Graph& g, Var x) const { return conv2d(g, x, g.param(*w_), g.param(*b_), stride_, pad_); }

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int dim) {
  gamma_ = &store.create(name + ".gamma", Tensor({dim}, 1.0));
  beta_ = &store.create(name + ".beta", Tensor({dim}));
}

Var LayerNorm::operator()(Graph& g, Var x) const {
  return layer_norm_rows(g, x, g.param(*gamma_), g.param(*beta_));
}

}  // namespace oed::nn
