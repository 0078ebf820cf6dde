#pragma once

#include <random>
#include <string>

#include "oed/nn/graph.hpp"
#include "oed/nn/ops.hpp"

namespace oed::nn {

enum class Init { he, xavier, small };

/// Fresh weight tensor; `fan_in` / `fan_out` drive the scale.
Tensor init_weights(Shape shape, int fan_in, int fan_out, Init kind, std::mt19937_64& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng, Init init = Init::xavier,
         bool bias = true);
  Var operator()(Graph& g, Var x) const;
  int in_features() const noexcept { return in_; }
  int out_features() const noexcept { return out_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  int in_ = 0, out_ = 0;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride, int pad,
         std::mt19937_64& rng, Init init = Init::he);
  Var operator()(Graph& g, Var x) const;
  int out_channels() const noexcept { return out_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  int out_ = 0, stride_ = 1, pad_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, int dim);
  Var operator()(Graph& g, Var x) const;

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
};

}  // namespace oed::nn
