#pragma once

#include <map>
#include <string>

#include "oed/nn/graph.hpp"

namespace oed::nn {

enum class OptimizerKind { sgd, adamw };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  double momentum = 0.9;  // sgd only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; <= 0 disables.
  double clip_norm = 10.0;
};

/// SGD with momentum or Adam; weight decay is decoupled from the gradient in both.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  /// Applies one update from the accumulated gradients, then zeroes them.
  void step(ParamStore& params, double lr_scale = 1.0);
  const OptimizerConfig& config() const noexcept { return config_; }
  long steps() const noexcept { return steps_; }

 private:
  struct Slot {
    Tensor m, v;
  };
  OptimizerConfig config_;
  std::map<std::string, Slot> state_;
  long steps_ = 0;
};

double grad_norm(const ParamStore& params);

}  // namespace oed::nn
