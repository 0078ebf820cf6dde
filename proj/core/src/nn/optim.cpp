#include "oed/nn/optim.hpp"

#include <cmath>

namespace oed::nn {

double grad_norm(const ParamStore& params) {
  double s = 0.0;
  for (const Parameter* p : params.all()) {
    for (double v : p->grad.values()) s += v * v;
  }
  return std::sqrt(s);
}

void Optimizer::step(ParamStore& params, double lr_scale) {
  ++steps_;
  const double lr = config_.learning_rate * lr_scale;
  double clip = 1.0;
  if (config_.clip_norm > 0.0) {
    const double norm = grad_norm(params);
    if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (Parameter* p : params.all()) {
    Slot& s = state_[p->name];
    if (s.m.empty()) s.m = Tensor(p->value.shape());
    if (config_.kind == OptimizerKind::adamw && s.v.empty()) s.v = Tensor(p->value.shape());
    double* w = p->value.data();
    const double* gr = p->grad.data();
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double gi = gr[i] * clip;
      w[i] -= lr * config_.weight_decay * w[i];
      if (config_.kind == OptimizerKind::sgd) {
        s.m[i] = config_.momentum * s.m[i] + gi;
        w[i] -= lr * s.m[i];
      } else {
        s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * gi;
        s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * gi * gi;
        w[i] -= lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + config_.eps);
      }
    }
    p->grad.fill(0.0);
  }
}

}  // namespace oed::nn
