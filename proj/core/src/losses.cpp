#include "oed/losses.hpp"

#include <cmath>
#include <string>

namespace oed::loss {

double clamped_log(double p) { return std::log(std::max(p, kLogClamp)); }

namespace {
// Derivative of -log(max(p, eps)) continued past the clamp.
inline double neg_log_grad(double p) { return -1.0 / std::max(p, kLogClamp); }
}  // namespace

double smooth_l1(double x) {
  const double a = std::fabs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (std::fabs(x) < 1.0) return x;
  return x > 0 ? 1.0 : -1.0;
}

void BoxRegressionBatch::validate() const {
  if (t.size() != t_star.size() || t.size() != p_star.size()) throw InvalidArgument("box batch: shape mismatch");
  if (!(n_box > 0.0)) throw InvalidArgument("box batch: n_box must be > 0");
  for (int p : p_star) {
    if (p != 0 && p != 1) throw InvalidArgument("box batch: p_star must be 0 or 1");
  }
}

double box_loss(const BoxRegressionBatch& batch) {
  batch.validate();
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.t.size(); ++i) {
    if (!batch.p_star[i]) continue;
    for (int c = 0; c < 4; ++c) sum += smooth_l1(batch.t[i][c] - batch.t_star[i][c]);
  }
  return batch.lambda / batch.n_box * sum;
}

std::vector<Box4> box_loss_grad(const BoxRegressionBatch& batch) {
  batch.validate();
  std::vector<Box4> g(batch.t.size(), Box4{});
  const double scale = batch.lambda / batch.n_box;
  for (std::size_t i = 0; i < batch.t.size(); ++i) {
    if (!batch.p_star[i]) continue;
    for (int c = 0; c < 4; ++c) g[i][c] = scale * smooth_l1_grad(batch.t[i][c] - batch.t_star[i][c]);
  }
  return g;
}

void MaskPair::validate() const {
  const auto n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  if (height < 0 || width < 0 || y.size() != n || p_hat.size() != n) throw InvalidArgument("mask pair: shape mismatch");
}

double dice_mask_loss(const MaskPair& pair) {
  pair.validate();
  double yp = 0.0, sy = 0.0, sp = 0.0;
  for (std::size_t i = 0; i < pair.y.size(); ++i) {
    yp += pair.y[i] * pair.p_hat[i];
    sy += pair.y[i];
    sp += pair.p_hat[i];
  }
  return 1.0 - (2.0 * yp + 1.0) / (sy + sp + 1.0);
}

std::vector<double> dice_mask_loss_grad(const MaskPair& pair) {
  pair.validate();
  double yp = 0.0, sy = 0.0, sp = 0.0;
  for (std::size_t i = 0; i < pair.y.size(); ++i) {
    yp += pair.y[i] * pair.p_hat[i];
    sy += pair.y[i];
    sp += pair.p_hat[i];
  }
  const double num = 2.0 * yp + 1.0;
  const double den = sy + sp + 1.0;
  std::vector<double> g(pair.y.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = -(2.0 * pair.y[i] * den - num) / (den * den);
  return g;
}

double bce_mask_loss(const MaskPair& pair) {
  pair.validate();
  if (pair.y.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pair.y.size(); ++i) {
    sum -= pair.y[i] * clamped_log(pair.p_hat[i]) + (1.0 - pair.y[i]) * clamped_log(1.0 - pair.p_hat[i]);
  }
  return sum / static_cast<double>(pair.y.size());
}

std::vector<double> bce_mask_loss_grad(const MaskPair& pair) {
  pair.validate();
  std::vector<double> g(pair.y.size());
  const double inv = pair.y.empty() ? 0.0 : 1.0 / static_cast<double>(pair.y.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = inv * (pair.y[i] * neg_log_grad(pair.p_hat[i]) - (1.0 - pair.y[i]) * neg_log_grad(1.0 - pair.p_hat[i]));
  }
  return g;
}

double cls_loss(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) throw InvalidArgument("cls_loss: size mismatch");
  double sum = 0.0;
  for (std::size_t j = 0; j < predicted.size(); ++j) {
    if (target[j] != 0.0) sum -= target[j] * clamped_log(predicted[j]);
  }
  return sum;
}

std::vector<double> cls_loss_grad(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) throw InvalidArgument("cls_loss: size mismatch");
  std::vector<double> g(predicted.size(), 0.0);
  for (std::size_t j = 0; j < predicted.size(); ++j) g[j] = target[j] * neg_log_grad(predicted[j]);
  return g;
}

ClassProbs one_hot(data::ClassLabel label) {
  ClassProbs p{};
  p[data::index_of(label)] = 1.0;
  return p;
}

int coarse_label(std::span<const data::ClassLabel> fine_labels) {
  for (auto l : fine_labels) {
    if (data::is_positive_group(l)) return 1;
  }
  return 0;
}

void Bag::validate() const {
  if (fine_labels.empty()) throw InvalidArgument("bag must hold at least one patch");
  if (!patches.empty() && patches.size() != fine_labels.size()) throw InvalidArgument("bag: patch/label count mismatch");
  if (bag_label != coarse_label(fine_labels)) throw InvalidArgument("bag label inconsistent with fine labels");
}

void BagPrediction::validate() const {
  for (const auto& row : y_hat) {
    const double s = row[0] + row[1] + row[2];
    if (std::fabs(s - 1.0) > 1e-6) throw InvalidArgument("bag prediction row does not sum to 1");
  }
  if (!(z_hat >= 0.0 && z_hat <= 1.0)) throw InvalidArgument("bag probability outside [0, 1]");
}

double mil_fine_loss(std::span<const Bag> bags, std::span<const BagPrediction> predictions) {
  if (bags.size() != predictions.size()) throw InvalidArgument("mil_fine_loss: bag/prediction count mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    if (predictions[i].y_hat.size() != bags[i].size()) throw InvalidArgument("mil_fine_loss: bag size mismatch");
    for (std::size_t b = 0; b < bags[i].size(); ++b) {
      sum -= clamped_log(predictions[i].y_hat[b][data::index_of(bags[i].fine_labels[b])]);
    }
  }
  return sum;
}

std::vector<std::vector<ClassProbs>> mil_fine_loss_grad(std::span<const Bag> bags,
                                                         std::span<const BagPrediction> predictions) {
  if (bags.size() != predictions.size()) throw InvalidArgument("mil_fine_loss: bag/prediction count mismatch");
  std::vector<std::vector<ClassProbs>> g(bags.size());
  for (std::size_t i = 0; i < bags.size(); ++i) {
    if (predictions[i].y_hat.size() != bags[i].size()) throw InvalidArgument("mil_fine_loss: bag size mismatch");
    g[i].assign(bags[i].size(), ClassProbs{});
    for (std::size_t b = 0; b < bags[i].size(); ++b) {
      const int j = data::index_of(bags[i].fine_labels[b]);
      g[i][b][j] = neg_log_grad(predictions[i].y_hat[b][j]);
    }
  }
  return g;
}

double bag_probability(std::span<const ClassProbs> y_hat) {
  if (y_hat.empty()) throw InvalidArgument("bag_probability: empty bag");
  double sum = 0.0;
  for (const auto& row : y_hat) sum += row[1] + row[2];
  return std::clamp(sum / static_cast<double>(y_hat.size()), 0.0, 1.0);
}

std::vector<ClassProbs> bag_probability_grad(std::span<const ClassProbs> y_hat) {
  if (y_hat.empty()) throw InvalidArgument("bag_probability: empty bag");
  const double w = 1.0 / static_cast<double>(y_hat.size());
  return std::vector<ClassProbs>(y_hat.size(), ClassProbs{0.0, w, w});
}

double mil_bag_loss(std::span<const int> bag_labels, std::span<const double> z_hats) {
  if (bag_labels.size() != z_hats.size() || bag_labels.empty()) {
    throw InvalidArgument("mil_bag_loss: need equal-length, nonempty inputs");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < z_hats.size(); ++i) {
    const double y = bag_labels[i];
    sum += y * clamped_log(z_hats[i]) + (1.0 - y) * clamped_log(1.0 - z_hats[i]);
  }
  return -sum / static_cast<double>(z_hats.size());
}

std::vector<double> mil_bag_loss_grad(std::span<const int> bag_labels, std::span<const double> z_hats) {
  if (bag_labels.size() != z_hats.size() || bag_labels.empty()) {
    throw InvalidArgument("mil_bag_loss: need equal-length, nonempty inputs");
  }
  const double inv = 1.0 / static_cast<double>(z_hats.size());
  std::vector<double> g(z_hats.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double y = bag_labels[i];
    g[i] = inv * (y * neg_log_grad(z_hats[i]) - (1.0 - y) * neg_log_grad(1.0 - z_hats[i]));
  }
  return g;
}

}  // namespace oed::loss
