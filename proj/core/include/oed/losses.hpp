#pragma once

#include <array>
#include <span>
#include <vector>

#include "oed/data_model.hpp"

// Training objectives for the detector (classification, box regression, mask) and for
// the bag-level MIL grader. Every loss comes with an analytic gradient with respect to
// its prediction inputs; the trainers consume those gradients directly.
namespace oed::loss {

/// Floor applied inside every logarithm.
inline constexpr double kLogClamp = 1e-12;

double clamped_log(double p);

double smooth_l1(double x);
double smooth_l1_grad(double x);

using Box4 = std::array<double, 4>;

struct BoxRegressionBatch {
  std::vector<Box4> t;       // predicted parameterized coordinates
  std::vector<Box4> t_star;  // regression targets
  std::vector<int> p_star;   // 1 where the anchor / ROI is foreground
  double lambda = 1.0;
  double n_box = 1.0;

  void validate() const;
};

/// (lambda / n_box) * sum_i p*_i * sum_c smooth_l1(t_ic - t*_ic)
double box_loss(const BoxRegressionBatch& batch);
/// d box_loss / d t
std::vector<Box4> box_loss_grad(const BoxRegressionBatch& batch);

/// Non-owning view of a ground-truth mask and predicted probabilities.
struct MaskPair {
  std::span<const double> y;
  std::span<const double> p_hat;
  int height = 0;
  int width = 0;

  void validate() const;
};

/// Smoothed soft Dice: 1 - (2 sum(y p) + 1) / (sum(y) + sum(p) + 1), in [0, 1).
double dice_mask_loss(const MaskPair& pair);
std::vector<double> dice_mask_loss_grad(const MaskPair& pair);

/// Mean per-pixel binary cross-entropy; the default Mask R-CNN mask objective.
double bce_mask_loss(const MaskPair& pair);
std::vector<double> bce_mask_loss_grad(const MaskPair& pair);

/// -sum_j target_j log(predicted_j)
double cls_loss(std::span<const double> predicted, std::span<const double> target);
std::vector<double> cls_loss_grad(std::span<const double> predicted, std::span<const double> target);

inline double seg_total_loss(double cls, double box, double mask) { return cls + box + mask; }

using ClassProbs = std::array<double, data::kNumClasses>;

ClassProbs one_hot(data::ClassLabel label);

/// B patches sharing a coarse label: 1 for the cancerous group (dysplastic or cancerous).
struct Bag {
  std::vector<Image> patches;
  std::vector<data::ClassLabel> fine_labels;
  int bag_label = 0;

  std::size_t size() const noexcept { return fine_labels.size(); }
  void validate() const;
};

/// Bag label implied by fine labels.
int coarse_label(std::span<const data::ClassLabel> fine_labels);

struct BagPrediction {
  std::vector<ClassProbs> y_hat;
  double z_hat = 0.0;

  void validate() const;
};

/// Fine-label categorical cross-entropy summed over every patch of every bag.
double mil_fine_loss(std::span<const Bag> bags, std::span<const BagPrediction> predictions);
/// Gradient per bag, per patch, per class with respect to y_hat.
std::vector<std::vector<ClassProbs>> mil_fine_loss_grad(std::span<const Bag> bags,
                                                         std::span<const BagPrediction> predictions);

/// Probability that a bag belongs to the cancerous group: mean over patches of
/// (p_dysplastic + p_cancerous).
double bag_probability(std::span<const ClassProbs> y_hat);
std::vector<ClassProbs> bag_probability_grad(std::span<const ClassProbs> y_hat);

/// Binary cross-entropy averaged over bags.
double mil_bag_loss(std::span<const int> bag_labels, std::span<const double> z_hats);
std::vector<double> mil_bag_loss_grad(std::span<const int> bag_labels, std::span<const double> z_hats);

inline double mil_total_loss(double l1, double l2, double w = 1.0) { return l1 + w * l2; }

}  // namespace oed::loss
