#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "oed/data_model.hpp"
#include "oed/nn/optim.hpp"
#include "oed/preprocess.hpp"
#include "oed/seg/model.hpp"

namespace oed::seg {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  int epochs = 12;
  std::uint32_t seed = 0;
  /// Images whose gradients are averaged into one update.
  int batch_size = 1;
  int warmup_steps = 50;
  nn::OptimizerConfig optimizer;
  preprocess::AugmentationConfig augmentation;

  void validate() const;
};

std::string to_json(const TrainConfig& config);
TrainConfig train_config_from_json(std::string_view text);

struct SegTrainResult {
  SegModel model;
  /// Mean loss breakdown per epoch.
  std::vector<LossBreakdown> history;

  /// Checkpoint carrying the model, the training config and the loss curve.
  Checkpoint checkpoint(const TrainConfig& train) const;
};

using EpochCallback = std::function<void(int epoch, const LossBreakdown& mean)>;

/// Thrown when a loss becomes non-finite.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

SegTrainResult train_seg(const std::vector<preprocess::Sample>& train_set, const SegModelConfig& model,
                         const TrainConfig& train, const EpochCallback& on_epoch = {});

/// Trains on the manifest's train split.
SegTrainResult train_seg(const data::DatasetManifest& manifest, const SegModelConfig& model, const TrainConfig& train,
                         const EpochCallback& on_epoch = {});

/// Learning-rate multiplier: linear warmup, then cosine decay to 5% at the last step.
double lr_schedule(long step, long total_steps, int warmup_steps);

}  // namespace oed::seg
