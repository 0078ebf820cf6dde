#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oed/checkpoint.hpp"
#include "oed/data_model.hpp"
#include "oed/losses.hpp"
#include "oed/nn/graph.hpp"
#include "oed/preprocess.hpp"

namespace oed::mil {

using data::Box;
using data::ClassLabel;
using loss::Bag;
using loss::ClassProbs;

inline constexpr int kPatchSize = 128;

/// Fixed-size tiles cut from one lesion crop.
struct PatchSet {
  std::string image_id;
  Box bbox;
  /// Crop size after upscaling.
  int crop_width = 0;
  int crop_height = 0;
  std::vector<Image> patches;
  /// Top-left corner of each patch within the (upscaled) crop.
  std::vector<data::Point> coords;
};

/// Crops `bbox` (expanded to whole pixels), upscales so the short side is at least
/// `patch_size`, then tiles with `stride`; tiles running past the crop edge are
/// completed by reflection. Throws InvalidArgument for a zero-area box.
PatchSet extract_patches(const Image& image, const Box& bbox, int patch_size = kPatchSize, int stride = kPatchSize,
                         std::string image_id = {});

struct LabeledPatchSet {
  PatchSet patches;
  ClassLabel label = ClassLabel::non_dysplastic;
};

/// Patch sets for every annotation of the given samples.
std::vector<LabeledPatchSet> lesion_patch_sets(std::span<const preprocess::Sample> samples, int patch_size = kPatchSize,
                                               int stride = kPatchSize);

/// Groups patches into bags of `bag_size` that never mix the cancerous and
/// non-cancerous groups. A lesion with at least `bag_size` patches fills bags on its
/// own; remainders and smaller lesions are pooled within their group. The last bag
/// of a pool may be smaller. Every patch lands in exactly one bag.
std::vector<Bag> build_bags(std::span<const LabeledPatchSet> sets, int bag_size, std::uint64_t seed);

enum class PatchBackbone { vgg_like, densely_connected };
enum class MilInit { random, transfer_from_patch_classifier };

std::string_view to_string(PatchBackbone kind);
PatchBackbone parse_patch_backbone(std::string_view name);
std::string_view to_string(MilInit init);
MilInit parse_mil_init(std::string_view name);

struct MILTrainConfig {
  int batch_size = 32;  // patches per update
  int bag_size = 4;
  int patch_size = kPatchSize;
  int stride = kPatchSize;
  int epochs = 20;
  /// Epochs of plain patch classification before the bag stage (transfer init only).
  int pretrain_epochs = 5;
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  std::uint32_t seed = 0;
  /// Weight of the bag term in the total objective.
  double bag_loss_weight = 1.0;
  PatchBackbone backbone_kind = PatchBackbone::vgg_like;
  MilInit init = MilInit::transfer_from_patch_classifier;

  void validate() const;
};

std::string to_json(const MILTrainConfig& config);
MILTrainConfig mil_config_from_json(std::string_view text);

struct LesionGrade {
  ClassLabel label = ClassLabel::non_dysplastic;
  ClassProbs probabilities{};
  double z_hat = 0.0;
  std::vector<ClassProbs> patch_probabilities;
};

/// Averages per-patch rows; argmax with ties resolved toward the least severe class.
LesionGrade grade_from_rows(std::vector<ClassProbs> rows);

class PatchClassifier {
 public:
  PatchClassifier(PatchBackbone kind, int patch_size, std::uint64_t seed);

  PatchBackbone kind() const noexcept { return kind_; }
  int patch_size() const noexcept { return patch_size_; }
  nn::ParamStore& params() noexcept { return *params_; }
  const nn::ParamStore& params() const noexcept { return *params_; }

  /// [P, 3, S, S] normalized batch -> probabilities [P, 3] on `g`.
  nn::Var forward(nn::Graph& g, std::span<const Image* const> patches) const;
  std::vector<ClassProbs> predict(std::span<const Image> patches) const;

 private:
  struct Net;
  PatchBackbone kind_;
  int patch_size_;
  std::unique_ptr<nn::ParamStore> params_;
  std::shared_ptr<Net> net_;
};

class MilModel {
 public:
  MilModel(MILTrainConfig config, std::uint64_t seed = 0);

  const MILTrainConfig& config() const noexcept { return config_; }
  PatchClassifier& classifier() noexcept { return classifier_; }
  const PatchClassifier& classifier() const noexcept { return classifier_; }

  LesionGrade classify_lesion(const Image& image, const Box& bbox) const;

  Checkpoint to_checkpoint(const std::string& metadata_json = "{}") const;
  static MilModel from_checkpoint(const Checkpoint& ckpt);

 private:
  MILTrainConfig config_;
  PatchClassifier classifier_;
};

struct MilEpoch {
  double fine = 0.0;   // L1 per update, averaged over updates
  double bag = 0.0;    // L2 per update, averaged over updates
  double total = 0.0;
  /// "patch_classifier" during the transfer stage, "mil" afterwards.
  std::string stage;
};

struct MilTrainResult {
  MilModel model;
  std::vector<MilEpoch> history;

  Checkpoint checkpoint() const;
};

using MilEpochCallback = std::function<void(int epoch, const MilEpoch&)>;

/// Throws InvalidArgument unless both a positive and a negative bag are present.
MilTrainResult train_mil(std::span<const Bag> bags, const MILTrainConfig& config, const MilEpochCallback& cb = {});

}  // namespace oed::mil
