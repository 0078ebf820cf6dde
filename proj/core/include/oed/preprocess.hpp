#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "oed/data_model.hpp"

namespace oed::preprocess {

struct OpProbabilities {
  double horizontal_flip = 0.5;
  double rotation = 0.5;
  double gaussian_blur = 0.5;
  double brightness_contrast = 0.5;
  double hue_saturation = 0.5;
};

struct AugmentationConfig {
  std::uint32_t seed = 0;
  OpProbabilities probability;
  double rotation_limit = 30.0;  // degrees
  std::pair<double, double> blur_sigma_range{0.5, 2.0};
  double brightness_contrast_limit = 0.2;
  double hue_saturation_limit = 0.1;

  /// Returns a config with every op disabled.
  static AugmentationConfig disabled();
  void validate() const;
};

/// An image together with the annotations that live on it.
struct Sample {
  Image image;
  std::vector<data::LesionAnnotation> annotations;
};

inline constexpr int kDownsampleLimit = 512;
inline constexpr int kDownsampleFactor = 3;

/// True when either side exceeds the 512 px limit.
bool needs_downsample(int width, int height);

/// Area-averaging reduction by 3 when either side exceeds 512 px; identity otherwise.
Sample conditional_downsample(Sample sample);
Image downsample_area(const Image& image, int factor);

Sample horizontal_flip(Sample sample);
/// Rotation about the image center on an unchanged canvas; borders are replicated.
/// When a lesion would be clipped away entirely the input is returned unchanged.
Sample rotate(Sample sample, double degrees);
Image gaussian_blur(const Image& image, double sigma);
Image adjust_brightness_contrast(const Image& image, double brightness, double contrast);
Image shift_hue_saturation(const Image& image, double hue_shift, double saturation_shift);

/// Applies each op independently with its probability. The random stream is derived
/// from (config.seed, draw), so the result does not depend on call order.
Sample augment(Sample sample, const AugmentationConfig& config, std::uint64_t draw);

/// Integer allocation of `total` proportional to `weights` by the largest-remainder
/// method. Ties in the fractional part go to the lower index.
std::vector<int> largest_remainder(int total, std::span<const double> weights);

/// Per-class (dominant label) 70/20/10-style split; overall split sizes equal the
/// largest-remainder allocation of the image count.
data::DatasetManifest stratified_split(data::DatasetManifest manifest, std::array<double, 3> ratios,
                                       std::uint32_t seed);

/// Pixels and annotations of every image in `split`, in id order, optionally reduced
/// by conditional_downsample.
std::vector<Sample> load_samples(const data::DatasetManifest& manifest, data::Split split, bool downsample = true);

}  // namespace oed::preprocess
