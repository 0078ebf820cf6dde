#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "oed/data_model.hpp"
#include "oed/preprocess.hpp"

namespace oed::synth {

struct SynthConfig {
  int n_images = 10;
  int height = 128;
  int width = 128;
  /// Fractions of non_dysplastic, dysplastic and cancerous images.
  std::array<double, 3> class_mix{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::uint32_t seed = 0;

  void validate() const;
};

inline constexpr int kPolygonSides = 32;

/// Image labels in generation order: largest-remainder counts of n_images x class_mix,
/// shuffled by seed.
std::vector<data::ClassLabel> assign_labels(const SynthConfig& config);

/// Renders image `index` with 1-2 lesions of `label`. Annotations carry `image_id`.
/// Appearance per class:
///   non_dysplastic - smooth pale patch with a soft rim
///   dysplastic     - mottled white/red patch, high local contrast
///   cancerous      - dark patch with noisy texture and a ragged boundary
preprocess::Sample render_image(const SynthConfig& config, int index, data::ClassLabel label,
                                const std::string& image_id);

/// Lesion-free background with the same statistics as render_image.
Image render_background(const SynthConfig& config, int index);

/// Writes images/<id>.png plus manifest.json into out_dir and returns the manifest
/// (already split 70/20/10).
data::DatasetManifest generate_synthetic_dataset(const SynthConfig& config, const std::filesystem::path& out_dir);

/// In-memory variant; `root` is left empty.
std::vector<preprocess::Sample> generate_samples(const SynthConfig& config);

std::string image_id_for(int index);

}  // namespace oed::synth
