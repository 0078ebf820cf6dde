#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "oed/mil.hpp"
#include "oed/seg/model.hpp"
#include "oed/seg/train.hpp"
#include "oed/synth.hpp"

namespace oed {

struct RunPaths {
  std::string manifest;
  std::string out_dir = "runs";
  std::string seg_checkpoint;
  std::string mil_checkpoint;
  /// Segmentation checkpoints compared side by side by `eval`.
  std::vector<std::string> checkpoints;
  /// Input image of `infer`.
  std::string image;
};

struct EvalConfig {
  double iou_threshold = 0.25;
  double mask_threshold = 0.5;
  /// Feed ground truth through the metric suite instead of model predictions.
  bool oracle = false;
  std::string split = "test";

  void validate() const;
};

struct ServeConfig {
  /// 0 means: take OED_PORT from the environment, else 8080.
  int port = 0;
  std::string host = "127.0.0.1";
  std::size_t max_payload_bytes = 20u * 1024u * 1024u;
  /// Synthetic demo images offered under /samples.
  int demo_samples = 4;
  int threads = 4;

  void validate() const;
};

struct RunConfig {
  RunPaths paths;
  synth::SynthConfig synth;
  std::array<double, 3> split_ratios{0.7, 0.2, 0.1};
  seg::SegModelConfig seg_model;
  seg::TrainConfig seg_train;
  mil::MILTrainConfig mil;
  EvalConfig eval;
  ServeConfig serve;

  void validate() const;
};

/// Pretty-printed, key-sorted JSON of the whole configuration.
std::string to_json(const RunConfig& config);

/// Builds a configuration from a JSON document (empty text means all defaults) and
/// `key.path=value` overrides applied on top. Values parse as JSON when possible and
/// as plain strings otherwise. Throws SchemaError naming the offending field.
RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides = {});

/// Reads `path` (if non-empty) then applies overrides.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace oed
