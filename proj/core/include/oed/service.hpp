#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "oed/mil.hpp"
#include "oed/run_config.hpp"
#include "oed/seg/model.hpp"

namespace oed::service {

inline constexpr const char* kVersion = "0.1.0";

/// A detected lesion, graded by the MIL classifier when one is loaded.
struct Finding {
  data::Detection detection;
  std::optional<mil::LesionGrade> grade;

  data::ClassLabel label() const { return grade ? grade->label : detection.label; }
};

/// Detector followed by lesion grading. Immutable once built; safe to share.
class Pipeline {
 public:
  Pipeline(seg::SegModel seg, std::optional<mil::MilModel> grader);

  /// Reads checkpoints; an empty `mil_path` leaves the grader out.
  static std::shared_ptr<const Pipeline> load(const std::filesystem::path& seg_path,
                                              const std::filesystem::path& mil_path);

  std::vector<Finding> analyze(const Image& image) const;
  bool has_grader() const noexcept { return grader_.has_value(); }

 private:
  seg::SegModel seg_;
  std::optional<mil::MilModel> grader_;
};

/// Class-colored masks (blended) and box outlines drawn over `image`.
Image render_overlay(const Image& image, std::span<const Finding> findings, double mask_threshold = 0.5);

/// Response document of /predict: detections (bbox, label, score, z_hat, base64 PNG
/// mask) and a base64 PNG overlay.
std::string findings_json(const Image& image, std::span<const Finding> findings);

/// HTTP front end: POST /predict, GET /health, GET /samples, GET /samples/<name>.
class Server {
 public:
  explicit Server(ServeConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Models become available to /predict; until then it answers 503.
  void set_pipeline(std::shared_ptr<const Pipeline> pipeline);
  /// Loads checkpoints on a background thread.
  void load_async(std::filesystem::path seg_path, std::filesystem::path mil_path);
  bool ready() const;
  /// Set when background loading failed.
  std::string load_error() const;

  /// Binds the listening socket; returns the bound port (config port, or any free
  /// port when it is 0 and `any_port` is set).
  int bind(bool any_port = false);
  /// Serves until stop(); requires bind().
  void run();
  /// bind() + run() on a background thread; returns the port.
  int start(bool any_port = false);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Port to serve on: the configured one, else $OED_PORT, else 8080.
int resolve_port(const ServeConfig& config);

}  // namespace oed::service
