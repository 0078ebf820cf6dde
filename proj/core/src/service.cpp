#include "oed/service.hpp"

#include <algorithm>
#include <cstdlib>
#include <mutex>

#include "httplib.h"
#include "json.hpp"
#include "oed/synth.hpp"

namespace oed::service {

using nlohmann::json;

Pipeline::Pipeline(seg::SegModel seg, std::optional<mil::MilModel> grader)
    : seg_(std::move(seg)), grader_(std::move(grader)) {}

std::shared_ptr<const Pipeline> Pipeline::load(const std::filesystem::path& seg_path,
                                               const std::filesystem::path& mil_path) {
  auto seg = seg::SegModel::from_checkpoint(read_checkpoint(seg_path, kSegCheckpointHeader));
  std::optional<mil::MilModel> grader;
  if (!mil_path.empty()) grader = mil::MilModel::from_checkpoint(read_checkpoint(mil_path, kMilCheckpointHeader));
  return std::make_shared<const Pipeline>(std::move(seg), std::move(grader));
}

std::vector<Finding> Pipeline::analyze(const Image& image) const {
  std::vector<Finding> out;
  for (auto& d : seg_.predict(image)) {
    Finding f{std::move(d), std::nullopt};
    if (grader_) f.grade = grader_->classify_lesion(image, f.detection.bbox);
    out.push_back(std::move(f));
  }
  return out;
}

Image render_overlay(const Image& image, std::span<const Finding> findings, double mask_threshold) {
  Image out = image;
  constexpr double kAlpha = 0.45;
  for (const auto& f : findings) {
    const data::Rgb c = data::display_color(f.label());
    const std::uint8_t rgb[3] = {c.r, c.g, c.b};
    const Raster& m = f.detection.mask;
    if (m.width == image.width && m.height == image.height) {
      for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
          if (m.at(x, y) < mask_threshold) continue;
          for (int k = 0; k < 3; ++k) {
            const double v = (1 - kAlpha) * out.at(x, y, k) + kAlpha * rgb[k];
            out.at(x, y, k) = static_cast<std::uint8_t>(std::lround(v));
          }
        }
      }
    }
    const data::Box& b = f.detection.bbox;
    const int x0 = std::clamp(static_cast<int>(std::floor(b.x_min)), 0, image.width - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(b.y_min)), 0, image.height - 1);
    const int x1 = std::clamp(static_cast<int>(std::ceil(b.x_max)) - 1, 0, image.width - 1);
    const int y1 = std::clamp(static_cast<int>(std::ceil(b.y_max)) - 1, 0, image.height - 1);
    auto put = [&](int x, int y) {
      for (int k = 0; k < 3; ++k) out.at(x, y, k) = rgb[k];
    };
    for (int t = 0; t < 2; ++t) {
      for (int x = x0; x <= x1; ++x) {
        put(x, std::min(y0 + t, y1));
        put(x, std::max(y1 - t, y0));
      }
      for (int y = y0; y <= y1; ++y) {
        put(std::min(x0 + t, x1), y);
        put(std::max(x1 - t, x0), y);
      }
    }
  }
  return out;
}

std::string findings_json(const Image& image, std::span<const Finding> findings) {
  json dets = json::array();
  for (const auto& f : findings) {
    const auto& d = f.detection;
    json j;
    j["bbox"] = {d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max};
    j["label"] = std::string(data::to_string(f.label()));
    j["detector_label"] = std::string(data::to_string(d.label));
    j["score"] = d.score;
    if (f.grade) {
      j["z_hat"] = f.grade->z_hat;
      json probs;
      for (auto l : data::kAllLabels) probs[std::string(data::to_string(l))] = f.grade->probabilities[data::index_of(l)];
      j["probabilities"] = probs;
    } else {
      j["z_hat"] = nullptr;
    }
    j["mask"] = d.mask.empty() ? std::string() : base64_encode(encode_png_gray(d.mask));
    dets.push_back(std::move(j));
  }
  json body;
  body["width"] = image.width;
  body["height"] = image.height;
  body["detections"] = dets;
  body["overlay"] = base64_encode(encode_png(render_overlay(image, findings)));
  return body.dump();
}

int resolve_port(const ServeConfig& config) {
  if (config.port > 0) return config.port;
  if (const char* env = std::getenv("OED_PORT")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v > 0 && v <= 65535) return static_cast<int>(v);
    throw InvalidArgument("OED_PORT must be a port number, got '" + std::string(env) + "'");
  }
  return 8080;
}

struct Server::Impl {
  ServeConfig config;
  httplib::Server http;
  mutable std::mutex mu;
  std::shared_ptr<const Pipeline> pipeline;
  std::string load_error;
  std::thread loader, runner;
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> samples;

  std::shared_ptr<const Pipeline> current() const {
    std::lock_guard lock(mu);
    return pipeline;
  }
};

namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

}  // namespace

Server::Server(ServeConfig config) : impl_(std::make_unique<Impl>()) {
  config.validate();
  impl_->config = config;
  Impl& s = *impl_;

  if (config.demo_samples > 0) {
    synth::SynthConfig sc;
    sc.n_images = config.demo_samples;
    sc.seed = 2024;
    const auto samples = synth::generate_samples(sc);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      s.samples.emplace_back(synth::image_id_for(static_cast<int>(i)) + ".png", encode_png(samples[i].image));
    }
  }

  const int threads = config.threads;
  s.http.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  s.http.set_payload_max_length(config.max_payload_bytes);
  s.http.set_default_headers({{"Access-Control-Allow-Origin", "*"}});

  s.http.Get("/health", [&s](const httplib::Request&, httplib::Response& res) {
    const bool ready = s.current() != nullptr;
    json j{{"status", ready ? "ready" : "loading"},
           {"version", kVersion},
           {"models", {{"segmentation", kSegCheckpointHeader}, {"classification", kMilCheckpointHeader}}}};
    {
      std::lock_guard lock(s.mu);
      if (!s.load_error.empty()) j["error"] = s.load_error;
    }
    res.set_content(j.dump(), "application/json");
  });

  s.http.Get("/samples", [&s](const httplib::Request&, httplib::Response& res) {
    json list = json::array();
    for (const auto& [name, bytes] : s.samples) list.push_back({{"name", name}, {"url", "/samples/" + name}});
    res.set_content(json{{"samples", list}}.dump(), "application/json");
  });

  s.http.Get(R"(/samples/([A-Za-z0-9_.\-]+))", [&s](const httplib::Request& req, httplib::Response& res) {
    const std::string name = req.matches[1];
    for (const auto& [n, bytes] : s.samples) {
      if (n == name) {
        res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
        return;
      }
    }
    send_error(res, 404, "no sample named " + name);
  });

  s.http.Options("/predict", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  s.http.Post("/predict", [&s](const httplib::Request& req, httplib::Response& res) {
    auto pipeline = s.current();
    if (!pipeline) return send_error(res, 503, "models are still loading");
    std::string payload;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("image")) return send_error(res, 400, "multipart field 'image' is required");
      payload = req.get_file_value("image").content;
    } else {
      payload = req.body;
    }
    const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(payload.data()), payload.size());
    if (!looks_like_png(bytes)) return send_error(res, 400, "payload is not a PNG image");
    Image image;
    try {
      image = decode_png(bytes);
    } catch (const Error& e) {
      return send_error(res, 400, e.what());
    }
    try {
      const auto findings = pipeline->analyze(image);
      res.set_content(findings_json(image, findings), "application/json");
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  });
}

Server::~Server() { stop(); }

void Server::set_pipeline(std::shared_ptr<const Pipeline> pipeline) {
  std::lock_guard lock(impl_->mu);
  impl_->pipeline = std::move(pipeline);
}

void Server::load_async(std::filesystem::path seg_path, std::filesystem::path mil_path) {
  if (impl_->loader.joinable()) impl_->loader.join();
  impl_->loader = std::thread([this, seg_path = std::move(seg_path), mil_path = std::move(mil_path)] {
    try {
      set_pipeline(Pipeline::load(seg_path, mil_path));
    } catch (const std::exception& e) {
      std::lock_guard lock(impl_->mu);
      impl_->load_error = e.what();
    }
  });
}

bool Server::ready() const { return impl_->current() != nullptr; }

std::string Server::load_error() const {
  std::lock_guard lock(impl_->mu);
  return impl_->load_error;
}

int Server::bind(bool any_port) {
  const std::string& host = impl_->config.host;
  if (any_port && impl_->config.port == 0) {
    const int port = impl_->http.bind_to_any_port(host);
    if (port <= 0) throw IoError("cannot bind " + host);
    return port;
  }
  const int port = resolve_port(impl_->config);
  if (!impl_->http.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Server::run() { impl_->http.listen_after_bind(); }

int Server::start(bool any_port) {
  const int port = bind(any_port);
  impl_->runner = std::thread([this] { run(); });
  impl_->http.wait_until_ready();
  return port;
}

void Server::stop() {
  if (!impl_) return;
  impl_->http.stop();
  if (impl_->runner.joinable()) impl_->runner.join();
  if (impl_->loader.joinable()) impl_->loader.join();
}

}  // namespace oed::service
