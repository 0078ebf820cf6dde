#include "oed/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace oed::synth {

using data::ClassLabel;
using data::Point;

void SynthConfig::validate() const {
  if (n_images < 1) throw InvalidArgument("synth.n_images must be >= 1");
  if (height < 16 || width < 16) throw InvalidArgument("synth.image_size must be at least 16x16");
  double sum = 0.0;
  for (double m : class_mix) {
    if (!(m >= 0.0)) throw InvalidArgument("synth.class_mix entries must be >= 0");
    sum += m;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw InvalidArgument("synth.class_mix must sum to 1");
}

std::string image_id_for(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%04d", index);
  return buf;
}

std::vector<ClassLabel> assign_labels(const SynthConfig& config) {
  config.validate();
  const auto counts = preprocess::largest_remainder(config.n_images, config.class_mix);
  std::vector<ClassLabel> labels;
  for (int c = 0; c < data::kNumClasses; ++c) labels.insert(labels.end(), counts[c], data::label_from_index(c));
  std::mt19937_64 rng(config.seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

namespace {

struct Ellipse {
  double cx, cy, a, b, theta;

  // Squared normalized radius of pixel center (x, y), plus its polar angle in the ellipse frame.
  std::pair<double, double> locate(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = (std::cos(theta) * dx + std::sin(theta) * dy) / a;
    const double v = (-std::sin(theta) * dx + std::cos(theta) * dy) / b;
    return {u * u + v * v, std::atan2(v, u)};
  }

  std::vector<Point> polygon() const {
    std::vector<Point> pts;
    for (int k = 0; k < kPolygonSides; ++k) {
      const double phi = 2.0 * std::numbers::pi * k / kPolygonSides;
      const double u = a * std::cos(phi), v = b * std::sin(phi);
      pts.push_back({cx + std::cos(theta) * u - std::sin(theta) * v, cy + std::sin(theta) * u + std::cos(theta) * v});
    }
    return pts;
  }

  double reach() const { return std::max(a, b); }
};

std::mt19937_64 image_rng(const SynthConfig& config, int index, std::uint32_t stream) {
  std::seed_seq seq{config.seed, static_cast<std::uint32_t>(index), stream};
  return std::mt19937_64(seq);
}

using Canvas = std::vector<double>;  // h * w * 3

Canvas background(const SynthConfig& config, std::mt19937_64& rng) {
  const int h = config.height, w = config.width;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 4.0);
  const double base[3] = {196 + 12 * u(rng), 104 + 14 * u(rng), 110 + 14 * u(rng)};
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 3; ++i) {
    waves.push_back({(0.5 + 2.5 * u(rng)) / w, (0.5 + 2.5 * u(rng)) / h, 2 * std::numbers::pi * u(rng), 4 + 6 * u(rng)});
  }
  Canvas px(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double shade = 0.0;
      for (const Wave& wv : waves) shade += wv.amp * std::sin(2 * std::numbers::pi * (wv.fx * x + wv.fy * y) + wv.phase);
      for (int c = 0; c < 3; ++c) px[(static_cast<std::size_t>(y) * w + x) * 3 + c] = base[c] + shade + noise(rng);
    }
  }
  return px;
}

Image to_image(const Canvas& px, int w, int h) {
  Image img(w, h);
  for (std::size_t i = 0; i < px.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(px[i]), 0L, 255L));
  }
  return img;
}

// Coarse value-noise field in [0,1], bilinear between random lattice values.
struct ValueNoise {
  int cell, gw, gh;
  std::vector<double> lattice;
  ValueNoise(int w, int h, int cell_px, std::mt19937_64& rng) : cell(cell_px) {
    gw = w / cell + 2;
    gh = h / cell + 2;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    lattice.resize(static_cast<std::size_t>(gw) * gh);
    for (double& v : lattice) v = u(rng);
  }
  double at(double x, double y) const {
    const double gx = x / cell, gy = y / cell;
    const int ix = std::min(static_cast<int>(gx), gw - 2), iy = std::min(static_cast<int>(gy), gh - 2);
    const double fx = gx - ix, fy = gy - iy;
    auto L = [&](int i, int j) { return lattice[static_cast<std::size_t>(j) * gw + i]; };
    return (L(ix, iy) * (1 - fx) + L(ix + 1, iy) * fx) * (1 - fy) + (L(ix, iy + 1) * (1 - fx) + L(ix + 1, iy + 1) * fx) * fy;
  }
};

void paint_lesion(Canvas& px, const SynthConfig& config, const Ellipse& e, ClassLabel label, std::mt19937_64& rng) {
  const int h = config.height, w = config.width;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  ValueNoise mottling(w, h, 4, rng);
  // Radial jitter per angle for the ragged cancerous outline.
  std::array<double, 12> ragged{};
  for (double& r : ragged) r = (u(rng) - 0.5) * 0.16;

  const int x0 = std::max(0, static_cast<int>(e.cx - e.reach() - 3));
  const int x1 = std::min(w - 1, static_cast<int>(e.cx + e.reach() + 3));
  const int y0 = std::max(0, static_cast<int>(e.cy - e.reach() - 3));
  const int y1 = std::min(h - 1, static_cast<int>(e.cy + e.reach() + 3));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      auto [r2, ang] = e.locate(x + 0.5, y + 0.5);
      const double r = std::sqrt(r2);
      double* p = &px[(static_cast<std::size_t>(y) * w + x) * 3];
      double color[3] = {0, 0, 0};
      double alpha = 0.0;
      switch (label) {
        case ClassLabel::non_dysplastic: {
          alpha = std::clamp((1.0 - r) / 0.12 + 0.5, 0.0, 1.0);
          const double n = noise(rng) * 3.0;
          color[0] = 228 + n;
          color[1] = 204 + n;
          color[2] = 198 + n;
          break;
        }
        case ClassLabel::dysplastic: {
          alpha = r <= 1.0 ? 1.0 : 0.0;
          const bool white = mottling.at(x, y) > 0.5;
          const double n = noise(rng) * 6.0;
          color[0] = (white ? 242 : 178) + n;
          color[1] = (white ? 240 : 48) + n;
          color[2] = (white ? 232 : 58) + n;
          break;
        }
        case ClassLabel::cancerous: {
          const double t = (ang + std::numbers::pi) / (2 * std::numbers::pi) * ragged.size();
          const int k = static_cast<int>(t) % static_cast<int>(ragged.size());
          const int k1 = (k + 1) % static_cast<int>(ragged.size());
          const double f = t - std::floor(t);
          const double edge = 1.0 + ragged[k] * (1 - f) + ragged[k1] * f;
          alpha = r <= edge ? 1.0 : 0.0;
          const double n = noise(rng) * 14.0;
          color[0] = 98 + n;
          color[1] = 34 + 0.5 * n;
          color[2] = 40 + 0.5 * n;
          break;
        }
      }
      for (int c = 0; c < 3; ++c) p[c] = p[c] * (1 - alpha) + color[c] * alpha;
    }
  }
}

std::vector<Ellipse> place_lesions(const SynthConfig& config, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double side = std::min(config.height, config.width);
  const int want = u(rng) < 0.35 ? 2 : 1;
  std::vector<Ellipse> out;
  for (int attempt = 0; attempt < 64 && static_cast<int>(out.size()) < want; ++attempt) {
    Ellipse e;
    e.a = side * (0.09 + 0.13 * u(rng));
    e.b = side * (0.09 + 0.13 * u(rng));
    e.theta = std::numbers::pi * u(rng);
    const double margin = e.reach() + 2.0;
    e.cx = margin + (config.width - 2 * margin) * u(rng);
    e.cy = margin + (config.height - 2 * margin) * u(rng);
    bool clear = true;
    for (const Ellipse& o : out) {
      if (std::hypot(e.cx - o.cx, e.cy - o.cy) < e.reach() + o.reach() + 4.0) clear = false;
    }
    if (clear) out.push_back(e);
  }
  return out;
}

}  // namespace

Image render_background(const SynthConfig& config, int index) {
  auto rng = image_rng(config, index, 0);
  return to_image(background(config, rng), config.width, config.height);
}

preprocess::Sample render_image(const SynthConfig& config, int index, ClassLabel label, const std::string& image_id) {
  auto rng = image_rng(config, index, 0);
  Canvas px = background(config, rng);
  auto lesion_rng = image_rng(config, index, 1);
  const auto lesions = place_lesions(config, lesion_rng);
  preprocess::Sample sample;
  for (const Ellipse& e : lesions) {
    paint_lesion(px, config, e, label, lesion_rng);
    sample.annotations.emplace_back(image_id, e.polygon(), label);
  }
  sample.image = to_image(px, config.width, config.height);
  return sample;
}

std::vector<preprocess::Sample> generate_samples(const SynthConfig& config) {
  const auto labels = assign_labels(config);
  std::vector<preprocess::Sample> out;
  out.reserve(labels.size());
  for (int i = 0; i < config.n_images; ++i) out.push_back(render_image(config, i, labels[i], image_id_for(i)));
  return out;
}

data::DatasetManifest generate_synthetic_dataset(const SynthConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  const auto labels = assign_labels(config);
  data::DatasetManifest m;
  for (int i = 0; i < config.n_images; ++i) {
    const std::string id = image_id_for(i);
    auto sample = render_image(config, i, labels[i], id);
    const std::string rel = "images/" + id + ".png";
    write_png(sample.image, out_dir / rel);
    m.images.push_back({id, rel, sample.image.width, sample.image.height});
    for (auto& a : sample.annotations) m.annotations.push_back(std::move(a));
  }
  m = preprocess::stratified_split(std::move(m), {0.7, 0.2, 0.1}, config.seed);
  m.root = out_dir;
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace oed::synth
