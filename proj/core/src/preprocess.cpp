#include "oed/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace oed::preprocess {

using data::LesionAnnotation;
using data::Point;

AugmentationConfig AugmentationConfig::disabled() {
  AugmentationConfig c;
  c.probability = {0.0, 0.0, 0.0, 0.0, 0.0};
  return c;
}

void AugmentationConfig::validate() const {
  for (double p : {probability.horizontal_flip, probability.rotation, probability.gaussian_blur,
                   probability.brightness_contrast, probability.hue_saturation}) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("augmentation probability outside [0, 1]");
  }
  if (!(rotation_limit >= 0.0)) throw InvalidArgument("rotation_limit must be >= 0");
  if (!(blur_sigma_range.first > 0.0 && blur_sigma_range.first <= blur_sigma_range.second)) {
    throw InvalidArgument("blur_sigma_range must satisfy 0 < lo <= hi");
  }
  if (!(brightness_contrast_limit >= 0.0)) throw InvalidArgument("brightness_contrast_limit must be >= 0");
  if (!(hue_saturation_limit >= 0.0)) throw InvalidArgument("hue_saturation_limit must be >= 0");
}

bool needs_downsample(int width, int height) { return width > kDownsampleLimit || height > kDownsampleLimit; }

namespace {

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

std::vector<LesionAnnotation> transform_annotations(const std::vector<LesionAnnotation>& in, auto&& map_point,
                                                    double width, double height, bool* degenerate) {
  std::vector<LesionAnnotation> out;
  out.reserve(in.size());
  for (const auto& a : in) {
    std::vector<Point> pts;
    pts.reserve(a.polygon().size());
    for (const Point& p : a.polygon()) pts.push_back(map_point(p));
    pts = data::clip_polygon(pts, width, height);
    if (pts.size() < 3) {
      *degenerate = true;
      return {};
    }
    out.emplace_back(a.image_id(), std::move(pts), a.label());
  }
  return out;
}

// Reflect-101 index into [0, n).
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Image downsample_area(const Image& image, int factor) {
  const int w = image.width / factor;
  const int h = image.height / factor;
  if (w < 1 || h < 1) throw InvalidArgument("downsample_area: image too small for factor");
  Image out(w, h);
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        int sum = 0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) sum += image.at(x * factor + dx, y * factor + dy, c);
        }
        out.at(x, y, c) = to_u8(sum * inv);
      }
    }
  }
  return out;
}

Sample conditional_downsample(Sample sample) {
  if (!needs_downsample(sample.image.width, sample.image.height)) return sample;
  Image small = downsample_area(sample.image, kDownsampleFactor);
  const double s = 1.0 / kDownsampleFactor;
  bool degenerate = false;
  auto anns = transform_annotations(
      sample.annotations, [s](Point p) { return Point{p.x * s, p.y * s}; }, small.width, small.height, &degenerate);
  if (degenerate) throw InvalidArgument("conditional_downsample: annotation vanished after scaling");
  return {std::move(small), std::move(anns)};
}

Sample horizontal_flip(Sample sample) {
  Image& img = sample.image;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width / 2; ++x) {
      for (int c = 0; c < 3; ++c) std::swap(img.at(x, y, c), img.at(img.width - 1 - x, y, c));
    }
  }
  const double w = img.width;
  for (auto& a : sample.annotations) {
    std::vector<Point> pts = a.polygon();
    for (Point& p : pts) p.x = w - p.x;
    a.set_polygon(std::move(pts));
  }
  return sample;
}

Sample rotate(Sample sample, double degrees) {
  const Image& src = sample.image;
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cx = src.width / 2.0, cy = src.height / 2.0;

  bool degenerate = false;
  auto anns = transform_annotations(
      sample.annotations,
      [&](Point p) {
        const double dx = p.x - cx, dy = p.y - cy;
        return Point{cx + cs * dx - sn * dy, cy + sn * dx + cs * dy};
      },
      src.width, src.height, &degenerate);
  if (degenerate) return sample;

  Image out(src.width, src.height);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      // Inverse-map the destination pixel center, then bilinear sample at source pixel centers.
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double sx = cx + cs * dx + sn * dy - 0.5;
      const double sy = cy - sn * dx + cs * dy - 0.5;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const int x0 = std::clamp(static_cast<int>(fx), 0, src.width - 1);
      const int x1 = std::clamp(static_cast<int>(fx) + 1, 0, src.width - 1);
      const int y0 = std::clamp(static_cast<int>(fy), 0, src.height - 1);
      const int y1 = std::clamp(static_cast<int>(fy) + 1, 0, src.height - 1);
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(x0, y0, c) * (1 - ax) + src.at(x1, y0, c) * ax;
        const double bot = src.at(x0, y1, c) * (1 - ax) + src.at(x1, y1, c) * ax;
        out.at(x, y, c) = to_u8(top * (1 - ay) + bot * ay);
      }
    }
  }
  return {std::move(out), std::move(anns)};
}

Image gaussian_blur(const Image& image, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("gaussian_blur: sigma must be > 0");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double norm = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (double& k : kernel) k /= norm;

  const int w = image.width, h = image.height;
  std::vector<double> tmp(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * image.at(reflect(x + k, w), y, c);
        tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
      }
    }
  }
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * tmp[(static_cast<std::size_t>(reflect(y + k, h)) * w + x) * 3 + c];
        }
        out.at(x, y, c) = to_u8(acc);
      }
    }
  }
  return out;
}

Image adjust_brightness_contrast(const Image& image, double brightness, double contrast) {
  Image out = image;
  const double alpha = 1.0 + contrast;
  const double beta = brightness * 255.0;
  for (auto& v : out.pixels) v = to_u8(v * alpha + beta);
  return out;
}

Image shift_hue_saturation(const Image& image, double hue_shift, double saturation_shift) {
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
    const double r = out.pixels[i] / 255.0, g = out.pixels[i + 1] / 255.0, b = out.pixels[i + 2] / 255.0;
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double delta = mx - mn;
    double hue = 0.0;
    if (delta > 0.0) {
      if (mx == r) hue = std::fmod((g - b) / delta, 6.0);
      else if (mx == g) hue = (b - r) / delta + 2.0;
      else hue = (r - g) / delta + 4.0;
      hue *= 60.0;
    }
    double sat = mx > 0.0 ? delta / mx : 0.0;
    const double val = mx;

    hue = std::fmod(hue + hue_shift * 360.0, 360.0);
    if (hue < 0.0) hue += 360.0;
    sat = std::clamp(sat * (1.0 + saturation_shift), 0.0, 1.0);

    const double chroma = val * sat;
    const double hp = hue / 60.0;
    const double xx = chroma * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r1 = 0, g1 = 0, b1 = 0;
    switch (static_cast<int>(hp) % 6) {
      case 0: r1 = chroma; g1 = xx; break;
      case 1: r1 = xx; g1 = chroma; break;
      case 2: g1 = chroma; b1 = xx; break;
      case 3: g1 = xx; b1 = chroma; break;
      case 4: r1 = xx; b1 = chroma; break;
      default: r1 = chroma; b1 = xx; break;
    }
    const double m = val - chroma;
    out.pixels[i] = to_u8((r1 + m) * 255.0);
    out.pixels[i + 1] = to_u8((g1 + m) * 255.0);
    out.pixels[i + 2] = to_u8((b1 + m) * 255.0);
  }
  return out;
}

Sample augment(Sample sample, const AugmentationConfig& config, std::uint64_t draw) {
  config.validate();
  std::seed_seq seq{config.seed, static_cast<std::uint32_t>(draw), static_cast<std::uint32_t>(draw >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);

  // Every draw is consumed whether or not its op fires, keeping streams aligned across configs.
  const double u_flip = unit(rng);
  const double u_rot = unit(rng), angle = sym(rng) * config.rotation_limit;
  const double u_blur = unit(rng), t_sigma = unit(rng);
  const double u_bc = unit(rng), brightness = sym(rng) * config.brightness_contrast_limit,
               contrast = sym(rng) * config.brightness_contrast_limit;
  const double u_hs = unit(rng), hue = sym(rng) * config.hue_saturation_limit,
               sat = sym(rng) * config.hue_saturation_limit;

  const auto& p = config.probability;
  if (u_flip < p.horizontal_flip) sample = horizontal_flip(std::move(sample));
  if (u_rot < p.rotation) sample = rotate(std::move(sample), angle);
  if (u_blur < p.gaussian_blur) {
    const auto [lo, hi] = config.blur_sigma_range;
    sample.image = gaussian_blur(sample.image, lo + (hi - lo) * t_sigma);
  }
  if (u_bc < p.brightness_contrast) sample.image = adjust_brightness_contrast(sample.image, brightness, contrast);
  if (u_hs < p.hue_saturation) sample.image = shift_hue_saturation(sample.image, hue, sat);
  return sample;
}

std::vector<int> largest_remainder(int total, std::span<const double> weights) {
  if (total < 0) throw InvalidArgument("largest_remainder: negative total");
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (weights.empty() || !(sum > 0.0)) throw InvalidArgument("largest_remainder: weights must have positive sum");
  std::vector<int> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rema;
  int assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0) throw InvalidArgument("largest_remainder: negative weight");
    const double q = total * weights[i] / sum;
    out[i] = static_cast<int>(std::floor(q + 1e-9));
    assigned += out[i];
    rema.emplace_back(q - out[i], i);
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first + 1e-12; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++out[rema[k % rema.size()].second];
  return out;
}

data::DatasetManifest stratified_split(data::DatasetManifest manifest, std::array<double, 3> ratios,
                                       std::uint32_t seed) {
  if (manifest.images.empty()) throw InvalidArgument("stratified_split: empty manifest");
  manifest.normalize();

  std::array<std::vector<std::string>, data::kNumClasses> by_class;
  for (const auto& img : manifest.images) {
    auto label = manifest.dominant_label(img.id);
    if (!label) throw InvalidArgument("stratified_split: image '" + img.id + "' has no annotation");
    by_class[data::index_of(*label)].push_back(img.id);
  }

  const int n = static_cast<int>(manifest.images.size());
  const std::vector<int> target = largest_remainder(n, ratios);
  const double rsum = ratios[0] + ratios[1] + ratios[2];

  // counts[c][s]: floors first, then one extra unit per cell by descending fractional part
  // while both the class row and the split column still need units.
  std::array<std::array<int, 3>, data::kNumClasses> counts{};
  std::array<int, data::kNumClasses> row_need{};
  std::array<int, 3> col_need = {target[0], target[1], target[2]};
  struct Cell {
    double frac;
    int c, s;
  };
  std::vector<Cell> cells;
  for (int c = 0; c < data::kNumClasses; ++c) {
    const int nc = static_cast<int>(by_class[c].size());
    row_need[c] = nc;
    for (int s = 0; s < 3; ++s) {
      const double q = nc * ratios[s] / rsum;
      counts[c][s] = static_cast<int>(std::floor(q + 1e-9));
      row_need[c] -= counts[c][s];
      col_need[s] -= counts[c][s];
      cells.push_back({q - counts[c][s], c, s});
    }
  }
  std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return a.frac > b.frac + 1e-12; });
  for (const Cell& cell : cells) {
    if (row_need[cell.c] > 0 && col_need[cell.s] > 0) {
      ++counts[cell.c][cell.s];
      --row_need[cell.c];
      --col_need[cell.s];
    }
  }
  for (int c = 0; c < data::kNumClasses; ++c) {
    for (int s = 0; s < 3 && row_need[c] > 0; ++s) {
      while (row_need[c] > 0 && col_need[s] > 0) {
        ++counts[c][s];
        --row_need[c];
        --col_need[s];
      }
    }
  }

  std::mt19937_64 rng(seed);
  manifest.splits.clear();
  constexpr std::array<data::Split, 3> kSplits{data::Split::train, data::Split::val, data::Split::test};
  for (int c = 0; c < data::kNumClasses; ++c) {
    auto ids = by_class[c];
    std::shuffle(ids.begin(), ids.end(), rng);
    std::size_t k = 0;
    for (int s = 0; s < 3; ++s) {
      for (int i = 0; i < counts[c][s]; ++i) manifest.splits[ids[k++]] = kSplits[s];
    }
  }
  return manifest;
}

std::vector<Sample> load_samples(const data::DatasetManifest& manifest, data::Split split, bool downsample) {
  std::vector<Sample> out;
  for (const std::string& id : manifest.ids_in(split)) {
    Sample s;
    s.image = manifest.load_pixels(id);
    for (const auto* a : manifest.annotations_for(id)) s.annotations.push_back(*a);
    out.push_back(downsample ? conditional_downsample(std::move(s)) : std::move(s));
  }
  return out;
}

}  // namespace oed::preprocess
