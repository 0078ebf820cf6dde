#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oed/synth.hpp"

using namespace oed;
using namespace oed::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("oed_test_synth_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("generation is byte-deterministic") {
  synth::SynthConfig c;
  c.n_images = 1;
  c.seed = 7;
  const auto a = scratch_dir("det_a"), b = scratch_dir("det_b");
  synth::generate_synthetic_dataset(c, a);
  synth::generate_synthetic_dataset(c, b);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  for (const auto& e : fs::directory_iterator(a / "images")) {
    CHECK(slurp(e.path()) == slurp(b / "images" / e.path().filename()));
  }
  c.seed = 8;
  const auto d = scratch_dir("det_c");
  synth::generate_synthetic_dataset(c, d);
  CHECK(slurp(a / "manifest.json") != slurp(d / "manifest.json"));
}

TEST_CASE("single-class mix labels every annotation") {
  synth::SynthConfig c;
  c.n_images = 10;
  c.class_mix = {1.0, 0.0, 0.0};
  for (const auto& s : synth::generate_samples(c))
    for (const auto& a : s.annotations) CHECK(a.label() == ClassLabel::non_dysplastic);
}

TEST_CASE("label counts follow largest-remainder rounding") {
  synth::SynthConfig c;
  c.n_images = 100;
  c.class_mix = {0.3, 0.5, 0.2};
  c.seed = 3;
  std::array<int, 3> n{};
  for (auto l : synth::assign_labels(c)) ++n[index_of(l)];
  CHECK(n == std::array<int, 3>{30, 50, 20});

  c.n_images = 7;
  c.class_mix = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  n = {};
  for (auto l : synth::assign_labels(c)) ++n[index_of(l)];
  CHECK(n == std::array<int, 3>{3, 2, 2});
}

TEST_CASE("generated datasets satisfy the data-model invariants") {
  synth::SynthConfig c;
  c.n_images = 30;
  c.seed = 21;
  const auto dir = scratch_dir("inv");
  const DatasetManifest m = synth::generate_synthetic_dataset(c, dir);
  CHECK_NOTHROW(m.validate());
  const DatasetManifest back = load_manifest(dir / "manifest.json");
  CHECK(back == m);
  CHECK(m.images.size() == 30);
  std::array<int, 3> sizes{};
  for (const auto& [id, s] : m.splits) ++sizes[static_cast<int>(s)];
  CHECK(sizes == std::array<int, 3>{21, 6, 3});

  for (const auto& img : m.images) {
    const auto anns = m.annotations_for(img.id);
    CHECK(anns.size() >= 1);
    CHECK(anns.size() <= 2);
    const Image px = m.load_pixels(img.id);
    CHECK(px.width == img.width);
    CHECK(px.height == img.height);
    for (const auto* a : anns) {
      CHECK(a->polygon().size() == synth::kPolygonSides);
      const double frac = static_cast<double>(polygon_to_mask(a->polygon(), img.height, img.width).count()) /
                          (static_cast<double>(img.width) * img.height);
      CHECK(frac >= 0.01);
      CHECK(frac <= 0.60);
      CHECK(a->bbox() == hull(a->polygon()));
    }
  }
}

TEST_CASE("class appearance differs") {
  synth::SynthConfig c;
  auto mean_inside = [&](ClassLabel l) {
    const auto s = synth::render_image(c, 0, l, "x");
    const auto m = polygon_to_mask(s.annotations[0].polygon(), s.image.height, s.image.width);
    double sum = 0;
    int n = 0;
    for (int y = 0; y < s.image.height; ++y)
      for (int x = 0; x < s.image.width; ++x)
        if (m.at(x, y)) {
          sum += s.image.at(x, y, 0) + s.image.at(x, y, 1) + s.image.at(x, y, 2);
          ++n;
        }
    return sum / n;
  };
  // cancerous lesions are the darkest, non-dysplastic the palest
  CHECK(mean_inside(ClassLabel::cancerous) < mean_inside(ClassLabel::dysplastic));
  CHECK(mean_inside(ClassLabel::cancerous) < mean_inside(ClassLabel::non_dysplastic));
  const Image bg = synth::render_background(c, 0);
  CHECK(bg.width == c.width);
}

TEST_CASE("synth config validation") {
  synth::SynthConfig c;
  c.class_mix = {0.3, 0.3, 0.3};
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.n_images = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.class_mix = {1.2, -0.2, 0.0};
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK(synth::image_id_for(3) != synth::image_id_for(4));
}
