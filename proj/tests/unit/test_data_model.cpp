#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oed/data_model.hpp"
#include "oracles.hpp"

using namespace oed;
using namespace oed::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("oed_test_data_model_" + name);
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

// Star-shaped polygon around (cx, cy): sorted angles, random radii, so it is simple.
std::vector<Point> star_polygon(std::mt19937_64& rng, double cx, double cy, double rmax, int n) {
  std::uniform_real_distribution<double> ang(0.0, 2 * M_PI), rad(0.3 * rmax, rmax);
  std::vector<double> a(n);
  for (auto& v : a) v = ang(rng);
  std::sort(a.begin(), a.end());
  std::vector<Point> pts;
  for (double t : a) {
    const double r = rad(rng);
    pts.push_back({cx + r * std::cos(t), cy + r * std::sin(t)});
  }
  return pts;
}

DatasetManifest random_manifest(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_img(0, 6), side(8, 300), n_ann(0, 3), sides(3, 12), cls(0, 2), sp(0, 2);
  DatasetManifest m;
  const int n = n_img(rng);
  for (int i = 0; i < n; ++i) {
    ImageEntry e;
    e.id = "im" + std::to_string(rng() % 100000) + "_" + std::to_string(i);
    e.width = side(rng);
    e.height = side(rng);
    e.path = "images/" + e.id + ".png";
    m.images.push_back(e);
    m.splits[e.id] = std::array{Split::train, Split::val, Split::test}[sp(rng)];
    const int k = n_ann(rng);
    for (int j = 0; j < k; ++j) {
      const double r = 0.25 * std::min(e.width, e.height);
      auto poly = star_polygon(rng, e.width / 2.0, e.height / 2.0, r, sides(rng));
      m.annotations.emplace_back(e.id, poly, label_from_index(cls(rng)));
    }
  }
  m.normalize();
  return m;
}

}  // namespace

TEST_CASE("class labels and display colors") {
  CHECK(kAllLabels.size() == 3);
  CHECK(display_color(ClassLabel::non_dysplastic) == Rgb{0, 200, 0});
  CHECK(parse_label("dysplastic") == ClassLabel::dysplastic);
  CHECK_THROWS_AS(parse_label("benign"), InvalidArgument);
  for (ClassLabel l : kAllLabels) CHECK(parse_label(to_string(l)) == l);
  CHECK(most_severe(ClassLabel::dysplastic, ClassLabel::cancerous) == ClassLabel::cancerous);
  CHECK(is_positive_group(ClassLabel::dysplastic));
  CHECK_FALSE(is_positive_group(ClassLabel::non_dysplastic));
}

TEST_CASE("annotation bbox is the polygon hull") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    auto poly = star_polygon(rng, 50, 50, 30, 3 + i % 10);
    LesionAnnotation a("x", poly, ClassLabel::cancerous);
    double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
    for (auto p : poly) {
      x0 = std::min(x0, p.x);
      y0 = std::min(y0, p.y);
      x1 = std::max(x1, p.x);
      y1 = std::max(y1, p.y);
    }
    CHECK(a.bbox() == Box{x0, y0, x1, y1});
  }
}

TEST_CASE("valid two-image manifest loads with splits") {
  const std::string text = R"({
    "images": [{"id": "b", "path": "b.png", "width": 10, "height": 10},
               {"id": "a", "path": "a.png", "width": 20, "height": 8}],
    "annotations": [{"image_id": "a", "polygon": [[1,1],[5,1],[5,5]], "label": "dysplastic"}],
    "splits": {"a": "train", "b": "test"}
  })";
  const DatasetManifest m = parse_manifest(text);
  REQUIRE(m.images.size() == 2);
  CHECK(m.images[0].id == "a");
  CHECK(m.splits.at("a") == Split::train);
  CHECK(m.splits.at("b") == Split::test);
  CHECK(m.annotations[0].bbox() == Box{1, 1, 5, 5});
}

TEST_CASE("manifest errors name the field") {
  const std::string dangling = R"({"images": [{"id": "a", "path": "a.png", "width": 4, "height": 4}],
    "annotations": [{"image_id": "zzz", "polygon": [[0,0],[1,0],[1,1]], "label": "cancerous"}],
    "splits": {"a": "train"}})";
  CHECK_THROWS_AS(parse_manifest(dangling), DanglingReference);

  const std::string bad_label = R"({"images": [{"id": "a", "path": "a.png", "width": 4, "height": 4}],
    "annotations": [{"image_id": "a", "polygon": [[0,0],[1,0],[1,1]], "label": "benign"}],
    "splits": {"a": "train"}})";
  try {
    parse_manifest(bad_label);
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(e.path() == "annotations[0].label");
  }

  const std::string no_split = R"({"images": [{"id": "a", "path": "a.png", "width": 4, "height": 4}],
    "annotations": [], "splits": {}})";
  try {
    parse_manifest(no_split);
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(e.path() == "splits.a");
  }
  CHECK_THROWS_AS(parse_manifest(R"({"images": [{"id": "a", "path": "a.png", "width": "4", "height": 4}],
    "annotations": [], "splits": {"a": "val"}})"), SchemaError);
  CHECK_THROWS_AS(parse_manifest("not json"), SchemaError);
  CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.json"), IoError);
}

TEST_CASE("polygon points are clipped to the image on load") {
  const std::string text = R"({"images": [{"id": "a", "path": "a.png", "width": 10, "height": 10}],
    "annotations": [{"image_id": "a", "polygon": [[-5,2],[8,2],[8,15]], "label": "cancerous"}],
    "splits": {"a": "train"}})";
  const DatasetManifest m = parse_manifest(text);
  for (auto p : m.annotations[0].polygon()) {
    CHECK(p.x >= 0);
    CHECK(p.x <= 10);
    CHECK(p.y >= 0);
    CHECK(p.y <= 10);
  }
}

TEST_CASE("empty manifest serializes to empty sections") {
  const auto dir = scratch_dir("empty");
  save_manifest(DatasetManifest{}, dir / "m.json");
  const std::string text = slurp(dir / "m.json");
  CHECK(text.find("\"annotations\": []") != std::string::npos);
  CHECK(text.find("\"images\": []") != std::string::npos);
  CHECK(load_manifest(dir / "m.json") == DatasetManifest{});
}

TEST_CASE("manifest round trip over random manifests") {
  std::mt19937_64 rng(2024);
  const auto dir = scratch_dir("roundtrip");
  for (int i = 0; i < 50; ++i) {
    const DatasetManifest m = random_manifest(rng);
    save_manifest(m, dir / "a.json");
    save_manifest(m, dir / "b.json");
    const std::string a = slurp(dir / "a.json");
    CHECK(a == slurp(dir / "b.json"));
    const DatasetManifest back = load_manifest(dir / "a.json");
    CHECK(back == m);
    save_manifest(back, dir / "c.json");
    CHECK(slurp(dir / "c.json") == a);
    for (const auto& ann : back.annotations) CHECK(ann.bbox() == hull(ann.polygon()));
  }
}

TEST_CASE("manifest keys are sorted on save") {
  DatasetManifest m;
  m.images.push_back({"z", "z.png", 4, 4});
  m.splits["z"] = Split::val;
  const std::string s = serialize_manifest(m);
  CHECK(s.find("\"annotations\"") < s.find("\"images\""));
  CHECK(s.find("\"images\"") < s.find("\"splits\""));
  CHECK(s.find("\"height\"") < s.find("\"id\""));
}

TEST_CASE("polygon_to_mask hand cases") {
  const std::vector<Point> square{{0, 0}, {4, 0}, {4, 4}, {0, 4}};
  const auto full = polygon_to_mask(square, 4, 4);
  CHECK(full.count() == 16);

  const std::vector<Point> outside{{10, 10}, {14, 10}, {14, 14}};
  CHECK(polygon_to_mask(outside, 4, 4).count() == 0);

  const std::vector<Point> tri{{0, 0}, {4, 0}, {0, 4}};
  const auto m = polygon_to_mask(tri, 8, 8);
  std::size_t brute = 0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const double cx = x + 0.5, cy = y + 0.5;
      brute += (cx > 0 && cy > 0 && cx + cy < 4) ? 1 : 0;
    }
  CHECK(m.count() == brute);
  CHECK(brute == 6);

  const std::vector<Point> degenerate{{0, 0}, {1, 1}, {0, 0}};
  CHECK_THROWS_AS(polygon_to_mask(degenerate, 4, 4), InvalidArgument);
}

TEST_CASE("polygon_to_mask agrees with a winding-number oracle") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> sz(4, 40), nv(3, 14);
  for (int i = 0; i < 100; ++i) {
    const int h = sz(rng), w = sz(rng);
    const auto poly = star_polygon(rng, w / 2.0 + 0.123, h / 2.0 + 0.377, 0.6 * std::max(h, w), nv(rng));
    std::vector<std::array<double, 2>> ref;
    for (auto p : poly) ref.push_back({p.x, p.y});
    const auto m = polygon_to_mask(poly, h, w);
    REQUIRE(m.width == w);
    REQUIRE(m.height == h);
    int mismatches = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) mismatches += (m.at(x, y) != 0) != testing::ref_inside(x + 0.5, y + 0.5, ref);
    CHECK(mismatches == 0);
  }
}

TEST_CASE("detection validation") {
  Detection d;
  d.bbox = {0, 0, 4, 4};
  d.score = 0.5;
  CHECK_NOTHROW(d.validate());
  d.score = 1.5;
  CHECK_THROWS_AS(d.validate(), InvalidArgument);
  d.score = 0.5;
  d.bbox = {3, 0, 3, 4};
  CHECK_THROWS_AS(d.validate(), InvalidArgument);
  d.bbox = {0, 0, 2, 2};
  d.mask = Raster(2, 2, 2.0f);
  CHECK_THROWS_AS(d.validate(), InvalidArgument);
}

TEST_CASE("png codec round trip") {
  Image im(5, 3);
  for (std::size_t i = 0; i < im.pixels.size(); ++i) im.pixels[i] = static_cast<std::uint8_t>(i * 17);
  const auto bytes = encode_png(im);
  CHECK(looks_like_png(bytes));
  CHECK(decode_png(bytes) == im);
  const std::vector<std::uint8_t> text{'h', 'e', 'l', 'l', 'o'};
  CHECK_FALSE(looks_like_png(text));
  CHECK_THROWS_AS(decode_png(text), IoError);
  const std::vector<std::uint8_t> abc{'a', 'b', 'c'};
  CHECK(base64_encode(abc) == "YWJj");
}
