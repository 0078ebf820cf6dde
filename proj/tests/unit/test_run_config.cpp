#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "oed/run_config.hpp"

using namespace oed;

namespace {

std::string schema_path(const std::string& text, const std::vector<std::string>& overrides = {}) {
  try {
    parse_run_config(text, overrides);
  } catch (const SchemaError& e) {
    return e.path();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("defaults follow the stated hyperparameters") {
  const RunConfig c = parse_run_config("");
  CHECK(c.seg_train.learning_rate == 1e-4);
  CHECK(c.seg_train.weight_decay == 5e-4);
  CHECK(c.mil.batch_size == 32);
  CHECK(c.mil.bag_size == 4);
  CHECK(c.mil.patch_size == 128);
  CHECK(c.eval.iou_threshold == 0.25);
  CHECK(c.seg_model.score_threshold == 0.5);
  CHECK(c.serve.max_payload_bytes == 20u * 1024u * 1024u);
  CHECK(c.seg_model.backbone.kind == seg::BackboneKind::windowed_transformer);
  CHECK(c.seg_model.mask_loss == seg::MaskLossKind::dice);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("json round trip") {
  RunConfig c = parse_run_config("", {"seg_train.epochs=3", "mil.init=random", "synth.n_images=12",
                                      "seg_model.backbone.kind=conv_fpn", "paths.checkpoints=[\"a\",\"b\"]"});
  CHECK(c.seg_train.epochs == 3);
  CHECK(c.mil.init == mil::MilInit::random);
  CHECK(c.synth.n_images == 12);
  CHECK(c.seg_model.backbone.kind == seg::BackboneKind::conv_fpn);
  CHECK(c.paths.checkpoints == std::vector<std::string>{"a", "b"});
  const std::string text = to_json(c);
  CHECK(to_json(parse_run_config(text)) == text);
  const auto j = nlohmann::json::parse(text);
  CHECK(j.at("seg_train").at("epochs") == 3);
}

TEST_CASE("overrides layer on top of the document") {
  const std::string doc = R"({"seg_train": {"epochs": 7}, "synth": {"seed": 3}})";
  const RunConfig c = parse_run_config(doc, {"synth.seed=9"});
  CHECK(c.seg_train.epochs == 7);
  CHECK(c.synth.seed == 9);
  CHECK(parse_run_config("", {"paths.out_dir=somewhere"}).paths.out_dir == "somewhere");
}

TEST_CASE("schema errors name the offending field") {
  CHECK(schema_path(R"({"seg_train": {"epochz": 3}})") == "seg_train.epochz");
  CHECK(schema_path(R"({"nonsense": 1})") == "nonsense");
  CHECK(schema_path(R"({"seg_train": {"epochs": "many"}})") == "seg_train.epochs");
  CHECK(schema_path("", {"seg_model.backbone.kind=resnet"}) == "seg_model.backbone.kind");
  CHECK(schema_path("", {"no_equals_sign"}) != "<no error>");
  CHECK(schema_path("{not json") != "<no error>");
}

TEST_CASE("invalid values are rejected") {
  CHECK_THROWS(parse_run_config("", {"synth.class_mix=[0.3,0.3,0.3]"}).validate());
  CHECK_THROWS(parse_run_config("", {"seg_train.learning_rate=0"}).validate());
  CHECK_THROWS(parse_run_config("", {"mil.batch_size=30"}).validate());
  CHECK_THROWS(parse_run_config("", {"eval.iou_threshold=0"}).validate());
  CHECK_THROWS(parse_run_config("", {"serve.threads=0"}).validate());
}

TEST_CASE("config files") {
  const auto dir = std::filesystem::temp_directory_path() / "oed_test_run_config";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "c.json");
    f << R"({"mil": {"epochs": 4}})";
  }
  CHECK(load_run_config(dir / "c.json").mil.epochs == 4);
  CHECK(load_run_config("", {"mil.epochs=6"}).mil.epochs == 6);
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), SchemaError);
}
