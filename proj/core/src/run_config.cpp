#include "oed/run_config.hpp"

#include <fstream>
#include <sstream>

#include "json_config.hpp"

namespace oed {

using detail::json;
using detail::ObjectReader;

void EvalConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw InvalidArgument("eval.iou_threshold must be in (0, 1]");
  if (!(mask_threshold >= 0.0 && mask_threshold <= 1.0)) throw InvalidArgument("eval.mask_threshold must be in [0, 1]");
  data::parse_split(split);
}

void ServeConfig::validate() const {
  if (port < 0 || port > 65535) throw InvalidArgument("serve.port must be in [0, 65535]");
  if (max_payload_bytes == 0) throw InvalidArgument("serve.max_payload_bytes must be > 0");
  if (demo_samples < 0) throw InvalidArgument("serve.demo_samples must be >= 0");
  if (threads < 1) throw InvalidArgument("serve.threads must be >= 1");
}

void RunConfig::validate() const {
  synth.validate();
  seg_model.validate();
  seg_train.validate();
  mil.validate();
  eval.validate();
  serve.validate();
  double sum = 0.0;
  for (double r : split_ratios) {
    if (!(r >= 0.0)) throw InvalidArgument("split_ratios entries must be >= 0");
    sum += r;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw InvalidArgument("split_ratios must sum to 1");
}

namespace {

json paths_json(const RunPaths& p) {
  return {{"manifest", p.manifest},
          {"out_dir", p.out_dir},
          {"seg_checkpoint", p.seg_checkpoint},
          {"mil_checkpoint", p.mil_checkpoint},
          {"checkpoints", p.checkpoints},
          {"image", p.image}};
}

json full_json(const RunConfig& c) {
  return {{"paths", paths_json(c.paths)},
          {"synth", detail::to_json_value(c.synth)},
          {"split_ratios", c.split_ratios},
          {"seg_model", detail::to_json_value(c.seg_model)},
          {"seg_train", json::parse(seg::to_json(c.seg_train))},
          {"mil", detail::to_json_value(c.mil)},
          {"eval",
           {{"iou_threshold", c.eval.iou_threshold},
            {"mask_threshold", c.eval.mask_threshold},
            {"oracle", c.eval.oracle},
            {"split", c.eval.split}}},
          {"serve",
           {{"port", c.serve.port},
            {"host", c.serve.host},
            {"max_payload_bytes", c.serve.max_payload_bytes},
            {"demo_samples", c.serve.demo_samples},
            {"threads", c.serve.threads}}}};
}

json parse_value(const std::string& v) {
  try {
    return json::parse(v);
  } catch (const json::parse_error&) {
    return v;
  }
}

void apply_override(json& root, const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0) throw SchemaError(item, "override must look like key.path=value");
  const std::string key = item.substr(0, eq);
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw SchemaError(key, "empty path component");
    if (!node->is_object()) throw SchemaError(key, "cannot descend into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = parse_value(item.substr(eq + 1));
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

}  // namespace

std::string to_json(const RunConfig& config) { return full_json(config).dump(2) + "\n"; }

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!text.empty()) {
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw SchemaError("<root>", e.what());
    }
  }
  if (!j.is_object()) throw SchemaError("<root>", "expected an object");
  for (const auto& o : overrides) apply_override(j, o);

  RunConfig c;
  ObjectReader r(j, "");
  if (r.has("paths")) {
    RunPaths& p = c.paths;
    ObjectReader(r.at("paths"), "paths")
        .get("manifest", p.manifest)
        .get("out_dir", p.out_dir)
        .get("seg_checkpoint", p.seg_checkpoint)
        .get("mil_checkpoint", p.mil_checkpoint)
        .get("checkpoints", p.checkpoints)
        .get("image", p.image)
        .finish();
  }
  if (r.has("synth")) detail::read(r.at("synth"), c.synth, "synth");
  if (r.has("split_ratios")) {
    const json& s = r.at("split_ratios");
    if (!s.is_array() || s.size() != 3) throw SchemaError("split_ratios", "expected three numbers");
    for (int i = 0; i < 3; ++i) {
      if (!s[i].is_number()) throw SchemaError("split_ratios", "expected three numbers");
      c.split_ratios[i] = s[i].get<double>();
    }
  }
  if (r.has("seg_model")) detail::read(r.at("seg_model"), c.seg_model, "seg_model");
  if (r.has("seg_train")) detail::read(r.at("seg_train"), c.seg_train, "seg_train");
  if (r.has("mil")) detail::read(r.at("mil"), c.mil, "mil");
  if (r.has("eval")) {
    ObjectReader(r.at("eval"), "eval")
        .get("iou_threshold", c.eval.iou_threshold)
        .get("mask_threshold", c.eval.mask_threshold)
        .get("oracle", c.eval.oracle)
        .get("split", c.eval.split)
        .finish();
    detail::validated("eval", [&] { c.eval.validate(); });
  }
  if (r.has("serve")) {
    ObjectReader(r.at("serve"), "serve")
        .get("port", c.serve.port)
        .get("host", c.serve.host)
        .get("max_payload_bytes", c.serve.max_payload_bytes)
        .get("demo_samples", c.serve.demo_samples)
        .get("threads", c.serve.threads)
        .finish();
    detail::validated("serve", [&] { c.serve.validate(); });
  }
  r.finish();
  detail::validated("", [&] { c.validate(); });
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::string text;
  if (!path.empty()) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw SchemaError("--config", "cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    text = ss.str();
  }
  return parse_run_config(text, overrides);
}

}  // namespace oed
