#pragma once

// JSON mapping of every configuration struct. Readers are strict: unknown keys and
// mistyped values raise SchemaError naming the field path; absent keys keep defaults.

#include <set>
#include <string>

#include "json.hpp"
#include "oed/error.hpp"
#include "oed/mil.hpp"
#include "oed/nn/optim.hpp"
#include "oed/preprocess.hpp"
#include "oed/seg/model.hpp"
#include "oed/seg/train.hpp"
#include "oed/synth.hpp"

namespace oed::detail {

using nlohmann::json;

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SchemaError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  ObjectReader& get(const char* key, T& out) {
    if (!j_.contains(key)) return *this;
    seen_.insert(key);
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw SchemaError(child(key), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw SchemaError(child(key), "expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw SchemaError(child(key), "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw SchemaError(child(key), "expected a string");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw SchemaError(child(key), e.what());
    }
    return *this;
  }

  template <class E, class Parse>
  ObjectReader& get_enum(const char* key, E& out, Parse parse) {
    if (!j_.contains(key)) return *this;
    seen_.insert(key);
    const json& v = j_.at(key);
    if (!v.is_string()) throw SchemaError(child(key), "expected a string");
    try {
      out = parse(v.get<std::string>());
    } catch (const InvalidArgument& e) {
      throw SchemaError(child(key), e.what());
    }
    return *this;
  }

  /// Rejects keys that no reader consumed.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) throw SchemaError(child(it.key().c_str()), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

/// Re-raises a validate() failure as a SchemaError rooted at `path`.
template <class F>
void validated(const std::string& path, F&& f) {
  try {
    f();
  } catch (const SchemaError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw SchemaError(path.empty() ? "<root>" : path, e.what());
  }
}

json to_json_value(const seg::BackboneConfig& c);
void read(const json& j, seg::BackboneConfig& c, const std::string& path);
json to_json_value(const seg::AnchorConfig& c);
void read(const json& j, seg::AnchorConfig& c, const std::string& path);
json to_json_value(const seg::SegModelConfig& c);
void read(const json& j, seg::SegModelConfig& c, const std::string& path);
json to_json_value(const preprocess::AugmentationConfig& c);
void read(const json& j, preprocess::AugmentationConfig& c, const std::string& path);
json to_json_value(const nn::OptimizerConfig& c);
void read(const json& j, nn::OptimizerConfig& c, const std::string& path);
json to_json_value(const synth::SynthConfig& c);
void read(const json& j, synth::SynthConfig& c, const std::string& path);
void read(const json& j, seg::TrainConfig& c, const std::string& path);
json to_json_value(const mil::MILTrainConfig& c);
void read(const json& j, mil::MILTrainConfig& c, const std::string& path);

}  // namespace oed::detail
