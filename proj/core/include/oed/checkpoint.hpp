#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "oed/nn/graph.hpp"
#include "oed/nn/tensor.hpp"

namespace oed {

inline constexpr const char* kSegCheckpointHeader = "oedseg-v1";
inline constexpr const char* kMilCheckpointHeader = "oedmil-v1";

/// Single-file archive: header line, JSON config echo, JSON training metadata and a
/// named tensor map stored as little-endian float64.
struct Checkpoint {
  std::string header;
  std::string config_json;
  std::string metadata_json;
  std::map<std::string, nn::Tensor> tensors;

  void store_params(const nn::ParamStore& params);
  /// Copies tensors into matching parameters; throws InvalidArgument on any name or
  /// shape mismatch.
  void load_params(nn::ParamStore& params) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Reads an archive and verifies its header; an empty `expected_header` accepts any.
Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_header = "");

/// Reads only the header line.
std::string peek_checkpoint_header(const std::filesystem::path& path);

}  // namespace oed
