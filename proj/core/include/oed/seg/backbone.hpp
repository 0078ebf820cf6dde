#pragma once

#include <memory>
#include <random>
#include <string_view>
#include <vector>

#include "oed/nn/graph.hpp"
#include "oed/nn/layers.hpp"

namespace oed::seg {

enum class BackboneKind { windowed_transformer, conv_fpn };

std::string_view to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(std::string_view name);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::windowed_transformer;
  int embed_dim = 96;
  int depth = 4;
  int window_size = 4;
  int patch_size = 16;
  int num_heads = 4;
  int mlp_ratio = 2;
  /// Channel width of every pyramid level.
  int fpn_dim = 64;

  void validate() const;
  /// Inputs are zero-padded to a multiple of this on both sides.
  int pad_multiple() const;
};

/// Three levels, finest first.
struct FeaturePyramid {
  std::vector<nn::Var> levels;
  std::vector<int> strides;
};

/// Pre-norm transformer block with self-attention restricted to windows of the token grid.
class WindowedAttentionBlock {
 public:
  WindowedAttentionBlock() = default;
  WindowedAttentionBlock(nn::ParamStore& store, const std::string& name, int dim, int heads, int mlp_ratio,
                         std::mt19937_64& rng);

  /// tokens [h*w, dim] -> [h*w, dim]
  nn::Var operator()(nn::Graph& g, nn::Var tokens, const std::vector<std::vector<int>>& windows) const;
  /// Attention sub-layer only (no residuals, norms or MLP): proj(attn(qkv(x))).
  nn::Var attention(nn::Graph& g, nn::Var tokens, const std::vector<std::vector<int>>& windows) const;
  int heads() const noexcept { return heads_; }

 private:
  nn::LayerNorm norm1_, norm2_;
  nn::Linear qkv_, proj_, fc1_, fc2_;
  int heads_ = 1;
};

/// 2D sine-cosine position table [h*w, dim]; half the channels encode rows, half columns.
nn::Tensor sincos_position_table(int h, int w, int dim);

class Backbone {
 public:
  virtual ~Backbone() = default;
  /// image [1, 3, H, W] with H, W multiples of pad_multiple().
  virtual FeaturePyramid forward(nn::Graph& g, nn::Var image) const = 0;
  virtual const BackboneConfig& config() const = 0;
};

/// Registers parameters under `prefix` in `store`.
std::unique_ptr<Backbone> build_backbone(const BackboneConfig& config, nn::ParamStore& store, std::mt19937_64& rng,
                                         const std::string& prefix = "backbone");

}  // namespace oed::seg
