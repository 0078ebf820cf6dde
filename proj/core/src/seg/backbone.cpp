#include "oed/seg/backbone.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "oed/error.hpp"

namespace oed::seg {

using nn::Graph;
using nn::Var;

std::string_view to_string(BackboneKind kind) {
  return kind == BackboneKind::windowed_transformer ? "windowed_transformer" : "conv_fpn";
}

BackboneKind parse_backbone_kind(std::string_view name) {
  if (name == "windowed_transformer") return BackboneKind::windowed_transformer;
  if (name == "conv_fpn") return BackboneKind::conv_fpn;
  throw InvalidArgument("unknown backbone kind '" + std::string(name) + "'");
}

void BackboneConfig::validate() const {
  if (depth < 1) throw InvalidArgument("backbone.depth must be >= 1");
  if (window_size < 1) throw InvalidArgument("backbone.window_size must be >= 1");
  if (patch_size < 4 || (patch_size & (patch_size - 1)) != 0)
    throw InvalidArgument("backbone.patch_size must be a power of two >= 4");
  if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads != 0)
    throw InvalidArgument("backbone.embed_dim must be a positive multiple of backbone.num_heads");
  if (mlp_ratio < 1) throw InvalidArgument("backbone.mlp_ratio must be >= 1");
  if (fpn_dim < 1) throw InvalidArgument("backbone.fpn_dim must be >= 1");
}

int BackboneConfig::pad_multiple() const {
  if (kind == BackboneKind::conv_fpn) return 32;
  // token grid must tile exactly into windows, and the coarsest level halves it once more
  return std::lcm(patch_size * window_size, patch_size * 2);
}

nn::Tensor sincos_position_table(int h, int w, int dim) {
  nn::Tensor t({h * w, dim});
  const int half = dim / 2;
  const int qy = half / 2, qx = (dim - half) / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* row = t.data() + static_cast<std::size_t>(y * w + x) * dim;
      for (int i = 0; i < qy; ++i) {
        const double f = std::pow(10000.0, -static_cast<double>(i) / std::max(qy, 1));
        row[2 * i] = std::sin(y * f);
        row[2 * i + 1] = std::cos(y * f);
      }
      for (int i = 0; i < qx; ++i) {
        const double f = std::pow(10000.0, -static_cast<double>(i) / std::max(qx, 1));
        row[half + 2 * i] = std::sin(x * f);
        row[half + 2 * i + 1] = std::cos(x * f);
      }
    }
  }
  return t;
}

WindowedAttentionBlock::WindowedAttentionBlock(nn::ParamStore& store, const std::string& name, int dim, int heads,
                                               int mlp_ratio, std::mt19937_64& rng)
    : norm1_(store, name + ".norm1", dim),
      norm2_(store, name + ".norm2", dim),
      qkv_(store, name + ".qkv", dim, 3 * dim, rng),
      proj_(store, name + ".proj", dim, dim, rng),
      fc1_(store, name + ".fc1", dim, mlp_ratio * dim, rng),
      fc2_(store, name + ".fc2", mlp_ratio * dim, dim, rng),
      heads_(heads) {}

Var WindowedAttentionBlock::attention(Graph& g, Var tokens, const std::vector<std::vector<int>>& windows) const {
  return proj_(g, nn::windowed_attention(g, qkv_(g, tokens), heads_, windows));
}

Var WindowedAttentionBlock::operator()(Graph& g, Var tokens, const std::vector<std::vector<int>>& windows) const {
  Var x = nn::add(g, tokens, attention(g, norm1_(g, tokens), windows));
  Var m = fc2_(g, nn::gelu(g, fc1_(g, norm2_(g, x))));
  return nn::add(g, x, m);
}

namespace {

class WindowedTransformer final : public Backbone {
 public:
  WindowedTransformer(const BackboneConfig& c, nn::ParamStore& s, std::mt19937_64& rng, const std::string& p)
      : config_(c) {
    patch_embed_ = nn::Conv2d(s, p + ".patch_embed", 3, c.embed_dim, c.patch_size, c.patch_size, 0, rng,
                              nn::Init::xavier);
    for (int i = 0; i < c.depth; ++i) {
      blocks_.emplace_back(s, p + ".blocks." + std::to_string(i), c.embed_dim, c.num_heads, c.mlp_ratio, rng);
    }
    norm_ = nn::LayerNorm(s, p + ".norm", c.embed_dim);
    up_ = nn::Conv2d(s, p + ".p3", c.embed_dim, c.fpn_dim, 3, 1, 1, rng);
    lateral_ = nn::Conv2d(s, p + ".p4_lateral", c.embed_dim, c.fpn_dim, 1, 1, 0, rng);
    out_ = nn::Conv2d(s, p + ".p4_out", c.fpn_dim, c.fpn_dim, 3, 1, 1, rng);
    // shallow conv stem down to the p3 stride, added into p3 for boundary detail
    int in = 3, width = 16;
    for (int stride = 2; stride < c.patch_size / 2; stride *= 2, width *= 2) {
      stem_.emplace_back(s, p + ".stem" + std::to_string(stem_.size()), in, width, 3, 2, 1, rng);
      in = width;
    }
    stem_.emplace_back(s, p + ".stem" + std::to_string(stem_.size()), in, c.fpn_dim, 3, 2, 1, rng);
  }

  FeaturePyramid forward(Graph& g, Var image) const override {
    Var fm = patch_embed_(g, image);
    const int gh = g.value(fm).dim(2), gw = g.value(fm).dim(3);
    if (gh < 1 || gw < 1) throw InvalidArgument("backbone: image smaller than one patch");
    Var tok = nn::add(g, nn::map_to_tokens(g, fm), g.input(sincos_position_table(gh, gw, config_.embed_dim)));
    const auto windows = nn::make_windows(gh, gw, config_.window_size);
    for (const auto& b : blocks_) tok = b(g, tok, windows);
    Var c4 = nn::tokens_to_map(g, norm_(g, tok), gh, gw);

    Var d = image;
    for (std::size_t i = 0; i < stem_.size(); ++i) d = i + 1 < stem_.size() ? nn::relu(g, stem_[i](g, d)) : stem_[i](g, d);
    Var p3 = nn::relu(g, nn::add(g, up_(g, nn::upsample_nearest2x(g, c4)), d));
    Var p4 = out_(g, nn::relu(g, lateral_(g, c4)));
    Var p5 = nn::maxpool2x2(g, p4);
    const int s = config_.patch_size;
    return {{p3, p4, p5}, {s / 2, s, s * 2}};
  }

  const BackboneConfig& config() const override { return config_; }

 private:
  BackboneConfig config_;
  nn::Conv2d patch_embed_;
  std::vector<WindowedAttentionBlock> blocks_;
  nn::LayerNorm norm_;
  nn::Conv2d up_, lateral_, out_;
  std::vector<nn::Conv2d> stem_;
};

class ConvFpn final : public Backbone {
 public:
  ConvFpn(const BackboneConfig& c, nn::ParamStore& s, std::mt19937_64& rng, const std::string& p) : config_(c) {
    const int widths[] = {16, 32, 48, 64, 96};
    int in = 3;
    for (int i = 0; i < 5; ++i) {
      stages_.emplace_back(s, p + ".stage" + std::to_string(i) + ".down", in, widths[i], 3, 2, 1, rng);
      refine_.emplace_back(s, p + ".stage" + std::to_string(i) + ".conv", widths[i], widths[i], 3, 1, 1, rng);
      in = widths[i];
    }
    for (int l = 0; l < 3; ++l) {
      lateral_.emplace_back(s, p + ".fpn.lateral" + std::to_string(l), widths[l + 2], c.fpn_dim, 1, 1, 0, rng);
      output_.emplace_back(s, p + ".fpn.out" + std::to_string(l), c.fpn_dim, c.fpn_dim, 3, 1, 1, rng);
    }
  }

  FeaturePyramid forward(Graph& g, Var image) const override {
    std::vector<Var> c;
    Var x = image;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      x = nn::relu(g, stages_[i](g, x));
      x = nn::relu(g, refine_[i](g, x));
      c.push_back(x);
    }
    // top-down: C5 -> P5, then upsample and add laterals
    Var top = lateral_[2](g, c[4]);
    std::vector<Var> p(3);
    p[2] = output_[2](g, top);
    for (int l = 1; l >= 0; --l) {
      top = nn::add(g, lateral_[l](g, c[l + 2]), nn::upsample_nearest2x(g, top));
      p[l] = output_[l](g, top);
    }
    return {p, {8, 16, 32}};
  }

  const BackboneConfig& config() const override { return config_; }

 private:
  BackboneConfig config_;
  std::vector<nn::Conv2d> stages_, refine_, lateral_, output_;
};

}  // namespace

std::unique_ptr<Backbone> build_backbone(const BackboneConfig& config, nn::ParamStore& store, std::mt19937_64& rng,
                                         const std::string& prefix) {
  config.validate();
  if (config.kind == BackboneKind::windowed_transformer)
    return std::make_unique<WindowedTransformer>(config, store, rng, prefix);
  return std::make_unique<ConvFpn>(config, store, rng, prefix);
}

}  // namespace oed::seg
