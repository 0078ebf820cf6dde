#pragma once

#include <vector>

#include "oed/nn/graph.hpp"

// Differentiable ops over Graph. Layout conventions: feature maps are NCHW, token
// sequences and fully connected activations are [rows, features].
namespace oed::nn {

Var add(Graph& g, Var a, Var b);
Var scale(Graph& g, Var x, double factor);

/// x[N, in] * w[in, out] + b[out]; `b` may be invalid (no bias).
Var linear(Graph& g, Var x, Var w, Var b);

Var relu(Graph& g, Var x);
/// tanh approximation.
Var gelu(Graph& g, Var x);
Var sigmoid(Graph& g, Var x);
Var softmax_rows(Graph& g, Var x);

Var layer_norm_rows(Graph& g, Var x, Var gamma, Var beta, double eps = 1e-6);

/// x[N, C, H, W] with weights w[O, C, k, k] and bias b[O] (may be invalid).
Var conv2d(Graph& g, Var x, Var w, Var b, int stride, int pad);
Var upsample_nearest2x(Graph& g, Var x);
/// 2x2, stride 2; odd trailing rows/columns form partial windows.
Var maxpool2x2(Graph& g, Var x);
/// [N, C, H, W] -> [N, C]
Var global_avg_pool(Graph& g, Var x);
Var concat_channels(Graph& g, const std::vector<Var>& xs);

Var reshape(Graph& g, Var x, Shape shape);
/// [A, B] -> [B, A]
Var transpose2d(Graph& g, Var x);
/// [1, C, H, W] -> [H*W, C] (row-major over H, W).
Var map_to_tokens(Graph& g, Var x);
/// [H*W, C] -> [1, C, H, W]
Var tokens_to_map(Graph& g, Var x, int height, int width);

/// Multi-head self-attention restricted to token groups. `qkv` is [T, 3C] holding
/// queries, keys and values side by side; each token index must appear in exactly
/// one window. Output is [T, C].
Var windowed_attention(Graph& g, Var qkv, int heads, const std::vector<std::vector<int>>& windows);

/// Non-overlapping square windows tiling an h x w grid padded up to a multiple of
/// `window`; padded cells are simply absent from their window.
std::vector<std::vector<int>> make_windows(int h, int w, int window);

}  // namespace oed::nn
