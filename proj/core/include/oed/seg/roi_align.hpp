#pragma once

#include <span>

#include "oed/nn/graph.hpp"
#include "oed/seg/boxes.hpp"

namespace oed::seg {

/// Pools `features` [1, C, H, W] inside each box (image coordinates) onto an
/// out_size x out_size grid by averaging sampling_ratio^2 bilinear samples per bin.
/// Pixel-center aligned: box coordinates are scaled, then shifted by half a cell.
/// Output is [R, C, out_size, out_size]. Throws InvalidArgument for a zero-area box.
nn::Var roi_align(nn::Graph& g, nn::Var features, std::span<const Box> boxes, int out_size, double spatial_scale,
                  int sampling_ratio = 2);

}  // namespace oed::seg
