// Copyright 2026 The MMCS Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "mmcs/core.hpp"
#include "mmcs/rng.hpp"

#include <vector>

namespace mmcs {

struct AugmentConfig {
  int tile = 112;
  bool rotate = true;
  double scale_jitter_lo = 0.75;
  double scale_jitter_hi = 1.25;
  double translate_fraction = 0.1;
  bool flip = true;

  /// `divisor` is the network's spatial divisibility requirement.
  void validate(int divisor = 1) const;
};

/// Per channel: clip((v - p1) / (p99 - p1), 0, 1); degenerate channels become zero.
ImageTensor percentile_normalize(const ImageTensor& image);

/// Linear-interpolated percentile (q in [0, 100]) of a plane.
double percentile(const Plane& plane, double q);

/// Similarity transform (rotation, isotropic scale, optional horizontal flip,
/// translation) from an input grid to an out_h x out_w tile. Coordinates are
/// pixel indices; the input center maps to the tile center plus translation.
struct AffineWarp {
  double angle = 0.0;
  double scale = 1.0;
  double shift_y = 0.0;
  double shift_x = 0.0;
  bool flip = false;
  int in_h = 0;
  int in_w = 0;
  int out_h = 0;
  int out_w = 0;

  /// Input coordinate sampled by output pixel (r, c).
  void source(double r, double c, double& y, double& x) const;
  /// Output coordinate of input point (y, x).
  void target(double y, double x, double& r, double& c) const;
  /// Direction change applied to vectors (rotation and flip, no scaling).
  void rotate_vector(double vy, double vx, double& oy, double& ox) const;
};

AffineWarp sample_warp(const AugmentConfig& cfg, RngStream& rng, int in_h, int in_w);

/// Bilinear, zero outside the input.
ImageTensor warp_image(const ImageTensor& image, const AffineWarp& warp);
/// Nearest-neighbour, background outside; re-canonicalized.
InstanceMask warp_mask(const InstanceMask& mask, const AffineWarp& warp);
/// Bilinear on all planes with flow vectors turned by the warp's rotation.
/// Outside the input the flows are zero and the logit is kPadLogit.
FlowMap warp_flow(const FlowMap& flow, const AffineWarp& warp);

inline constexpr float kPadLogit = -10.0f;

struct AugmentedPair {
  ImageTensor image;
  InstanceMask mask;
  AffineWarp warp;
};

/// One random warp applied to an already diameter-rescaled image and its mask.
AugmentedPair random_augment(const ImageTensor& image, const InstanceMask& mask, const AugmentConfig& cfg,
                             RngStream& rng);

/// Inference tiling: covering grid with optional overlap and tapered blending.
struct TileGrid {
  int height = 0;
  int width = 0;
  int tile = 0;
  std::vector<Pixel> origins;
};

struct TiledImage {
  std::vector<ImageTensor> tiles;
  TileGrid grid;
};

/// Images smaller than the tile are zero-padded into a single tile.
TiledImage tile_grid(const ImageTensor& image, int tile, double overlap_fraction);

/// Weighted average of tile predictions with a separable sin^2 taper.
FlowMap reassemble(const std::vector<FlowMap>& tiles, const TileGrid& grid);

}  // namespace mmcs
