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

#include "mmcs/augment.hpp"

#include "mmcs/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace mmcs {

void AugmentConfig::validate(int divisor) const {
  if (tile < 32) throw UsageError("tile must be >= 32");
  if (divisor > 1 && tile % divisor != 0)
    throw UsageError("tile " + std::to_string(tile) + " must be divisible by " + std::to_string(divisor));
  if (!(scale_jitter_lo > 0.0) || scale_jitter_lo > scale_jitter_hi) throw UsageError("scale jitter range invalid");
  if (translate_fraction < 0.0 || translate_fraction > 0.5) throw UsageError("translate_fraction must be in [0, 0.5]");
}

double percentile(const Plane& plane, double q) {
  std::vector<float> v(plane.data(), plane.data() + plane.size());
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return (1.0 - frac) * v[lo] + frac * v[hi];
}

ImageTensor percentile_normalize(const ImageTensor& image) {
  ImageTensor out = image;
  for (auto& p : out.channels) {
    const double p1 = percentile(p, 1.0);
    const double p99 = percentile(p, 99.0);
    if (!(p99 > p1)) {
      p.setZero();
      continue;
    }
    const double inv = 1.0 / (p99 - p1);
    for (Eigen::Index i = 0; i < p.size(); ++i)
      p.data()[i] = static_cast<float>(std::clamp((p.data()[i] - p1) * inv, 0.0, 1.0));
  }
  return out;
}

void AffineWarp::source(double r, double c, double& y, double& x) const {
  // Undo translation and scale, rotate back, then undo the flip.
  const double oy = (r - (out_h - 1) / 2.0 - shift_y) / scale;
  const double ox = (c - (out_w - 1) / 2.0 - shift_x) / scale;
  const double cs = std::cos(angle);
  const double sn = std::sin(angle);
  double ry = -sn * ox + cs * oy;
  double rx = cs * ox + sn * oy;
  if (flip) rx = -rx;
  y = ry + (in_h - 1) / 2.0;
  x = rx + (in_w - 1) / 2.0;
}

void AffineWarp::target(double y, double x, double& r, double& c) const {
  double vy = y - (in_h - 1) / 2.0;
  double vx = x - (in_w - 1) / 2.0;
  double oy = 0.0, ox = 0.0;
  rotate_vector(vy, vx, oy, ox);
  r = scale * oy + (out_h - 1) / 2.0 + shift_y;
  c = scale * ox + (out_w - 1) / 2.0 + shift_x;
}

void AffineWarp::rotate_vector(double vy, double vx, double& oy, double& ox) const {
  if (flip) vx = -vx;
  const double cs = std::cos(angle);
  const double sn = std::sin(angle);
  ox = cs * vx - sn * vy;
  oy = sn * vx + cs * vy;
}

AffineWarp sample_warp(const AugmentConfig& cfg, RngStream& rng, int in_h, int in_w) {
  AffineWarp w;
  w.in_h = in_h;
  w.in_w = in_w;
  w.out_h = cfg.tile;
  w.out_w = cfg.tile;
  // Fixed draw order keeps streams aligned whatever the switches are.
  const double u_angle = rng.uniform();
  const double u_scale = rng.uniform();
  const double u_ty = rng.uniform();
  const double u_tx = rng.uniform();
  const double u_flip = rng.uniform();
  w.angle = cfg.rotate ? 2.0 * std::numbers::pi * u_angle : 0.0;
  w.scale = cfg.scale_jitter_lo + (cfg.scale_jitter_hi - cfg.scale_jitter_lo) * u_scale;
  // Images larger than the tile are panned over their full extent; on top of
  // that a jitter of translate_fraction * tile.
  const double pan_y = std::max(0.0, (w.scale * in_h - cfg.tile) / 2.0);
  const double pan_x = std::max(0.0, (w.scale * in_w - cfg.tile) / 2.0);
  const double jitter = cfg.translate_fraction * cfg.tile;
  w.shift_y = (2.0 * u_ty - 1.0) * (pan_y + jitter);
  w.shift_x = (2.0 * u_tx - 1.0) * (pan_x + jitter);
  w.flip = cfg.flip && u_flip < 0.5;
  return w;
}

ImageTensor warp_image(const ImageTensor& image, const AffineWarp& warp) {
  ImageTensor out(warp.out_h, warp.out_w, image.num_channels());
  for (int r = 0; r < warp.out_h; ++r)
    for (int c = 0; c < warp.out_w; ++c) {
      double y = 0.0, x = 0.0;
      warp.source(r, c, y, x);
      for (int ch = 0; ch < image.num_channels(); ++ch) out[ch](r, c) = sample_bilinear(image[ch], y, x, 0.0f);
    }
  return out;
}

InstanceMask warp_mask(const InstanceMask& mask, const AffineWarp& warp) {
  InstanceMask out(warp.out_h, warp.out_w);
  for (int r = 0; r < warp.out_h; ++r)
    for (int c = 0; c < warp.out_w; ++c) {
      double y = 0.0, x = 0.0;
      warp.source(r, c, y, x);
      const auto sy = static_cast<long>(std::floor(y + 0.5));
      const auto sx = static_cast<long>(std::floor(x + 0.5));
      if (sy >= 0 && sx >= 0 && sy < mask.height() && sx < mask.width()) out.labels(r, c) = mask.labels(sy, sx);
    }
  return canonicalize_mask(out);
}

FlowMap warp_flow(const FlowMap& flow, const AffineWarp& warp) {
  FlowMap out(warp.out_h, warp.out_w);
  for (int r = 0; r < warp.out_h; ++r)
    for (int c = 0; c < warp.out_w; ++c) {
      double y = 0.0, x = 0.0;
      warp.source(r, c, y, x);
      const double vy = sample_bilinear(flow.flow_y(), y, x, 0.0f);
      const double vx = sample_bilinear(flow.flow_x(), y, x, 0.0f);
      double oy = 0.0, ox = 0.0;
      warp.rotate_vector(vy, vx, oy, ox);
      out.flow_y()(r, c) = static_cast<float>(oy);
      out.flow_x()(r, c) = static_cast<float>(ox);
      out.cell_logit()(r, c) = sample_bilinear(flow.cell_logit(), y, x, kPadLogit);
    }
  return out;
}

AugmentedPair random_augment(const ImageTensor& image, const InstanceMask& mask, const AugmentConfig& cfg,
                             RngStream& rng) {
  if (image.height() != mask.height() || image.width() != mask.width())
    throw ShapeError("image and mask dims differ");
  const AffineWarp warp = sample_warp(cfg, rng, image.height(), image.width());
  return {warp_image(image, warp), warp_mask(mask, warp), warp};
}

namespace {

std::vector<int> tile_starts(int extent, int tile, double overlap) {
  if (extent <= tile) return {0};
  const double stride = tile * (1.0 - overlap);
  const int n = static_cast<int>(std::ceil((extent - tile) / stride)) + 1;
  std::vector<int> starts;
  for (int i = 0; i < n; ++i)
    starts.push_back(static_cast<int>(std::lround(static_cast<double>(i) * (extent - tile) / (n - 1))));
  return starts;
}

double taper(int i, int tile) {
  const double s = std::sin(std::numbers::pi * (i + 0.5) / tile);
  return s * s;
}

}  // namespace

TiledImage tile_grid(const ImageTensor& image, int tile, double overlap_fraction) {
  if (overlap_fraction < 0.0 || overlap_fraction > 0.5) throw UsageError("overlap must be in [0, 0.5]");
  if (tile < 1) throw UsageError("tile must be positive");
  TiledImage out;
  out.grid.height = image.height();
  out.grid.width = image.width();
  out.grid.tile = tile;
  for (int y0 : tile_starts(image.height(), tile, overlap_fraction))
    for (int x0 : tile_starts(image.width(), tile, overlap_fraction)) {
      out.grid.origins.push_back({y0, x0});
      ImageTensor t(tile, tile, image.num_channels());
      const int h = std::min(tile, image.height() - y0);
      const int w = std::min(tile, image.width() - x0);
      for (int ch = 0; ch < image.num_channels(); ++ch) t[ch].topLeftCorner(h, w) = image[ch].block(y0, x0, h, w);
      out.tiles.push_back(std::move(t));
    }
  return out;
}

FlowMap reassemble(const std::vector<FlowMap>& tiles, const TileGrid& grid) {
  if (tiles.size() != grid.origins.size()) throw ShapeError("tile count does not match grid");
  using Acc = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  std::array<Acc, 3> sum;
  for (auto& s : sum) s = Acc::Zero(grid.height, grid.width);
  Acc weight = Acc::Zero(grid.height, grid.width);
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const auto [y0, x0] = grid.origins[k];
    const int h = std::min(grid.tile, grid.height - y0);
    const int w = std::min(grid.tile, grid.width - x0);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const double wt = taper(r, grid.tile) * taper(c, grid.tile);
        weight(y0 + r, x0 + c) += wt;
        for (std::size_t p = 0; p < 3; ++p) sum[p](y0 + r, x0 + c) += wt * tiles[k].planes[p](r, c);
      }
  }
  FlowMap out(grid.height, grid.width);
  for (std::size_t p = 0; p < 3; ++p) out.planes[p] = (sum[p] / weight).cast<float>();
  return out;
}

}  // namespace mmcs
