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

#include "mmcs/core.hpp"

#include "mmcs/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace mmcs {

ImageTensor::ImageTensor(int height, int width, int n_channels, float fill) {
  channels.assign(static_cast<std::size_t>(n_channels), Plane::Constant(height, width, fill));
}

ImageTensor::ImageTensor(std::vector<Plane> planes) : channels(std::move(planes)) {
  for (const auto& p : channels) {
    if (p.rows() != channels.front().rows() || p.cols() != channels.front().cols())
      throw ShapeError("image channels differ in size");
  }
}

bool ImageTensor::all_finite() const {
  return std::all_of(channels.begin(), channels.end(), [](const Plane& p) { return p.isFinite().all(); });
}

bool ImageTensor::operator==(const ImageTensor& other) const {
  if (channels.size() != other.channels.size()) return false;
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto& a = channels[c];
    const auto& b = other.channels[c];
    if (a.rows() != b.rows() || a.cols() != b.cols() || !(a == b).all()) return false;
  }
  return true;
}

int InstanceMask::num_instances() const { return static_cast<int>(label_set().size()); }

std::vector<std::int32_t> InstanceMask::label_set() const {
  std::vector<std::int32_t> out;
  if (labels.size() == 0) return out;
  std::vector<bool> seen(static_cast<std::size_t>(max_label()) + 1, false);
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const auto v = labels.data()[i];
    if (v > 0) seen[static_cast<std::size_t>(v)] = true;
  }
  for (std::size_t v = 1; v < seen.size(); ++v)
    if (seen[v]) out.push_back(static_cast<std::int32_t>(v));
  return out;
}

std::vector<std::int64_t> InstanceMask::areas() const {
  std::vector<std::int64_t> out(static_cast<std::size_t>(std::max(0, max_label())) + 1, 0);
  for (Eigen::Index i = 0; i < labels.size(); ++i) ++out[static_cast<std::size_t>(labels.data()[i])];
  return out;
}

FlowMap::FlowMap(int height, int width) {
  for (auto& p : planes) p = Plane::Zero(height, width);
}

bool FlowMap::all_finite() const {
  return std::all_of(planes.begin(), planes.end(), [](const Plane& p) { return p.isFinite().all(); });
}

bool FlowMap::operator==(const FlowMap& other) const {
  for (std::size_t c = 0; c < planes.size(); ++c) {
    const auto& a = planes[c];
    const auto& b = other.planes[c];
    if (a.rows() != b.rows() || a.cols() != b.cols() || !(a == b).all()) return false;
  }
  return true;
}

InstanceMask canonicalize_mask(const InstanceMask& mask) {
  if (mask.labels.size() > 0 && mask.labels.minCoeff() < 0)
    throw DataError("instance mask contains negative labels");
  const auto present = mask.label_set();
  std::vector<std::int32_t> remap(static_cast<std::size_t>(std::max(0, mask.max_label())) + 1, 0);
  std::int32_t next = 1;
  for (auto v : present) remap[static_cast<std::size_t>(v)] = next++;
  InstanceMask out(mask.height(), mask.width());
  for (Eigen::Index i = 0; i < mask.labels.size(); ++i)
    out.labels.data()[i] = remap[static_cast<std::size_t>(mask.labels.data()[i])];
  return out;
}

std::vector<Pixel> instance_pixels(const InstanceMask& mask, std::int32_t label) {
  std::vector<Pixel> out;
  if (label > 0) {
    for (int r = 0; r < mask.height(); ++r)
      for (int c = 0; c < mask.width(); ++c)
        if (mask.labels(r, c) == label) out.push_back({r, c});
  }
  if (out.empty()) throw UnknownLabelError("label " + std::to_string(label) + " not present in mask");
  return out;
}

int scaled_extent(int n, double scale) {
  return std::max(1, static_cast<int>(std::lround(static_cast<double>(n) * scale)));
}

namespace {

void check_dims(int new_h, int new_w) {
  if (new_h < 1 || new_w < 1)
    throw ShapeError("resize target must be at least 1x1, got " + std::to_string(new_h) + "x" +
                     std::to_string(new_w));
}

// Source coordinate of output index i under the pixel-center convention.
inline double source_coord(int i, int n_in, int n_out) {
  return (static_cast<double>(i) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
}

}  // namespace

float sample_bilinear_clamped(const Plane& plane, double y, double x) {
  const int h = static_cast<int>(plane.rows());
  const int w = static_cast<int>(plane.cols());
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  const double top = (1.0 - fx) * plane(y0, x0) + fx * plane(y0, x1);
  const double bottom = (1.0 - fx) * plane(y1, x0) + fx * plane(y1, x1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

float sample_bilinear(const Plane& plane, double y, double x, float outside) {
  const int h = static_cast<int>(plane.rows());
  const int w = static_cast<int>(plane.cols());
  const double fy0 = std::floor(y);
  const double fx0 = std::floor(x);
  if (fy0 < -1.0 || fx0 < -1.0 || fy0 > h || fx0 > w) return outside;
  const int y0 = static_cast<int>(fy0);
  const int x0 = static_cast<int>(fx0);
  const double fy = y - fy0;
  const double fx = x - fx0;
  auto at = [&](int r, int c) -> double {
    return (r < 0 || c < 0 || r >= h || c >= w) ? outside : plane(r, c);
  };
  const double top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1);
  const double bottom = (1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

Plane resize_bilinear(const Plane& plane, int new_h, int new_w) {
  check_dims(new_h, new_w);
  const int h = static_cast<int>(plane.rows());
  const int w = static_cast<int>(plane.cols());
  if (h == new_h && w == new_w) return plane;
  Plane out(new_h, new_w);
  for (int r = 0; r < new_h; ++r) {
    const double y = source_coord(r, h, new_h);
    for (int c = 0; c < new_w; ++c) out(r, c) = sample_bilinear_clamped(plane, y, source_coord(c, w, new_w));
  }
  return out;
}

ImageTensor resize_bilinear(const ImageTensor& image, int new_h, int new_w) {
  check_dims(new_h, new_w);
  ImageTensor out;
  out.channels.reserve(image.channels.size());
  for (const auto& p : image.channels) out.channels.push_back(resize_bilinear(p, new_h, new_w));
  return out;
}

InstanceMask resize_nearest(const InstanceMask& mask, int new_h, int new_w) {
  check_dims(new_h, new_w);
  const int h = mask.height();
  const int w = mask.width();
  InstanceMask out(new_h, new_w);
  for (int r = 0; r < new_h; ++r) {
    const int sr = std::min(h - 1, static_cast<int>(std::floor((r + 0.5) * h / static_cast<double>(new_h))));
    for (int c = 0; c < new_w; ++c) {
      const int sc = std::min(w - 1, static_cast<int>(std::floor((c + 0.5) * w / static_cast<double>(new_w))));
      out.labels(r, c) = mask.labels(sr, sc);
    }
  }
  return out;
}

}  // namespace mmcs
