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

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

namespace mmcs {

/// One image plane, row-major so that (row, col) indexing matches raster files.
template <typename Scalar>
using PlaneT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Plane = PlaneT<float>;
using LabelPlane = PlaneT<std::int32_t>;

/// H x W x C float image. Channel 0 is cytoplasm, channel 1 nucleus once assembled.
struct ImageTensor {
  std::vector<Plane> channels;

  ImageTensor() = default;
  ImageTensor(int height, int width, int n_channels, float fill = 0.0f);
  explicit ImageTensor(std::vector<Plane> planes);

  int height() const { return channels.empty() ? 0 : static_cast<int>(channels[0].rows()); }
  int width() const { return channels.empty() ? 0 : static_cast<int>(channels[0].cols()); }
  int num_channels() const { return static_cast<int>(channels.size()); }

  Plane& operator[](int c) { return channels[static_cast<std::size_t>(c)]; }
  const Plane& operator[](int c) const { return channels[static_cast<std::size_t>(c)]; }

  bool all_finite() const;
  bool operator==(const ImageTensor& other) const;
};

/// Integer instance labels; 0 is background.
struct InstanceMask {
  LabelPlane labels;

  InstanceMask() = default;
  InstanceMask(int height, int width) : labels(LabelPlane::Zero(height, width)) {}
  explicit InstanceMask(LabelPlane l) : labels(std::move(l)) {}

  int height() const { return static_cast<int>(labels.rows()); }
  int width() const { return static_cast<int>(labels.cols()); }
  std::int32_t max_label() const { return labels.size() == 0 ? 0 : labels.maxCoeff(); }
  /// Number of distinct positive labels.
  int num_instances() const;
  /// Sorted distinct positive labels.
  std::vector<std::int32_t> label_set() const;
  /// Pixel count per label, indexed by label (entry 0 is background).
  std::vector<std::int64_t> areas() const;

  bool operator==(const InstanceMask& other) const {
    return labels.rows() == other.labels.rows() && labels.cols() == other.labels.cols() &&
           (labels == other.labels).all();
  }
};

/// Three planes: flow_y, flow_x, cell_logit. Targets hold unit flows and {0,1}
/// occupancy in the last plane; network outputs hold raw values.
struct FlowMap {
  static constexpr int kFlowY = 0;
  static constexpr int kFlowX = 1;
  static constexpr int kCell = 2;

  std::array<Plane, 3> planes;

  FlowMap() = default;
  FlowMap(int height, int width);

  int height() const { return static_cast<int>(planes[0].rows()); }
  int width() const { return static_cast<int>(planes[0].cols()); }

  Plane& flow_y() { return planes[kFlowY]; }
  Plane& flow_x() { return planes[kFlowX]; }
  Plane& cell_logit() { return planes[kCell]; }
  const Plane& flow_y() const { return planes[kFlowY]; }
  const Plane& flow_x() const { return planes[kFlowX]; }
  const Plane& cell_logit() const { return planes[kCell]; }

  bool all_finite() const;
  bool operator==(const FlowMap& other) const;
};

struct Pixel {
  int row = 0;
  int col = 0;
  auto operator<=>(const Pixel&) const = default;
};

/// Relabels positive labels to 1..N in ascending order of their original value.
InstanceMask canonicalize_mask(const InstanceMask& mask);

/// Raster-ordered pixel set of one instance; throws UnknownLabelError if absent.
std::vector<Pixel> instance_pixels(const InstanceMask& mask, std::int32_t label);

/// Pixel-center convention: output pixel r samples input coordinate (r + 0.5) * H / new_h - 0.5.
ImageTensor resize_bilinear(const ImageTensor& image, int new_h, int new_w);
Plane resize_bilinear(const Plane& plane, int new_h, int new_w);
InstanceMask resize_nearest(const InstanceMask& mask, int new_h, int new_w);

/// Output extent for a scale factor: max(1, round(n * scale)).
int scaled_extent(int n, double scale);

/// Bilinear sample at continuous index coordinates; outside the plane returns `outside`.
float sample_bilinear(const Plane& plane, double y, double x, float outside);
/// Bilinear sample with coordinates clamped to the plane.
float sample_bilinear_clamped(const Plane& plane, double y, double x);

}  // namespace mmcs
