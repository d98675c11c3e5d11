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

#include <filesystem>
#include <vector>

namespace mmcs {

struct FlowParams {
  int n_follow_steps = 200;
  double step_size = 1.0;
  /// Applied to the raw logit plane; 0 corresponds to probability 0.5.
  double cell_threshold = 0.0;
  int min_size = 15;
  int sink_bin = 1;
  double sink_merge_radius = 2.0;

  void validate() const;
};

/// Continuous position in index coordinates (pixel (r, c) starts at (r, c)).
struct Position {
  double y = 0.0;
  double x = 0.0;
};

/// Simulated-diffusion flow targets: unit vectors pointing up the gradient of
/// log(1 + heat) from a source at each instance's center; occupancy in the
/// cell plane.
FlowMap mask_to_flow(const InstanceMask& mask);

/// Foreground pixels (cell_logit > threshold) in raster order together with
/// their positions after Euler integration along the bilinearly sampled flow.
struct FlowTrace {
  std::vector<Pixel> sources;
  std::vector<Position> finals;
};

FlowTrace follow_flows(const FlowMap& flow, const FlowParams& params);

/// Groups trajectories by the sink they end in; sources of unassigned pixels
/// stay background.
InstanceMask cluster_sinks(const FlowTrace& trace, int height, int width, const FlowParams& params);

/// follow_flows -> cluster_sinks -> drop instances below min_size -> canonicalize.
InstanceMask flow_to_mask(const FlowMap& flow, const FlowParams& params);

/// Network output to flow_to_mask input: flows divided by the regression
/// target scale and zeroed outside the thresholded foreground.
FlowMap decode_prediction(const FlowMap& raw, const FlowParams& params);

/// Removes instances with fewer than `min_size` pixels and canonicalizes.
InstanceMask remove_small(const InstanceMask& mask, int min_size);

// Debug container: "MMCSFLOW", u32 height, u32 width, then flow_y, flow_x,
// cell_logit planes as row-major little-endian float32.
void write_flow_file(const std::filesystem::path& path, const FlowMap& flow);
FlowMap read_flow_file(const std::filesystem::path& path);

}  // namespace mmcs
