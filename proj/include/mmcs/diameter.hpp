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

#include <vector>

namespace mmcs {

/// Equal-area circle diameter, 2 * sqrt(area / pi).
double instance_diameter(double area);

struct DiameterStats {
  std::vector<double> per_instance;
  double mean = 0.0;

  /// Median of the pooled diameters; reported only, never used for scaling.
  double median() const;
};

/// Pools every instance of every mask. Throws DataError when no instance exists.
DiameterStats dataset_mean_diameter(const std::vector<const InstanceMask*>& masks);
DiameterStats dataset_mean_diameter(const std::vector<InstanceMask>& masks);

/// Accepted scale range for both rescale operations.
inline constexpr double kMinScale = 1.0 / 16.0;
inline constexpr double kMaxScale = 16.0;

struct RescaledPair {
  ImageTensor image;
  InstanceMask mask;
  double scale = 1.0;
};

/// Resizes image (bilinear) and mask (nearest) by target_diameter / stats.mean.
RescaledPair train_rescale(const ImageTensor& image, const InstanceMask& mask, const DiameterStats& stats,
                           double target_diameter);

struct RescaledImage {
  ImageTensor image;
  double scale = 1.0;
};

/// Resizes by model_diameter / user_diameter; predictions are mapped back by
/// resizing to the original dims.
RescaledImage inference_rescale(const ImageTensor& image, double user_diameter, double model_diameter);

/// Scale factor with the same guards the rescale operations apply.
double checked_scale(double numerator, double denominator);

}  // namespace mmcs
