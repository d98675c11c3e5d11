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

#include "mmcs/diameter.hpp"

#include "mmcs/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace mmcs {

double instance_diameter(double area) {
  if (!(area > 0.0)) throw RangeError("instance area must be positive, got " + std::to_string(area));
  return 2.0 * std::sqrt(area / std::numbers::pi);
}

double DiameterStats::median() const {
  if (per_instance.empty()) return 0.0;
  std::vector<double> v = per_instance;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

DiameterStats dataset_mean_diameter(const std::vector<const InstanceMask*>& masks) {
  DiameterStats stats;
  for (const auto* m : masks) {
    const auto areas = m->areas();
    for (std::size_t label = 1; label < areas.size(); ++label)
      if (areas[label] > 0) stats.per_instance.push_back(instance_diameter(static_cast<double>(areas[label])));
  }
  if (stats.per_instance.empty()) throw DataError("no labeled instances to measure diameters from");
  // Sorted summation makes the mean independent of mask and instance order.
  std::vector<double> sorted = stats.per_instance;
  std::sort(sorted.begin(), sorted.end());
  stats.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  return stats;
}

DiameterStats dataset_mean_diameter(const std::vector<InstanceMask>& masks) {
  std::vector<const InstanceMask*> ptrs;
  for (const auto& m : masks) ptrs.push_back(&m);
  return dataset_mean_diameter(ptrs);
}

double checked_scale(double numerator, double denominator) {
  if (!(numerator > 0.0) || !(denominator > 0.0)) throw RangeError("diameters must be positive");
  const double scale = numerator / denominator;
  if (scale < kMinScale || scale > kMaxScale)
    throw RangeError("rescale factor " + std::to_string(scale) + " outside [1/16, 16]");
  return scale;
}

RescaledPair train_rescale(const ImageTensor& image, const InstanceMask& mask, const DiameterStats& stats,
                           double target_diameter) {
  if (stats.per_instance.empty()) throw DataError("diameter statistics are absent");
  const double scale = checked_scale(target_diameter, stats.mean);
  const int h = scaled_extent(image.height(), scale);
  const int w = scaled_extent(image.width(), scale);
  return {resize_bilinear(image, h, w), canonicalize_mask(resize_nearest(mask, h, w)), scale};
}

RescaledImage inference_rescale(const ImageTensor& image, double user_diameter, double model_diameter) {
  const double scale = checked_scale(model_diameter, user_diameter);
  return {resize_bilinear(image, scaled_extent(image.height(), scale), scaled_extent(image.width(), scale)), scale};
}

}  // namespace mmcs
