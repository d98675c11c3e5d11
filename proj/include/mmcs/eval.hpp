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

#include <cstdint>
#include <utility>
#include <vector>

namespace mmcs {

struct MatchedPair {
  std::int32_t pred_label = 0;
  std::int32_t gt_label = 0;
  double iou = 0.0;
};

struct MatchResult {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double f1 = 0.0;
  std::vector<MatchedPair> matched_pairs;
};

/// 2tp / (2tp + fp + fn); an empty denominator counts as perfect agreement.
double f1_score(long tp, long fp, long fn);

double pair_iou(const InstanceMask& a, std::int32_t label_a, const InstanceMask& b, std::int32_t label_b);

/// Matches are pairs with IoU strictly above `threshold` (>= 0.5, so each
/// instance takes part in at most one match).
MatchResult f1_at_iou(const InstanceMask& pred, const InstanceMask& gt, double threshold = 0.5);

/// Counts pooled over all pairs.
MatchResult dataset_f1(const std::vector<std::pair<const InstanceMask*, const InstanceMask*>>& pairs,
                       double threshold = 0.5);

/// Maximum-cardinality matching by exhaustive search; small inputs only.
MatchResult oracle_f1(const InstanceMask& pred, const InstanceMask& gt, double threshold = 0.5);

}  // namespace mmcs
