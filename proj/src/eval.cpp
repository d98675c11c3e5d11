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

#include "mmcs/eval.hpp"

#include "mmcs/error.hpp"

#include <algorithm>
#include <functional>
#include <map>

namespace mmcs {

double f1_score(long tp, long fp, long fn) {
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

namespace {

void check_dims(const InstanceMask& a, const InstanceMask& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw ShapeError("mask dimensions differ");
}

std::vector<std::int32_t> labels_of(const InstanceMask& m) {
  const auto set = m.label_set();
  return {set.begin(), set.end()};
}

}  // namespace

double pair_iou(const InstanceMask& a, std::int32_t label_a, const InstanceMask& b, std::int32_t label_b) {
  check_dims(a, b);
  long inter = 0, area_a = 0, area_b = 0;
  for (Eigen::Index i = 0; i < a.labels.size(); ++i) {
    const bool in_a = a.labels.data()[i] == label_a;
    const bool in_b = b.labels.data()[i] == label_b;
    area_a += in_a;
    area_b += in_b;
    inter += in_a && in_b;
  }
  if (label_a <= 0 || area_a == 0) throw UnknownLabelError("label " + std::to_string(label_a) + " not in mask");
  if (label_b <= 0 || area_b == 0) throw UnknownLabelError("label " + std::to_string(label_b) + " not in mask");
  return static_cast<double>(inter) / static_cast<double>(area_a + area_b - inter);
}

MatchResult f1_at_iou(const InstanceMask& pred, const InstanceMask& gt, double threshold) {
  check_dims(pred, gt);
  if (threshold < 0.5) throw UsageError("IoU threshold must be >= 0.5");
  std::map<std::int32_t, long> area_p, area_g;
  std::map<std::pair<std::int32_t, std::int32_t>, long> inter;
  for (Eigen::Index i = 0; i < pred.labels.size(); ++i) {
    const auto p = pred.labels.data()[i];
    const auto g = gt.labels.data()[i];
    if (p > 0) ++area_p[p];
    if (g > 0) ++area_g[g];
    if (p > 0 && g > 0) ++inter[{p, g}];
  }
  MatchResult r;
  for (const auto& [key, n] : inter) {
    const double iou = static_cast<double>(n) / static_cast<double>(area_p[key.first] + area_g[key.second] - n);
    if (iou > threshold) r.matched_pairs.push_back({key.first, key.second, iou});
  }
  r.tp = static_cast<long>(r.matched_pairs.size());
  r.fp = static_cast<long>(area_p.size()) - r.tp;
  r.fn = static_cast<long>(area_g.size()) - r.tp;
  r.f1 = f1_score(r.tp, r.fp, r.fn);
  return r;
}

MatchResult dataset_f1(const std::vector<std::pair<const InstanceMask*, const InstanceMask*>>& pairs,
                       double threshold) {
  if (pairs.empty()) throw DataError("dataset_f1 needs at least one image");
  MatchResult total;
  for (const auto& [pred, gt] : pairs) {
    const MatchResult r = f1_at_iou(*pred, *gt, threshold);
    total.tp += r.tp;
    total.fp += r.fp;
    total.fn += r.fn;
  }
  total.f1 = f1_score(total.tp, total.fp, total.fn);
  return total;
}

MatchResult oracle_f1(const InstanceMask& pred, const InstanceMask& gt, double threshold) {
  check_dims(pred, gt);
  if (pred.height() > 64 || pred.width() > 64) throw UsageError("oracle_f1 is limited to 64x64 masks");
  const auto lp = labels_of(pred);
  const auto lg = labels_of(gt);
  if (lp.size() > 10 || lg.size() > 10) throw UsageError("oracle_f1 is limited to 10 instances per mask");

  std::vector<std::vector<double>> iou(lp.size(), std::vector<double>(lg.size()));
  for (std::size_t i = 0; i < lp.size(); ++i)
    for (std::size_t j = 0; j < lg.size(); ++j) iou[i][j] = pair_iou(pred, lp[i], gt, lg[j]);

  // Try every assignment of each pred to one unused gt or to nothing.
  std::vector<int> current(lp.size(), -1), best = current;
  long best_count = -1;
  std::function<void(std::size_t, unsigned, long)> search = [&](std::size_t i, unsigned used, long count) {
    if (i == lp.size()) {
      if (count > best_count) {
        best_count = count;
        best = current;
      }
      return;
    }
    current[i] = -1;
    search(i + 1, used, count);
    for (std::size_t j = 0; j < lg.size(); ++j) {
      if ((used >> j) & 1u || !(iou[i][j] > threshold)) continue;
      current[i] = static_cast<int>(j);
      search(i + 1, used | (1u << j), count + 1);
    }
    current[i] = -1;
  };
  search(0, 0u, 0);

  MatchResult r;
  for (std::size_t i = 0; i < lp.size(); ++i)
    if (best[i] >= 0) r.matched_pairs.push_back({lp[i], lg[static_cast<std::size_t>(best[i])], iou[i][best[i]]});
  r.tp = best_count;
  r.fp = static_cast<long>(lp.size()) - r.tp;
  r.fn = static_cast<long>(lg.size()) - r.tp;
  r.f1 = f1_score(r.tp, r.fp, r.fn);
  return r;
}

}  // namespace mmcs
