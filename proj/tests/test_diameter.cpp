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

#include "doctest.h"
#include "mmcs/diameter.hpp"
#include "mmcs/error.hpp"
#include "mmcs/ingest.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <random>

using namespace mmcs;
using mmcs::testing::paint_disk;

TEST_CASE("instance_diameter examples") {
  CHECK(instance_diameter(1) == doctest::Approx(1.1283791671).epsilon(1e-9));
  CHECK(instance_diameter(25) == doctest::Approx(5.6418958354).epsilon(1e-9));
  CHECK_THROWS_AS(instance_diameter(0), RangeError);
  CHECK_THROWS_AS(instance_diameter(-3), RangeError);
  double prev = 0.0;
  for (int a = 1; a < 500; ++a) {
    const double d = instance_diameter(a);
    CHECK(d > prev);
    prev = d;
  }
}

namespace {

InstanceMask blocks(const std::vector<int>& areas) {
  // Row of 1-pixel-high bars, one per area, separated by a background column.
  int width = 0;
  for (int a : areas) width += a + 1;
  InstanceMask m(1, width);
  int c = 0;
  for (std::size_t i = 0; i < areas.size(); ++i) {
    for (int k = 0; k < areas[i]; ++k) m.labels(0, c++) = static_cast<std::int32_t>(i + 1);
    ++c;
  }
  return m;
}

}  // namespace

TEST_CASE("dataset_mean_diameter pools instances") {
  CHECK(dataset_mean_diameter(std::vector<InstanceMask>{blocks({25, 25})}).mean ==
        doctest::Approx(5.6418958354).epsilon(1e-9));
  const auto s = dataset_mean_diameter(std::vector<InstanceMask>{blocks({1}), blocks({25})});
  CHECK(s.mean == doctest::Approx(3.3851374).epsilon(1e-6));
  CHECK(s.per_instance.size() == 2);
  CHECK_THROWS_AS(dataset_mean_diameter(std::vector<InstanceMask>{InstanceMask(4, 4)}), DataError);
  CHECK_THROWS_AS(dataset_mean_diameter(std::vector<InstanceMask>{}), DataError);
}

TEST_CASE("dataset_mean_diameter is permutation invariant") {
  std::mt19937 gen(4);
  std::vector<int> areas;
  for (int i = 0; i < 40; ++i) areas.push_back(1 + static_cast<int>(gen() % 300));
  std::vector<InstanceMask> masks;
  for (int i = 0; i < 40; i += 4) masks.push_back(blocks({areas.begin() + i, areas.begin() + i + 4}));
  const double ref = dataset_mean_diameter(masks).mean;
  for (int t = 0; t < 5; ++t) {
    std::shuffle(areas.begin(), areas.end(), gen);
    std::vector<InstanceMask> shuffled;
    for (int i = 0; i < 40; i += 5) shuffled.push_back(blocks({areas.begin() + i, areas.begin() + i + 5}));
    CHECK(dataset_mean_diameter(shuffled).mean == ref);
  }
}

TEST_CASE("train_rescale scale arithmetic and guards") {
  InstanceMask m(20, 20);
  paint_disk(m, 10, 10, 4, 1);
  ImageTensor img(20, 20, 2, 0.3f);
  DiameterStats stats;
  stats.per_instance = {20.0};
  stats.mean = 20.0;
  const auto same = train_rescale(img, m, stats, 20.0);
  CHECK(same.scale == 1.0);
  CHECK(same.image == img);
  CHECK(same.mask == m);

  const auto doubled = train_rescale(img, m, stats, 40.0);
  CHECK(doubled.scale == 2.0);
  CHECK(doubled.image.height() == 40);
  CHECK(doubled.mask.width() == 40);

  stats.mean = 40.0;
  stats.per_instance = {40.0};
  CHECK_THROWS_AS(train_rescale(img, m, stats, 1.0), RangeError);
  CHECK_THROWS_AS(train_rescale(img, m, DiameterStats{}, 30.0), DataError);
}

TEST_CASE("inference_rescale examples") {
  const ImageTensor img(40, 40, 2);
  CHECK(inference_rescale(img, 30.0, 30.0).scale == 1.0);
  const auto r = inference_rescale(img, 40.0, 30.0);
  CHECK(r.scale == 0.75);
  CHECK(r.image.height() == 30);
  CHECK_THROWS_AS(inference_rescale(img, 0.0, 30.0), RangeError);
}

TEST_CASE("train_rescale brings pooled diameter near the target") {
  SynthSpec spec;
  spec.noise_sigma = 0.0;
  const auto samples = synth_blobs(spec, RngStream(21), 20);
  std::vector<InstanceMask> masks;
  for (const auto& s : samples) masks.push_back(s.mask);
  const DiameterStats stats = dataset_mean_diameter(masks);
  for (double target : {12.0, 30.0, 45.0}) {
    std::vector<InstanceMask> resized;
    for (const auto& s : samples) resized.push_back(train_rescale(s.image, s.mask, stats, target).mask);
    const DiameterStats after = dataset_mean_diameter(resized);
    CHECK(std::abs(after.mean - target) / target < 0.05);
  }
}
