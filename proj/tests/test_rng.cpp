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
#include "mmcs/rng.hpp"

#include <cmath>
#include <set>

using namespace mmcs;

TEST_CASE("equal seeds give equal streams; different seeds differ") {
  RngStream a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
}

TEST_CASE("substreams are independent of parent consumption") {
  RngStream a(5);
  const RngStream s1 = a.substream(StreamTag::Augment, 3);
  a.next_u64();
  a.next_u64();
  RngStream s2 = a.substream(StreamTag::Augment, 3);
  RngStream s1c = s1;
  for (int i = 0; i < 10; ++i) CHECK(s1c.next_u64() == s2.next_u64());

  std::set<std::uint64_t> firsts;
  for (auto tag : {StreamTag::Synth, StreamTag::Init, StreamTag::Augment, StreamTag::Batching})
    for (std::uint64_t i = 0; i < 20; ++i) firsts.insert(RngStream(5).substream(tag, i).next_u64());
  CHECK(firsts.size() == 80);
}

TEST_CASE("uniform, uniform_int and normal ranges and moments") {
  RngStream r(9);
  double sum = 0.0, sum_sq = 0.0;
  const int n = 20000;
  std::set<std::int64_t> seen;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const auto k = r.uniform_int(-2, 3);
    CHECK(k >= -2);
    CHECK(k <= 3);
    seen.insert(k);
    const double z = r.normal();
    sum += z;
    sum_sq += z * z;
  }
  CHECK(seen.size() == 6);
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sum_sq / n - 1.0) < 0.05);
}
