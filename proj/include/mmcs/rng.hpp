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

#include <cstdint>

namespace mmcs {

/// Purpose tags for deriving independent sub-streams from a run seed.
enum class StreamTag : std::uint64_t {
  Synth = 0x73796e7468ULL,
  Init = 0x696e6974ULL,
  Augment = 0x6175676dULL,
  Batching = 0x6261746368ULL,
};

/// Counter-based generator: draw i is a pure function of (key, i), so the
/// sequence is identical on every platform and independent of call order
/// across sub-streams.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

  std::uint64_t seed_key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller (no cached second value, so draws stay stateless).
  double normal();

  /// Independent stream for a purpose and an index (epoch, sample, ...).
  RngStream substream(StreamTag tag, std::uint64_t index = 0) const;
  RngStream substream(StreamTag tag, std::uint64_t a, std::uint64_t b) const {
    return substream(tag, a).substream(tag, b);
  }

  static std::uint64_t mix(std::uint64_t z);

 private:
  struct FromKey {};
  RngStream(FromKey, std::uint64_t key) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace mmcs
