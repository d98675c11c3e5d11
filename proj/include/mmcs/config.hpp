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

#include "mmcs/augment.hpp"
#include "mmcs/flows.hpp"
#include "mmcs/ingest.hpp"
#include "mmcs/model.hpp"
#include "mmcs/semi.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace mmcs {

struct SplitCounts {
  int n = 90;
  int labeled = 40;
  int unlabeled = 40;
  int eval = 10;
};

/// Every tunable of every command. Files and flags address fields as
/// `section.key`; flags spell the key with dashes.
struct RunConfig {
  std::uint64_t seed = 0;
  SplitCounts split;
  SynthSpec synth;
  NetArch net;
  SgdConfig sgd;
  SemiConfig semi;
  AugmentConfig augment;
  FlowParams flows;
  /// Training rescale target (cells are resized to this diameter).
  double target_diameter = 30.0;
  /// Inference: the user's estimate of the cell diameter in the input images.
  double diameter = 30.0;
  double tile_overlap = 0.1;
  /// false zero-fills channel 1 at training and inference.
  bool nucleus_channel = true;

  /// Cross-field checks (tile divisibility etc.).
  void validate() const;
};

struct ConfigField {
  std::string section;
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;

  std::string flag() const;  // "--key-with-dashes"
};

const std::vector<ConfigField>& config_fields();
const ConfigField* find_field(const std::string& section, const std::string& key);

/// Applies `[section]` / `key = value` entries; unknown keys and bad values
/// raise UsageError naming the offending entry.
void apply_config_text(RunConfig& cfg, const std::string& text);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Resolved config restricted to `sections`, in field-table order.
std::string format_config(const RunConfig& cfg, const std::vector<std::string>& sections);

}  // namespace mmcs
