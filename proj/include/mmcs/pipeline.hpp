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

#include "mmcs/config.hpp"
#include "mmcs/eval.hpp"
#include "mmcs/ingest.hpp"
#include "mmcs/model.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mmcs {

/// Images (two-channel, un-normalized) and masks of one manifest split.
struct SplitData {
  std::vector<std::string> names;  // image file stems
  std::vector<ImageTensor> images;
  std::vector<InstanceMask> masks;  // empty for unlabeled records
};

SplitData load_split(const DatasetManifest& manifest, Split split);

/// Channel policy, normalization, diameter rescale, tiled forward pass,
/// flow tracking, and the resize back to the input's dims.
InstanceMask segment_image(const SegNet<float>& net, const ImageTensor& image, double model_diameter,
                           const RunConfig& cfg);

/// 8-bit RGB: channel 0 as gray with 1-px instance outlines in a rotating palette.
RasterImage render_overlay(const ImageTensor& image, const InstanceMask& mask);

void cmd_synth(const RunConfig& cfg, const std::filesystem::path& out);
void cmd_pretrain(const RunConfig& cfg, const std::filesystem::path& manifest, const std::filesystem::path& out);
void cmd_semitrain(RunConfig cfg, const std::filesystem::path& manifest, const std::filesystem::path& init_checkpoint,
                   const std::filesystem::path& out);
void cmd_infer(RunConfig cfg, const std::filesystem::path& checkpoint, const std::vector<std::filesystem::path>& images,
               const std::filesystem::path& out);
MatchResult cmd_eval(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_manifest,
                     const std::filesystem::path& out);

/// Full command-line entry point; returns the process exit code
/// (0 ok, 2 usage, 3 data, 4 numeric).
int run_cli(int argc, const char* const* argv);

}  // namespace mmcs
