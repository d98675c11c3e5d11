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
#include "mmcs/rng.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mmcs {

// ---------------------------------------------------------------------------
// Raster files (PNG via libpng)

/// Decoded raster: interleaved samples, 1 to 4 channels, 8 or 16 bits.
struct RasterImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;

  std::uint16_t at(int r, int c, int ch) const {
    return samples[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
};

RasterImage read_raster(const std::filesystem::path& path);
void write_raster(const std::filesystem::path& path, const RasterImage& image);

/// Samples scaled to [0, 1] by the bit depth's full range, one plane per channel.
ImageTensor raster_to_tensor(const RasterImage& raster);
/// Quantizes [0, 1] planes to 16-bit grayscale (1 channel) or 8-bit RGB (3).
RasterImage tensor_to_raster(const ImageTensor& image, int bit_depth);

// ---------------------------------------------------------------------------
// Manifest

enum class Split { Labeled, Unlabeled, Eval };

const char* split_name(Split s);

struct ManifestRecord {
  Split split = Split::Labeled;
  std::string image_path;
  std::optional<std::string> mask_path;
  /// Comment and blank lines that preceded this record in the file.
  std::vector<std::string> leading_lines;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> trailing_lines;
  /// Directory that relative paths resolve against.
  std::filesystem::path base_dir;

  std::vector<const ManifestRecord*> of(Split s) const;
  std::filesystem::path resolve(const std::string& p) const;
};

/// Tab-separated `split<TAB>image[<TAB>mask]`; lines starting with '#' are comments.
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& manifest);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// ---------------------------------------------------------------------------
// Channel assembly and masks

/// 1 channel -> (plane, zeros); 3 channels -> (green, blue); 2 channels pass
/// through. Anything else is rejected.
ImageTensor assemble_two_channel(const ImageTensor& raw);

/// Reads a 16-bit (or 8-bit) single-channel label file and canonicalizes it.
InstanceMask load_mask(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const InstanceMask& mask);

/// Reads an image file and assembles the two-channel representation.
ImageTensor load_image(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthSpec {
  int image_size = 64;
  int count_min = 2;
  int count_max = 6;
  double radius_min = 6.0;
  double radius_max = 15.0;
  double eccentricity_min = 0.0;
  double eccentricity_max = 0.6;
  double nucleus_fraction = 0.5;
  double noise_sigma = 0.03;
  double background = 0.1;
  double cyto_min = 0.5;
  double cyto_max = 0.8;
  double nucleus_intensity = 0.9;
  /// Cells are placed as touching pairs of circles instead of isolated ellipses.
  bool touching_pairs = false;
  /// Minimum empty gap between isolated instances, pixels.
  int min_gap = 2;
  int max_attempts = 20000;

  void validate() const;
};

struct SynthSample {
  ImageTensor image;  // 2 channels
  InstanceMask mask;
};

/// Non-overlapping ellipses by rejection sampling; throws DataError when the
/// retry budget runs out.
std::vector<SynthSample> synth_blobs(const SynthSpec& spec, const RngStream& rng, int n_images);

}  // namespace mmcs
