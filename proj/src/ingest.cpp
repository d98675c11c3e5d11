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

#include "mmcs/ingest.hpp"

#include "mmcs/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace mmcs {

const char* split_name(Split s) {
  switch (s) {
    case Split::Labeled: return "labeled";
    case Split::Unlabeled: return "unlabeled";
    case Split::Eval: return "eval";
  }
  return "?";
}

std::vector<const ManifestRecord*> DatasetManifest::of(Split s) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

std::filesystem::path DatasetManifest::resolve(const std::string& p) const {
  const std::filesystem::path path(p);
  return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::vector<std::string> pending;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = "manifest line " + std::to_string(line_no) + ": ";
    if (line.empty() || line[0] == '#') {
      pending.push_back(line);
      continue;
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2 || fields.size() > 3) throw ParseError(where + "expected 2 or 3 tab-separated fields");
    ManifestRecord rec;
    if (fields[0] == "labeled")
      rec.split = Split::Labeled;
    else if (fields[0] == "unlabeled")
      rec.split = Split::Unlabeled;
    else if (fields[0] == "eval")
      rec.split = Split::Eval;
    else
      throw ParseError(where + "unknown split '" + fields[0] + "'");
    rec.image_path = fields[1];
    if (rec.image_path.empty()) throw ParseError(where + "empty image path");
    if (fields.size() == 3) rec.mask_path = fields[2];
    if (rec.split != Split::Unlabeled && (!rec.mask_path || rec.mask_path->empty()))
      throw DataError(where + "missing mask for " + split_name(rec.split) + " record " + rec.image_path);
    if (rec.split == Split::Unlabeled && rec.mask_path) throw ParseError(where + "unlabeled records carry no mask");
    for (const auto* p : {&rec.image_path, rec.mask_path ? &*rec.mask_path : nullptr}) {
      if (p && !seen.insert(*p).second) throw ParseError(where + "duplicate path " + *p);
    }
    rec.leading_lines = std::move(pending);
    pending.clear();
    m.records.push_back(std::move(rec));
  }
  m.trailing_lines = std::move(pending);
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& r : manifest.records) {
    for (const auto& l : r.leading_lines) out += l + "\n";
    out += std::string(split_name(r.split)) + "\t" + r.image_path;
    if (r.mask_path) out += "\t" + *r.mask_path;
    out += "\n";
  }
  for (const auto& l : manifest.trailing_lines) out += l + "\n";
  return out;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << format_manifest(manifest);
}

ImageTensor assemble_two_channel(const ImageTensor& raw) {
  switch (raw.num_channels()) {
    case 1: return ImageTensor({raw[0], Plane::Zero(raw.height(), raw.width())});
    case 2: return raw;
    case 3: return ImageTensor({raw[1], raw[2]});  // green cytoplasm, blue nucleus
    default:
      throw DataError("unsupported channel count " + std::to_string(raw.num_channels()) + " (expected 1, 2 or 3)");
  }
}

ImageTensor load_image(const std::filesystem::path& path) { return assemble_two_channel(raster_to_tensor(read_raster(path))); }

InstanceMask load_mask(const std::filesystem::path& path) {
  const RasterImage r = read_raster(path);
  if (r.channels != 1) throw DataError("mask " + path.string() + " must be single-channel, has " + std::to_string(r.channels));
  InstanceMask m(r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) m.labels(y, x) = r.at(y, x, 0);
  return canonicalize_mask(m);
}

void save_mask(const std::filesystem::path& path, const InstanceMask& mask) {
  if (mask.max_label() > 65535) throw DataError("mask has more than 65535 instances");
  RasterImage r;
  r.height = mask.height();
  r.width = mask.width();
  r.channels = 1;
  r.bit_depth = 16;
  r.samples.resize(static_cast<std::size_t>(mask.labels.size()));
  for (Eigen::Index i = 0; i < mask.labels.size(); ++i) r.samples[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(mask.labels.data()[i]);
  write_raster(path, r);
}

// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
  if (image_size < 8) throw UsageError("image_size must be >= 8");
  if (count_min < 0 || count_min > count_max) throw UsageError("count range invalid");
  if (radius_min < 2.0 || radius_min > radius_max) throw UsageError("radius range invalid (radii >= 2 px)");
  if (eccentricity_min < 0.0 || eccentricity_min > eccentricity_max || eccentricity_max >= 1.0)
    throw UsageError("eccentricity range invalid");
  if (nucleus_fraction < 0.0 || nucleus_fraction > 1.0) throw UsageError("nucleus_fraction must be in [0, 1]");
  if (noise_sigma < 0.0) throw UsageError("noise_sigma must be >= 0");
  if (cyto_min > cyto_max || cyto_min <= background) throw UsageError("cytoplasm intensity must exceed background");
}

namespace {

struct Ellipse {
  double cy, cx, semi_major, semi_minor, angle;

  bool contains(double y, double x) const {
    const double dy = y - cy;
    const double dx = x - cx;
    const double u = dx * std::cos(angle) + dy * std::sin(angle);
    const double v = -dx * std::sin(angle) + dy * std::cos(angle);
    return (u * u) / (semi_major * semi_major) + (v * v) / (semi_minor * semi_minor) <= 1.0;
  }
};

using Occupancy = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<Pixel> rasterize(const Ellipse& e, int size) {
  std::vector<Pixel> px;
  const int r0 = std::max(0, static_cast<int>(std::floor(e.cy - e.semi_major)) - 1);
  const int r1 = std::min(size - 1, static_cast<int>(std::ceil(e.cy + e.semi_major)) + 1);
  const int c0 = std::max(0, static_cast<int>(std::floor(e.cx - e.semi_major)) - 1);
  const int c1 = std::min(size - 1, static_cast<int>(std::ceil(e.cx + e.semi_major)) + 1);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c)
      if (e.contains(r, c)) px.push_back({r, c});
  return px;
}

// True when no pixel of `px` lies within `gap` (Chebyshev) of an occupied pixel.
bool is_free(const Occupancy& occ, const std::vector<Pixel>& px, int gap) {
  const int n = static_cast<int>(occ.rows());
  for (const auto& p : px)
    for (int dr = -gap; dr <= gap; ++dr)
      for (int dc = -gap; dc <= gap; ++dc) {
        const int r = p.row + dr;
        const int c = p.col + dc;
        if (r >= 0 && c >= 0 && r < n && c < n && occ(r, c)) return false;
      }
  return true;
}

struct Cell {
  Ellipse shape;
  std::vector<Pixel> pixels;
};

}  // namespace

constexpr int kRestartAfter = 100;

std::vector<SynthSample> synth_blobs(const SynthSpec& spec, const RngStream& rng, int n_images) {
  spec.validate();
  const int n = spec.image_size;
  std::vector<SynthSample> out;
  out.reserve(static_cast<std::size_t>(std::max(0, n_images)));
  for (int i = 0; i < n_images; ++i) {
    RngStream s = rng.substream(StreamTag::Synth, static_cast<std::uint64_t>(i));
    const int count = static_cast<int>(s.uniform_int(spec.count_min, spec.count_max));
    Occupancy occ = Occupancy::Constant(n, n, false);
    std::vector<Cell> cells;
    int attempts = 0;
    int stalled = 0;
    auto fail = [&] {
      throw DataError("synthetic placement failed: retry budget of " + std::to_string(spec.max_attempts) +
                      " exhausted on image " + std::to_string(i));
    };
    auto commit = [&](Cell cell) {
      for (const auto& p : cell.pixels) occ(p.row, p.col) = true;
      cells.push_back(std::move(cell));
      stalled = 0;
    };
    while (static_cast<int>(cells.size()) < count) {
      if (++attempts > spec.max_attempts) fail();
      if (++stalled > kRestartAfter) {
        // Early large cells can leave no room; start the layout over.
        cells.clear();
        occ.setConstant(false);
        stalled = 0;
      }
      if (!spec.touching_pairs) {
        const double a = s.uniform(spec.radius_min, spec.radius_max);
        const double ecc = s.uniform(spec.eccentricity_min, spec.eccentricity_max);
        const double b = a * std::sqrt(1.0 - ecc * ecc);
        const double angle = s.uniform(0.0, std::numbers::pi);
        const double cy = s.uniform(a + 1.0, n - a - 2.0);
        const double cx = s.uniform(a + 1.0, n - a - 2.0);
        Cell cell{{cy, cx, a, b, angle}, {}};
        cell.pixels = rasterize(cell.shape, n);
        if (cell.pixels.empty() || !is_free(occ, cell.pixels, spec.min_gap)) continue;
        commit(std::move(cell));
      } else {
        // Two slightly overlapping circles (overlap goes to the first) so the pair
        // always shares a boundary; the pair as a whole keeps the gap to others.
        const double r1 = s.uniform(spec.radius_min, spec.radius_max);
        const double r2 = s.uniform(spec.radius_min, spec.radius_max);
        const double theta = s.uniform(0.0, 2.0 * std::numbers::pi);
        const double cy = s.uniform(r1 + 1.0, n - r1 - 2.0);
        const double cx = s.uniform(r1 + 1.0, n - r1 - 2.0);
        const double d = r1 + r2 - 1.0;
        const double cy2 = cy + d * std::sin(theta);
        const double cx2 = cx + d * std::cos(theta);
        if (cy2 < r2 + 1.0 || cx2 < r2 + 1.0 || cy2 > n - r2 - 2.0 || cx2 > n - r2 - 2.0) continue;
        Cell c1{{cy, cx, r1, r1, 0.0}, {}};
        Cell c2{{cy2, cx2, r2, r2, 0.0}, {}};
        c1.pixels = rasterize(c1.shape, n);
        c2.pixels = rasterize(c2.shape, n);
        std::erase_if(c2.pixels, [&](const Pixel& p) { return c1.shape.contains(p.row, p.col); });
        if (!is_free(occ, c1.pixels, spec.min_gap) || !is_free(occ, c2.pixels, spec.min_gap)) continue;
        commit(std::move(c1));
        if (static_cast<int>(cells.size()) < count) commit(std::move(c2));
      }
    }

    SynthSample sample{ImageTensor(n, n, 2), InstanceMask(n, n)};
    sample.image[0].setConstant(static_cast<float>(spec.background));
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const auto& cell = cells[k];
      const auto intensity = static_cast<float>(s.uniform(spec.cyto_min, spec.cyto_max));
      for (const auto& p : cell.pixels) {
        sample.mask.labels(p.row, p.col) = static_cast<std::int32_t>(k + 1);
        sample.image[0](p.row, p.col) = intensity;
      }
      const double nr = spec.nucleus_fraction * cell.shape.semi_minor;
      for (const auto& p : cell.pixels) {
        const double dy = p.row - cell.shape.cy;
        const double dx = p.col - cell.shape.cx;
        if (dy * dy + dx * dx <= nr * nr) sample.image[1](p.row, p.col) = static_cast<float>(spec.nucleus_intensity);
      }
    }
    if (spec.noise_sigma > 0.0) {
      for (int ch = 0; ch < 2; ++ch)
        for (Eigen::Index j = 0; j < sample.image[ch].size(); ++j) {
          float& v = sample.image[ch].data()[j];
          v = std::clamp(v + static_cast<float>(spec.noise_sigma * s.normal()), 0.0f, 1.0f);
        }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace mmcs
