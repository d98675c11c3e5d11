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

#include "mmcs/flows.hpp"

#include "mmcs/error.hpp"
#include "mmcs/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <string>

namespace mmcs {

void FlowParams::validate() const {
  if (n_follow_steps < 1) throw UsageError("n_follow_steps must be >= 1");
  if (min_size < 0) throw UsageError("min_size must be >= 0");
  if (sink_bin < 1) throw UsageError("sink_bin must be >= 1");
  if (!(step_size > 0.0)) throw UsageError("step_size must be positive");
  if (sink_merge_radius < 0.0) throw UsageError("sink_merge_radius must be >= 0");
}

namespace {

struct Box {
  int r0, r1, c0, c1;  // inclusive
  int height() const { return r1 - r0 + 1; }
  int width() const { return c1 - c0 + 1; }
};

// Heat diffusion and flow for one instance, written into `out` in place.
void instance_flow(const std::vector<Pixel>& pixels, FlowMap& out) {
  Box box{pixels.front().row, pixels.front().row, pixels.front().col, pixels.front().col};
  for (const auto& p : pixels) {
    box.r0 = std::min(box.r0, p.row);
    box.r1 = std::max(box.r1, p.row);
    box.c0 = std::min(box.c0, p.col);
    box.c1 = std::max(box.c1, p.col);
  }
  const int bh = box.height();
  const int bw = box.width();
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> inside =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(bh, bw, false);
  for (const auto& p : pixels) inside(p.row - box.r0, p.col - box.c0) = true;

  // Center: instance pixel nearest the per-axis median.
  std::vector<int> rows, cols;
  rows.reserve(pixels.size());
  cols.reserve(pixels.size());
  for (const auto& p : pixels) {
    rows.push_back(p.row);
    cols.push_back(p.col);
  }
  const auto mid = rows.size() / 2;
  std::nth_element(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(mid), rows.end());
  std::nth_element(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(mid), cols.end());
  const double med_r = rows[mid];
  const double med_c = cols[mid];
  Pixel center = pixels.front();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : pixels) {
    const double d = (p.row - med_r) * (p.row - med_r) + (p.col - med_c) * (p.col - med_c);
    if (d < best) {
      best = d;
      center = p;
    }
  }
  const int cr = center.row - box.r0;
  const int cc = center.col - box.c0;

  using Grid = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Grid heat = Grid::Zero(bh, bw);
  Grid next(bh, bw);
  auto at = [&](const Grid& g, int r, int c) { return (r < 0 || c < 0 || r >= bh || c >= bw || !inside(r, c)) ? 0.0 : g(r, c); };
  const int n_iter = 2 * std::max(bh, bw);
  for (int it = 0; it < n_iter; ++it) {
    heat(cr, cc) += 1.0;
    for (int r = 0; r < bh; ++r)
      for (int c = 0; c < bw; ++c)
        next(r, c) = inside(r, c) ? 0.25 * (at(heat, r - 1, c) + at(heat, r + 1, c) + at(heat, r, c - 1) + at(heat, r, c + 1)) : 0.0;
    std::swap(heat, next);
  }
  const Grid g = heat.log1p();

  auto in = [&](int r, int c) { return r >= 0 && c >= 0 && r < bh && c < bw && inside(r, c); };
  auto derivative = [&](int r, int c, int dr, int dc) {
    const bool fwd = in(r + dr, c + dc);
    const bool bwd = in(r - dr, c - dc);
    if (fwd && bwd) return 0.5 * (g(r + dr, c + dc) - g(r - dr, c - dc));
    if (fwd) return g(r + dr, c + dc) - g(r, c);
    if (bwd) return g(r, c) - g(r - dr, c - dc);
    return 0.0;
  };
  for (const auto& p : pixels) {
    const int r = p.row - box.r0;
    const int c = p.col - box.c0;
    const double dy = derivative(r, c, 1, 0);
    const double dx = derivative(r, c, 0, 1);
    const double norm = std::hypot(dy, dx);
    out.flow_y()(p.row, p.col) = norm > 0.0 ? static_cast<float>(dy / norm) : 0.0f;
    out.flow_x()(p.row, p.col) = norm > 0.0 ? static_cast<float>(dx / norm) : 0.0f;
    out.cell_logit()(p.row, p.col) = 1.0f;
  }
}

struct DisjointSets {
  std::vector<int> parent;
  explicit DisjointSets(int n) : parent(static_cast<std::size_t>(n)) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int i) {
    while (parent[static_cast<std::size_t>(i)] != i) {
      parent[static_cast<std::size_t>(i)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
      i = parent[static_cast<std::size_t>(i)];
    }
    return i;
  }
  // Smaller index becomes the root so labels follow raster order of sinks.
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b)
      parent[static_cast<std::size_t>(b)] = a;
    else
      parent[static_cast<std::size_t>(a)] = b;
  }
};

}  // namespace

FlowMap mask_to_flow(const InstanceMask& mask) {
  FlowMap out(mask.height(), mask.width());
  const int n_labels = std::max(0, mask.max_label());
  std::vector<std::vector<Pixel>> members(static_cast<std::size_t>(n_labels) + 1);
  for (int r = 0; r < mask.height(); ++r)
    for (int c = 0; c < mask.width(); ++c) {
      const auto v = mask.labels(r, c);
      if (v > 0) members[static_cast<std::size_t>(v)].push_back({r, c});
    }
  for (const auto& pixels : members)
    if (!pixels.empty()) instance_flow(pixels, out);
  return out;
}

FlowTrace follow_flows(const FlowMap& flow, const FlowParams& params) {
  FlowTrace trace;
  const int h = flow.height();
  const int w = flow.width();
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (flow.cell_logit()(r, c) > params.cell_threshold) trace.sources.push_back({r, c});
  trace.finals.resize(trace.sources.size());
  const double ymax = h - 1;
  const double xmax = w - 1;
  for (std::size_t i = 0; i < trace.sources.size(); ++i) {
    double y = trace.sources[i].row;
    double x = trace.sources[i].col;
    for (int s = 0; s < params.n_follow_steps; ++s) {
      const double fy = sample_bilinear_clamped(flow.flow_y(), y, x);
      const double fx = sample_bilinear_clamped(flow.flow_x(), y, x);
      y = std::clamp(y + params.step_size * fy, 0.0, ymax);
      x = std::clamp(x + params.step_size * fx, 0.0, xmax);
    }
    trace.finals[i] = {y, x};
  }
  return trace;
}

InstanceMask cluster_sinks(const FlowTrace& trace, int height, int width, const FlowParams& params) {
  InstanceMask out(height, width);
  if (trace.sources.empty()) return out;
  const int bin = params.sink_bin;
  const int bh = height / bin + 2;
  const int bw = width / bin + 2;
  auto bin_of = [&](double v) { return static_cast<int>(std::floor((v + 0.5) / bin)); };
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> hist =
      Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(bh, bw);
  for (const auto& p : trace.finals) ++hist(bin_of(p.y), bin_of(p.x));

  std::vector<Pixel> sinks;
  for (int r = 0; r < bh; ++r)
    for (int c = 0; c < bw; ++c) {
      const int v = hist(r, c);
      if (v < 3) continue;
      bool is_max = true;
      for (int dr = -1; dr <= 1 && is_max; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= bh || cc >= bw) continue;
          if (hist(rr, cc) > v) {
            is_max = false;
            break;
          }
        }
      if (is_max) sinks.push_back({r, c});
    }
  if (sinks.empty()) return out;

  const auto n = static_cast<int>(sinks.size());
  DisjointSets sets(n);
  const double merge2 = params.sink_merge_radius * params.sink_merge_radius;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double dy = static_cast<double>(sinks[static_cast<std::size_t>(i)].row - sinks[static_cast<std::size_t>(j)].row) * bin;
      const double dx = static_cast<double>(sinks[static_cast<std::size_t>(i)].col - sinks[static_cast<std::size_t>(j)].col) * bin;
      if (dy * dy + dx * dx <= merge2) sets.unite(i, j);
    }

  for (std::size_t k = 0; k < trace.sources.size(); ++k) {
    const auto& p = trace.finals[k];
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const double dy = p.y - static_cast<double>(sinks[static_cast<std::size_t>(i)].row) * bin;
      const double dx = p.x - static_cast<double>(sinks[static_cast<std::size_t>(i)].col) * bin;
      const double d = dy * dy + dx * dx;
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    out.labels(trace.sources[k].row, trace.sources[k].col) = sets.find(best) + 1;
  }
  return canonicalize_mask(out);
}

InstanceMask remove_small(const InstanceMask& mask, int min_size) {
  const auto areas = mask.areas();
  InstanceMask out = mask;
  for (Eigen::Index i = 0; i < out.labels.size(); ++i) {
    auto& v = out.labels.data()[i];
    if (v > 0 && areas[static_cast<std::size_t>(v)] < min_size) v = 0;
  }
  return canonicalize_mask(out);
}

InstanceMask flow_to_mask(const FlowMap& flow, const FlowParams& params) {
  params.validate();
  if (!flow.all_finite()) throw NumericError("flow map contains non-finite values");
  const FlowTrace trace = follow_flows(flow, params);
  return remove_small(cluster_sinks(trace, flow.height(), flow.width(), params), params.min_size);
}

FlowMap decode_prediction(const FlowMap& raw, const FlowParams& params) {
  FlowMap out = raw;
  const auto fg = (raw.cell_logit() > static_cast<float>(params.cell_threshold)).cast<float>();
  out.flow_y() = raw.flow_y() / static_cast<float>(kFlowTargetScale) * fg;
  out.flow_x() = raw.flow_x() / static_cast<float>(kFlowTargetScale) * fg;
  return out;
}

namespace {
constexpr char kFlowMagic[8] = {'M', 'M', 'C', 'S', 'F', 'L', 'O', 'W'};
}

void write_flow_file(const std::filesystem::path& path, const FlowMap& flow) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kFlowMagic, sizeof(kFlowMagic));
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(flow.height()), static_cast<std::uint32_t>(flow.width())};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  for (const auto& p : flow.planes)
    out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(float)));
  if (!out) throw IoError("failed writing " + path.string());
}

FlowMap read_flow_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 16 || std::memcmp(buf.data(), kFlowMagic, 8) != 0) throw CorruptionError("not a flow file: " + path.string());
  std::uint32_t dims[2];
  std::memcpy(dims, buf.data() + 8, sizeof(dims));
  const std::size_t plane = std::size_t{dims[0]} * dims[1];
  if (buf.size() != 16 + 3 * plane * sizeof(float)) throw CorruptionError("flow file size mismatch: " + path.string());
  FlowMap f(static_cast<int>(dims[0]), static_cast<int>(dims[1]));
  for (std::size_t c = 0; c < 3; ++c) std::memcpy(f.planes[c].data(), buf.data() + 16 + c * plane * sizeof(float), plane * sizeof(float));
  return f;
}

}  // namespace mmcs
