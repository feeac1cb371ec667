/* Copyright 2026 The topofg Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Procedural lane networks and their bird's-eye-view rasterisation.
//
// Traffic flows towards +x (ego forward). Lanes are circular arcs or
// straights sampled at k equal arc-length steps; successors copy their
// predecessor's end point bit-for-bit, so connectivity is recovered exactly
// from endpoint equality.

#pragma once

#include <cstdint>
#include <vector>

#include "topofg/tensor.hpp"

namespace topofg {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

double distance(Point2 a, Point2 b);

struct LaneInstance {
  std::vector<Point2> points;  // k points, start to end
  int class_id = 0;

  Point2 start() const { return points.front(); }
  Point2 end() const { return points.back(); }
  bool operator==(const LaneInstance&) const = default;
};

// Metric extent of the BEV window.
struct Bounds {
  double x_min = -12.0;
  double x_max = 12.0;
  double y_min = -12.0;
  double y_max = 12.0;
  bool operator==(const Bounds&) const = default;
};

// H x W grid of D-dimensional features covering `bounds`; row index runs
// along y, column index along x.
struct BevGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  Bounds bounds;
  Tensor features;  // [H x W x D]

  double cell_width() const { return (bounds.x_max - bounds.x_min) / static_cast<double>(width); }
  double cell_height() const { return (bounds.y_max - bounds.y_min) / static_cast<double>(height); }
  Point2 cell_center(std::size_t row, std::size_t col) const;
  // Metric point -> normalised [0,1]^2 coordinates (not clamped).
  Point2 normalize(Point2 p) const;
  Point2 denormalize(Point2 uv) const;
  bool operator==(const BevGrid&) const = default;
};

struct GenerationParams {
  Bounds bounds;
  std::size_t grid_h = 32;
  std::size_t grid_w = 32;
  std::size_t feature_dim = 32;
  std::size_t k = 11;

  int min_roots = 1;
  int max_roots = 2;
  int min_lanes = 2;
  int max_lanes = 6;
  double p_fork = 0.4;
  double p_continue = 0.6;
  double p_merge = 0.3;
  double length_min = 6.0;
  double length_max = 11.0;
  double curvature_max = 0.08;     // 1/m
  double root_heading_max = 0.35;  // rad
  double heading_max = 1.1;        // rad, any lane relative to +x
  double margin = 0.5;             // m kept clear of the window border

  double lane_width_cells = 1.0;
  double distance_clip_cells = 4.0;
  double noise_sigma = 0.05;
  // Channels 2 .. 2 + position_channels hold the cell's sine-cosine code.
  std::size_t position_channels = 8;

  bool operator==(const GenerationParams&) const = default;
};

// Throws std::invalid_argument when the parameters cannot produce a scene.
void validate(const GenerationParams& params);

struct SyntheticScene {
  std::uint64_t seed = 0;
  std::vector<LaneInstance> lanes;
  Tensor adjacency;                           // [N x N], entries in {0, 1}
  BevGrid bev;
  std::vector<std::vector<std::uint8_t>> gt_masks;  // N rasters of H*W
  std::uint64_t clipped_lanes = 0;           // lanes with points outside bounds

  std::size_t lane_count() const { return lanes.size(); }
  bool operator==(const SyntheticScene&) const = default;
};

// Lane i leads to lane j iff end(i) == start(j) within tol metres.
Tensor adjacency_from_endpoints(const std::vector<LaneInstance>& lanes, double tol = 1e-6);

// Lane network only (no raster).
std::vector<LaneInstance> generate_lanes(std::uint64_t seed, const GenerationParams& params);

struct Raster {
  std::vector<std::vector<std::uint8_t>> masks;
  BevGrid bev;
  std::uint64_t clipped_lanes = 0;
};

// Stamps each lane polyline into its own mask and builds the synthetic BEV
// feature grid: [union mask, clipped distance to nearest lane / clip,
// sine-cosine cell code, zero padding] + N(0, noise_sigma) on every channel.
Raster rasterize(const std::vector<LaneInstance>& lanes, const GenerationParams& params,
                 std::uint64_t noise_seed);

// generate_lanes + adjacency + rasterize.
SyntheticScene generate_scene(std::uint64_t seed, const GenerationParams& params);

// Euclidean distance from p to the polyline through `points`.
double point_polyline_distance(Point2 p, const std::vector<Point2>& points);

// DETR-style 2-D sine-cosine code of a normalised coordinate. Half of the
// channels encode x, half y; each half alternates sin/cos over geometric
// frequencies. dim must be a multiple of 4.
std::vector<double> sine_cosine_2d(double u, double v, std::size_t dim, double temperature = 20.0);

}  // namespace topofg
