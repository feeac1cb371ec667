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

#include "topofg/scene.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "topofg/rng.hpp"

namespace topofg {

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

Point2 BevGrid::cell_center(std::size_t row, std::size_t col) const {
  return {bounds.x_min + (static_cast<double>(col) + 0.5) * cell_width(),
          bounds.y_min + (static_cast<double>(row) + 0.5) * cell_height()};
}

Point2 BevGrid::normalize(Point2 p) const {
  return {(p.x - bounds.x_min) / (bounds.x_max - bounds.x_min),
          (p.y - bounds.y_min) / (bounds.y_max - bounds.y_min)};
}

Point2 BevGrid::denormalize(Point2 uv) const {
  return {bounds.x_min + uv.x * (bounds.x_max - bounds.x_min),
          bounds.y_min + uv.y * (bounds.y_max - bounds.y_min)};
}

void validate(const GenerationParams& p) {
  auto bad = [](const std::string& why) { throw std::invalid_argument("generation params: " + why); };
  if (!(p.bounds.x_max > p.bounds.x_min && p.bounds.y_max > p.bounds.y_min)) bad("empty bounds");
  if (p.grid_h == 0 || p.grid_w == 0) bad("grid must be non-empty");
  if (p.k < 2) bad("k must be >= 2");
  if (p.feature_dim < 2) bad("feature_dim must be >= 2");
  if (p.max_lanes < 1) bad("max_lanes must be >= 1");
  if (p.min_lanes < 1 || p.min_lanes > p.max_lanes) bad("need 1 <= min_lanes <= max_lanes");
  if (p.min_roots < 1 || p.min_roots > p.max_roots) bad("need 1 <= min_roots <= max_roots");
  if (!(p.length_min > 0.0 && p.length_max >= p.length_min)) bad("invalid length range");
  if (p.curvature_max < 0.0) bad("curvature_max must be >= 0");
  if (p.lane_width_cells <= 0.0) bad("lane_width_cells must be > 0");
  if (p.distance_clip_cells <= 0.0) bad("distance_clip_cells must be > 0");
  if (p.noise_sigma < 0.0) bad("noise_sigma must be >= 0");
  if (p.position_channels % 4 != 0) bad("position_channels must be a multiple of 4");
  for (double q : {p.p_fork, p.p_continue, p.p_merge}) {
    if (q < 0.0 || q > 1.0) bad("probabilities must lie in [0,1]");
  }
  const double span = std::min(p.bounds.x_max - p.bounds.x_min, p.bounds.y_max - p.bounds.y_min);
  if (2.0 * p.margin >= span) bad("margin leaves no room");
}

namespace {

struct Arc {
  Point2 origin;
  double heading;
  double curvature;
  double length;

  Point2 at(double s) const {
    if (std::abs(curvature) < 1e-12) {
      return {origin.x + s * std::cos(heading), origin.y + s * std::sin(heading)};
    }
    const double r = 1.0 / curvature;
    return {origin.x + r * (std::sin(heading + curvature * s) - std::sin(heading)),
            origin.y + r * (std::cos(heading) - std::cos(heading + curvature * s))};
  }
  double heading_at(double s) const { return heading + curvature * s; }
};

std::vector<Point2> sample_arc(const Arc& arc, std::size_t k) {
  std::vector<Point2> pts(k);
  for (std::size_t t = 0; t < k; ++t) {
    pts[t] = arc.at(arc.length * static_cast<double>(t) / static_cast<double>(k - 1));
  }
  pts[0] = arc.origin;
  return pts;
}

bool inside(const std::vector<Point2>& pts, const Bounds& b, double margin) {
  for (const auto& p : pts) {
    if (p.x < b.x_min + margin || p.x > b.x_max - margin || p.y < b.y_min + margin ||
        p.y > b.y_max - margin) {
      return false;
    }
  }
  return true;
}

struct Builder {
  const GenerationParams& p;
  SeededRng& rng;
  std::vector<LaneInstance> lanes;
  std::vector<double> end_heading;
  std::vector<double> start_heading;

  // Lane leaving `origin` with `heading`; shrinks the length up to three times
  // to stay inside the window. Returns false if it cannot fit.
  bool add_forward(Point2 origin, double heading, double curvature) {
    double length = rng.uniform(p.length_min, p.length_max);
    // Keep the end heading within the forward cone.
    if (std::abs(heading + curvature * length) > p.heading_max) curvature = -curvature;
    for (int attempt = 0; attempt < 4; ++attempt) {
      Arc arc{origin, heading, curvature, length};
      auto pts = sample_arc(arc, p.k);
      if (inside(pts, p.bounds, p.margin) && std::abs(arc.heading_at(length)) <= p.heading_max) {
        lanes.push_back({std::move(pts), 0});
        start_heading.push_back(heading);
        end_heading.push_back(arc.heading_at(length));
        return true;
      }
      length *= 0.6;
      if (length < 0.5 * p.length_min) break;
    }
    return false;
  }

  // Lane arriving at `target` with heading `heading`, built backwards.
  bool add_backward(Point2 target, double heading, double curvature) {
    double length = rng.uniform(p.length_min, p.length_max);
    for (int attempt = 0; attempt < 4; ++attempt) {
      Arc rev{target, heading + std::numbers::pi, curvature, length};
      auto pts = sample_arc(rev, p.k);
      std::reverse(pts.begin(), pts.end());
      const double h0 = heading + curvature * length;
      if (inside(pts, p.bounds, p.margin) && std::abs(h0) <= p.heading_max) {
        pts.back() = target;
        lanes.push_back({std::move(pts), 0});
        start_heading.push_back(h0);
        end_heading.push_back(heading);
        return true;
      }
      length *= 0.6;
      if (length < 0.5 * p.length_min) break;
    }
    return false;
  }

  double gentle_curvature() { return rng.uniform(-p.curvature_max, p.curvature_max) / 3.0; }
  double strong_curvature() {
    const double mag = rng.uniform(0.5, 1.0) * p.curvature_max;
    return rng.bernoulli(0.5) ? mag : -mag;
  }

  void grow_from_roots(int roots) {
    const auto& b = p.bounds;
    const double xspan = b.x_max - b.x_min;
    const double yspan = b.y_max - b.y_min;
    std::deque<std::size_t> open;
    for (int r = 0; r < roots && static_cast<int>(lanes.size()) < p.max_lanes; ++r) {
      for (int attempt = 0; attempt < 8; ++attempt) {
        Point2 o{rng.uniform(b.x_min + p.margin, b.x_min + 0.3 * xspan),
                 rng.uniform(b.y_min + 0.2 * yspan, b.y_max - 0.2 * yspan)};
        const double h = rng.uniform(-p.root_heading_max, p.root_heading_max);
        if (add_forward(o, h, gentle_curvature())) {
          open.push_back(lanes.size() - 1);
          break;
        }
      }
    }
    while (!open.empty()) {
      const std::size_t i = open.front();
      open.pop_front();
      const int room = p.max_lanes - static_cast<int>(lanes.size());
      const Point2 e = lanes[i].end();
      const double h = end_heading[i];
      if (room >= 2 && p.curvature_max > 0.0 && rng.bernoulli(p.p_fork)) {
        // A fork is all-or-nothing; a single surviving branch is dropped.
        const std::size_t before = lanes.size();
        for (int attempt = 0; attempt < 4; ++attempt) {
          const bool a = add_forward(e, h, gentle_curvature());
          const bool b = add_forward(e, h, strong_curvature());
          if (a && b) {
            open.push_back(before);
            open.push_back(before + 1);
            break;
          }
          lanes.resize(before);
          start_heading.resize(before);
          end_heading.resize(before);
        }
      } else if (room >= 1 && rng.bernoulli(p.p_continue)) {
        if (add_forward(e, h, gentle_curvature())) open.push_back(lanes.size() - 1);
      }
    }
  }

  // A lane joining the start of an existing lane that already has a
  // predecessor.
  void add_merge() {
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < lanes.size(); ++j) {
      for (std::size_t i = 0; i < lanes.size(); ++i) {
        if (lanes[i].end() == lanes[j].start()) {
          candidates.push_back(j);
          break;
        }
      }
    }
    if (candidates.empty()) return;
    const std::size_t j = candidates[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1))];
    add_backward(lanes[j].start(), start_heading[j], strong_curvature());
  }
};

}  // namespace

Tensor adjacency_from_endpoints(const std::vector<LaneInstance>& lanes, double tol) {
  const std::size_t n = lanes.size();
  Tensor a(Shape{n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && distance(lanes[i].end(), lanes[j].start()) < tol) a.at(i, j) = 1.0;
  return a;
}

std::vector<LaneInstance> generate_lanes(std::uint64_t seed, const GenerationParams& params) {
  validate(params);
  SeededRng rng(seed);
  Builder b{params, rng, {}, {}, {}};
  const int roots = static_cast<int>(rng.uniform_int(params.min_roots, params.max_roots));
  b.grow_from_roots(roots);
  if (static_cast<int>(b.lanes.size()) < params.max_lanes && rng.bernoulli(params.p_merge)) {
    b.add_merge();
  }
  for (int extra = 0; static_cast<int>(b.lanes.size()) < params.min_lanes && extra < 16; ++extra) {
    b.grow_from_roots(1);
  }
  if (static_cast<int>(b.lanes.size()) < params.min_lanes || b.lanes.empty()) {
    throw std::invalid_argument("generation params: could not place min_lanes lanes inside bounds");
  }
  return std::move(b.lanes);
}

double point_polyline_distance(Point2 p, const std::vector<Point2>& pts) {
  if (pts.empty()) throw std::invalid_argument("point_polyline_distance: empty polyline");
  double best = distance(p, pts[0]);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double dx = pts[i + 1].x - pts[i].x, dy = pts[i + 1].y - pts[i].y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((p.x - pts[i].x) * dx + (p.y - pts[i].y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    best = std::min(best, distance(p, {pts[i].x + t * dx, pts[i].y + t * dy}));
  }
  return best;
}

std::vector<double> sine_cosine_2d(double u, double v, std::size_t dim, double temperature) {
  if (dim % 4 != 0 || dim == 0) throw std::invalid_argument("sine_cosine_2d: dim must be a positive multiple of 4");
  const std::size_t nfreq = dim / 4;
  std::vector<double> out(dim);
  for (std::size_t f = 0; f < nfreq; ++f) {
    const double ratio = nfreq > 1 ? static_cast<double>(f) / static_cast<double>(nfreq - 1) : 0.0;
    const double w = std::numbers::pi * std::pow(temperature, ratio);
    out[2 * f] = std::sin(w * u);
    out[2 * f + 1] = std::cos(w * u);
    out[dim / 2 + 2 * f] = std::sin(w * v);
    out[dim / 2 + 2 * f + 1] = std::cos(w * v);
  }
  return out;
}

Raster rasterize(const std::vector<LaneInstance>& lanes, const GenerationParams& params,
                 std::uint64_t noise_seed) {
  validate(params);
  Raster out;
  auto& bev = out.bev;
  bev.height = params.grid_h;
  bev.width = params.grid_w;
  bev.channels = params.feature_dim;
  bev.bounds = params.bounds;
  const std::size_t H = bev.height, W = bev.width, D = bev.channels, HW = H * W;
  const double cell = std::min(bev.cell_width(), bev.cell_height());
  const double radius = 0.5 * params.lane_width_cells * cell;

  for (const auto& lane : lanes) {
    if (!inside(lane.points, params.bounds, 0.0)) ++out.clipped_lanes;
  }

  out.masks.assign(lanes.size(), std::vector<std::uint8_t>(HW, 0));
  std::vector<double> nearest(HW, std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const Point2 ctr = bev.cell_center(r, c);
      for (std::size_t i = 0; i < lanes.size(); ++i) {
        const double d = point_polyline_distance(ctr, lanes[i].points);
        nearest[r * W + c] = std::min(nearest[r * W + c], d);
        if (d <= radius) out.masks[i][r * W + c] = 1;
      }
    }

  bev.features = Tensor(Shape{H, W, D}, 0.0);
  const std::size_t pos = std::min(params.position_channels, D >= 2 ? (D - 2) / 4 * 4 : 0);
  SeededRng noise(noise_seed ^ 0x5EEDF00DCAFEULL);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      double* f = bev.features.data() + (r * W + c) * D;
      bool any = false;
      for (const auto& m : out.masks) any = any || m[r * W + c];
      f[0] = any ? 1.0 : 0.0;
      const double d_cells = nearest[r * W + c] / cell;
      f[1] = lanes.empty() ? 1.0 : std::min(d_cells, params.distance_clip_cells) / params.distance_clip_cells;
      if (pos > 0) {
        auto code = sine_cosine_2d((c + 0.5) / W, (r + 0.5) / H, pos);
        std::copy(code.begin(), code.end(), f + 2);
      }
      if (params.noise_sigma > 0.0) {
        for (std::size_t ch = 0; ch < D; ++ch) f[ch] += noise.normal(0.0, params.noise_sigma);
      }
    }
  return out;
}

SyntheticScene generate_scene(std::uint64_t seed, const GenerationParams& params) {
  SyntheticScene s;
  s.seed = seed;
  s.lanes = generate_lanes(seed, params);
  s.adjacency = adjacency_from_endpoints(s.lanes);
  auto raster = rasterize(s.lanes, params, seed);
  s.gt_masks = std::move(raster.masks);
  s.bev = std::move(raster.bev);
  s.clipped_lanes = raster.clipped_lanes;
  return s;
}

}  // namespace topofg
