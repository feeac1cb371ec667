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

#include "topofg/render.hpp"

#include <cstdio>
#include <sstream>
#include <vector>

namespace topofg {
namespace {

// Fixed two-decimal formatting keeps the bytes independent of stream state.
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

class Canvas {
 public:
  Canvas(const Bounds& b, double ppm) : b_(b), ppm_(ppm) {}

  double width() const { return (b_.x_max - b_.x_min) * ppm_; }
  double height() const { return (b_.y_max - b_.y_min) * ppm_; }
  // y grows upwards in the scene and downwards in SVG.
  std::string x(double mx) const { return num((mx - b_.x_min) * ppm_); }
  std::string y(double my) const { return num((b_.y_max - my) * ppm_); }

  std::string points(const std::vector<Point2>& pts) const {
    std::string out;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) out += ' ';
      out += x(pts[i].x) + "," + y(pts[i].y);
    }
    return out;
  }

 private:
  Bounds b_;
  double ppm_;
};

}  // namespace

std::string render_svg(const SyntheticScene& scene, const Prediction* pred, const RenderOptions& opt,
                       RenderCounts* counts) {
  const Canvas cv(scene.bev.bounds, opt.pixels_per_metre);
  RenderCounts n;
  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(cv.width()) << "\" height=\""
    << num(cv.height() + 60.0) << "\" viewBox=\"0 0 " << num(cv.width()) << ' ' << num(cv.height() + 60.0)
    << "\">\n"
    << "  <defs>\n"
    << "    <marker id=\"head\" markerWidth=\"8\" markerHeight=\"8\" refX=\"7\" refY=\"4\" orient=\"auto\">\n"
    << "      <path d=\"M0,0 L8,4 L0,8 z\" fill=\"#1f5fbf\"/>\n"
    << "    </marker>\n"
    << "  </defs>\n"
    << "  <rect x=\"0\" y=\"0\" width=\"" << num(cv.width()) << "\" height=\"" << num(cv.height())
    << "\" fill=\"white\" stroke=\"black\"/>\n";

  o << "  <g id=\"gt\" fill=\"none\" stroke=\"#888888\" stroke-width=\"6\" stroke-opacity=\"0.5\">\n";
  for (const auto& lane : scene.lanes) {
    o << "    <polyline points=\"" << cv.points(lane.points) << "\"/>\n";
    ++n.gt_lanes;
  }
  o << "  </g>\n";

  std::vector<std::vector<Point2>> lanes;
  std::vector<bool> shown;
  if (pred != nullptr) {
    const ScenePrediction sp = pred->as_scene_prediction();
    lanes = sp.lanes;
    for (double s : sp.scores) shown.push_back(s >= opt.score_threshold);
  }
  o << "  <g id=\"pred\" fill=\"none\" stroke=\"#ff8c00\" stroke-width=\"2\">\n";
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    if (!shown[i]) continue;
    o << "    <polyline points=\"" << cv.points(lanes[i]) << "\"/>\n";
    ++n.predicted_lanes;
  }
  o << "  </g>\n";
  o << "  <g id=\"topology\" stroke=\"#1f5fbf\" stroke-width=\"1.5\" marker-end=\"url(#head)\">\n";
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    for (std::size_t j = 0; j < lanes.size(); ++j) {
      if (!shown[i] || !shown[j] || pred->edges.at(i, j) == 0.0) continue;
      const Point2 a = lanes[i].back(), b = lanes[j].front();
      o << "    <line x1=\"" << cv.x(a.x) << "\" y1=\"" << cv.y(a.y) << "\" x2=\"" << cv.x(b.x) << "\" y2=\""
        << cv.y(b.y) << "\"/>\n";
      ++n.arrows;
    }
  }
  o << "  </g>\n";

  const double ly = cv.height() + 20.0;
  o << "  <g id=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "    <line x1=\"10\" y1=\"" << num(ly) << "\" x2=\"40\" y2=\"" << num(ly)
    << "\" stroke=\"#888888\" stroke-width=\"6\" stroke-opacity=\"0.5\"/>\n"
    << "    <text x=\"46\" y=\"" << num(ly + 4) << "\">ground truth (" << n.gt_lanes << ")</text>\n"
    << "    <line x1=\"170\" y1=\"" << num(ly) << "\" x2=\"200\" y2=\"" << num(ly)
    << "\" stroke=\"#ff8c00\" stroke-width=\"2\"/>\n"
    << "    <text x=\"206\" y=\"" << num(ly + 4) << "\">predicted, score &gt;= " << num(opt.score_threshold)
    << " (" << n.predicted_lanes << ")</text>\n"
    << "    <line x1=\"10\" y1=\"" << num(ly + 24) << "\" x2=\"40\" y2=\"" << num(ly + 24)
    << "\" stroke=\"#1f5fbf\" stroke-width=\"1.5\" marker-end=\"url(#head)\"/>\n"
    << "    <text x=\"46\" y=\"" << num(ly + 28) << "\">predicted topology (" << n.arrows << ")</text>\n"
    << "  </g>\n"
    << "</svg>\n";
  if (counts != nullptr) *counts = n;
  return o.str();
}

}  // namespace topofg
