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

// Static SVG view of one scene: ground-truth lanes in grey, predicted lanes in
// orange, predicted topology as blue arrows from a lane's end to its
// successor's start.

#pragma once

#include <string>

#include "topofg/model.hpp"

namespace topofg {

struct RenderOptions {
  double score_threshold = 0.5;  // predicted lanes below it are not drawn
  double pixels_per_metre = 20.0;
};

struct RenderCounts {
  std::size_t gt_lanes = 0;
  std::size_t predicted_lanes = 0;
  std::size_t arrows = 0;
};

// An arrow is drawn for every decided edge whose endpoints are both drawn.
// `pred` may be null, which renders ground truth only. Output depends only on
// the inputs, so it is byte-stable.
std::string render_svg(const SyntheticScene& scene, const Prediction* pred, const RenderOptions& opt = {},
                       RenderCounts* counts = nullptr);

}  // namespace topofg
