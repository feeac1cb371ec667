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

// The default model memorising a single fork scene. Slow (about half a
// minute), so it lives apart from the unit suites.

#include <gtest/gtest.h>

#include <numeric>

#include "topofg/train.hpp"

namespace topofg {
namespace {

double mean_of(const std::vector<StepRecord>& log, std::size_t from, std::size_t to,
               double StepRecord::*field) {
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += log[i].*field;
  return s / static_cast<double>(to - from);
}

// First seed whose scene has a fork, so topology has something to learn.
SyntheticScene fork_scene(const GenerationParams& params) {
  for (std::uint64_t seed = 1;; ++seed) {
    SyntheticScene s = generate_scene(seed, params);
    for (std::size_t i = 0; i < s.lane_count(); ++i) {
      double out = 0.0;
      for (std::size_t j = 0; j < s.lane_count(); ++j) out += s.adjacency.at(i, j);
      if (out >= 2.0) return s;
    }
  }
}

TEST(Overfit, SingleSceneFiveHundredSteps) {
  const RunConfig cfg;
  const SyntheticScene scene = fork_scene(cfg.scene);
  TopoFgModel model(cfg);
  TrainOptions opt;
  opt.max_steps = 500;
  const TrainSummary s = train(model, {scene}, opt);
  ASSERT_EQ(s.log.size(), 500u);

  EXPECT_LT(s.log.back().total, 0.1 * s.log[9].total);
  EXPECT_LT(mean_of(s.log, 450, 500, &StepRecord::mask), 0.5 * mean_of(s.log, 0, 50, &StepRecord::mask));
  EXPECT_LT(mean_of(s.log, 450, 500, &StepRecord::lane_l1), mean_of(s.log, 0, 50, &StepRecord::lane_l1));

  // Every lane is recovered: some query covers its mask and lies within 0.5 m.
  const Prediction p = model.predict(scene.bev);
  const std::size_t N = p.scores.dim(0), HW = scene.bev.height * scene.bev.width;
  const ScenePrediction sp = p.as_scene_prediction();
  for (std::size_t j = 0; j < scene.lane_count(); ++j) {
    double best_dice = 0.0, best_frechet = 1e9;
    for (std::size_t i = 0; i < N; ++i) {
      double inter = 0.0, ps = 0.0, ts = 0.0;
      for (std::size_t c = 0; c < HW; ++c) {
        const double pr = p.masks.at(i, c) > 0.5 ? 1.0 : 0.0;
        inter += pr * scene.gt_masks[j][c];
        ps += pr;
        ts += scene.gt_masks[j][c];
      }
      best_dice = std::max(best_dice, 2.0 * inter / (ps + ts));
      best_frechet = std::min(best_frechet, discrete_frechet(sp.lanes[i], scene.lanes[j].points));
    }
    EXPECT_GE(best_dice, 0.5) << "lane " << j;
    EXPECT_LT(best_frechet, 0.5) << "lane " << j;
  }
}

}  // namespace
}  // namespace topofg
