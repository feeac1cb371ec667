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

// Training and evaluation drivers.
//
// One scene per optimizer step. The scene visited at step s and the
// denoising noise drawn for it depend only on (seed, s), so a run resumed from
// a checkpoint replays exactly the steps it would have taken.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "topofg/model.hpp"

namespace topofg {

struct StepRecord {
  std::uint64_t step = 0;  // 1-based optimizer step
  std::size_t scene = 0;
  double lane_l1 = 0.0;
  double classification = 0.0;
  double mask = 0.0;
  double topology_vanilla = 0.0;
  double topology_denoise = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

// Everything one step computes before the parameter update.
struct StepResult {
  LossBreakdown losses;
  Assignment assignment;
  Tensor vanilla_target;   // Hungarian-scattered [N x N]
  Tensor dn_supervision;   // block-diagonal; empty without denoising
};

// Forward + matching + losses + backward on one scene. Gradients accumulate
// into the model's parameters; no update is applied.
StepResult compute_step(TopoFgModel& model, const SyntheticScene& scene, std::uint64_t step);

// Scene index visited at 0-based step s over n scenes.
std::size_t scene_for_step(std::uint64_t seed, std::uint64_t step, std::size_t n);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  std::uint64_t max_steps = 0;    // 0: epochs * scenes
  std::filesystem::path resume;   // checkpoint to continue from
  std::ostream* progress = nullptr;
  std::uint64_t progress_every = 100;
};

struct TrainSummary {
  std::uint64_t steps = 0;
  std::vector<StepRecord> log;
  std::filesystem::path checkpoint;
};

// Runs AdamW over the scenes. A non-finite loss aborts with a
// std::domain_error after saving the still-finite parameters to
// last_good.ckpt in out_dir.
TrainSummary train(TopoFgModel& model, const std::vector<SyntheticScene>& scenes, const TrainOptions& opt);

// Threads for evaluation fan-out: TOPOFG_THREADS if set, else 1.
std::size_t eval_threads();

std::vector<Prediction> predict_all(const TopoFgModel& model, const std::vector<SyntheticScene>& scenes,
                                    std::size_t threads = 1);

MetricReport evaluate_model(const TopoFgModel& model, const std::vector<SyntheticScene>& scenes, double det_t,
                            double top_lt, std::size_t threads = 1);

// Checkpoint metadata written by train().
CheckpointMeta checkpoint_meta(const RunConfig& cfg, std::uint64_t step);
// Rebuilds a model from a checkpoint's embedded config and loads its weights.
TopoFgModel load_model(const std::filesystem::path& checkpoint);

}  // namespace topofg
