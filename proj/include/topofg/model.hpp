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

// The full lane-topology network: prior extractor, region-focused decoder and
// topology head, with an optional denoising branch sharing the decoder.

#pragma once

#include <memory>

#include "topofg/config.hpp"
#include "topofg/hpe.hpp"
#include "topofg/metrics.hpp"
#include "topofg/rbtr.hpp"
#include "topofg/rfd.hpp"

namespace topofg {

struct ForwardResult {
  HpeOutput hpe;
  RfdOutput joint;             // vanilla instances first, then denoising ones
  std::size_t n_vanilla = 0;
  std::size_t n_denoise = 0;
  Var queries;                 // vanilla [N x k x D]
  Var keypoints;               // vanilla, normalised [N x k x 2]
  Var class_logits;            // [N]
  Var sim_logits;              // [N x N]
  Var dn_sim_logits;           // [Ndn x Ndn] or undefined
  std::size_t ref_fallbacks = 0;
};

struct Prediction {
  Tensor keypoints;   // metres [N x k x 2]
  Tensor scores;      // [N]
  Tensor similarity;  // [N x N]
  Tensor geometric;   // [N x N]
  Tensor combined;    // [N x N]
  Tensor edges;       // [N x N] in {0, 1}
  Tensor masks;       // [N x HW]
  Tensor refs;        // normalised [(N*k) x 2]

  ScenePrediction as_scene_prediction() const;
  bool operator==(const Prediction&) const = default;
};

class TopoFgModel {
 public:
  explicit TopoFgModel(const RunConfig& cfg);

  ForwardResult forward(const BevGrid& bev, const DenoisingBatch* dn = nullptr) const;
  Prediction predict(const BevGrid& bev) const;

  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const RunConfig& config() const { return cfg_; }
  const Hpe& hpe() const { return *hpe_; }
  const Rfd& rfd() const { return *rfd_; }
  const SimilarityHead& similarity_head() const { return *sim_; }

 private:
  RunConfig cfg_;
  ParameterStore store_;
  std::unique_ptr<Hpe> hpe_;
  std::unique_ptr<Rfd> rfd_;
  std::unique_ptr<SimilarityHead> sim_;
};

HpeConfig hpe_config(const RunConfig& cfg);
RfdConfig rfd_config(const RunConfig& cfg);

// Ground truth as a scene prediction with unit scores and exact topology.
ScenePrediction oracle_prediction(const SyntheticScene& scene);
SceneTruth scene_truth(const SyntheticScene& scene);

}  // namespace topofg
