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

// Prediction-to-ground-truth assignment and the training losses.

#pragma once

#include <utility>
#include <vector>

#include "topofg/autograd.hpp"

namespace topofg {

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred, gt), sorted by pred
  double total_cost = 0.0;
};

// Minimum-cost one-to-one assignment for a rectangular [N x M] cost matrix;
// min(N, M) pairs. Throws std::invalid_argument on non-finite costs.
Assignment hungarian(const Tensor& cost);

// cost[i,j] = w_reg * mean_t |pred(i,t) - gt(j,t)|_1 + w_cls * (1 - score_i).
// pred: [N x k x 2]; scores: [N]; gt: [M x k x 2].
Tensor matching_cost(const Tensor& pred, const Tensor& scores, const Tensor& gt, double w_reg,
                     double w_cls);

// Dice cost between predicted mask probabilities [N x HW] and GT masks
// [M x HW], with the same +1 smoothing as the Dice loss.
Tensor mask_matching_cost(const Tensor& probs, const Tensor& gt_masks);

struct ScatteredTarget {
  Tensor target;                 // [n x n]
  std::size_t dropped_edges = 0;  // GT edges touching an unmatched lane
};

// target[pred(a), pred(b)] = a_gt[a, b] for matched GT lanes a, b.
ScatteredTarget scatter_topology_supervision(const Tensor& a_gt, const Assignment& assignment,
                                             std::size_t n);

struct LossWeights {
  double reg = 2.0;
  double cls = 1.0;
  double mask = 1.0;
  double topo = 2.0;
  double dn = 2.0;
  // Weight of positive entries in the topology BCE terms.
  double topo_pos_weight = 5.0;
  // Weight of the mask Dice term in the matching cost (0 disables it).
  double mask_match = 1.0;

  bool operator==(const LossWeights&) const = default;
};

struct LossInputs {
  Var keypoints;      // normalised [N x k x 2]
  Var class_logits;   // [N]
  Var mask_logits;    // [N x HW]
  std::vector<Var> aux_mask_logits;  // deep supervision, same assignment
  Var sim_logits;     // [N x N]
  Var dn_sim_logits;  // [Ndn x Ndn]; undefined without denoising
};

struct LossTargets {
  Tensor keypoints;   // normalised [M x k x 2]
  Tensor masks;       // [M x HW] in {0, 1}
  Tensor topology;    // scattered [N x N]
  Tensor dn_topology; // block-diagonal [Ndn x Ndn]
  Assignment assignment;
};

struct LossBreakdown {
  double lane_l1 = 0.0;
  double classification = 0.0;
  double mask = 0.0;
  double mask_aux = 0.0;  // summed over intermediate mask predictions
  double topology_vanilla = 0.0;
  double topology_denoise = 0.0;
  double total = 0.0;
  Var total_var;
};

// BCE weights: 0 on the diagonal, pos_weight where target is 1, else 1.
Tensor topology_weights(const Tensor& target, double pos_weight);

// Throws std::domain_error naming the first non-finite component.
LossBreakdown compute_losses(const LossInputs& in, const LossTargets& tg, const LossWeights& w);

}  // namespace topofg
