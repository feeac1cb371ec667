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

// Boundary-point topology reasoning.
//
// Lane i leads to lane j when the end of i meets the start of j, so the
// similarity head scores the pair (end feature of i, start feature of j) and a
// parameter-free geometric term scores the distance between the predicted
// end and start keypoints. Denoising instances are built from noised ground
// truth and supervised against a fixed block-diagonal adjacency.

#pragma once

#include <string>
#include <vector>

#include "topofg/nn.hpp"
#include "topofg/scene.hpp"

namespace topofg {

struct BoundaryFeatures {
  Var start;  // [N x D], Q^F[:, 0, :]
  Var end;    // [N x D], Q^F[:, k-1, :]
};

BoundaryFeatures extract_boundary(const Var& queries);

// Instance-level stand-in used when boundary-point reasoning is off: both
// features are the mean over the lane's k queries.
BoundaryFeatures pooled_instance_features(const Var& queries);

// S[i,j] = sigmoid(MLP(concat(end[i], start[j]))), evaluated as logits.
class SimilarityHead {
 public:
  SimilarityHead(ParameterStore& store, const std::string& name, std::size_t dim,
                 std::size_t hidden, SeededRng& rng);
  // [N x N] logits.
  Var logits(const Var& f_end, const Var& f_start) const;
  Var operator()(const Var& f_end, const Var& f_start) const { return sigmoid(logits(f_end, f_start)); }

  // First layer weight [2D x hidden]; rows 0..D-1 act on the end feature.
  const Linear& first() const { return first_; }
  const Linear& second() const { return second_; }

 private:
  std::size_t dim_;
  Linear first_;
  Linear second_;
};

// exp(-d / lambda) with d = |kp(i, k-1) - kp(j, 0)|; keypoints [N x k x 2] metres.
Tensor geometric_topology(const Tensor& keypoints, double lambda);

struct TopologyDecision {
  Tensor combined;  // similarity + geometric
  Tensor edges;     // combined >= theta, zero diagonal
};

TopologyDecision combine_and_decide(const Tensor& similarity, const Tensor& geometric, double theta);

// block_diag(a, ..., a) with `groups` copies.
Tensor block_diagonal(const Tensor& a, std::size_t groups);

struct DenoisingBatch {
  std::size_t groups = 0;
  std::size_t n_gt = 0;
  Tensor refs;         // [(n_gt*G*k) x 2], normalised noised GT keypoints
  Tensor centroid_pe;  // [(n_gt*G) x D], code of each noised lane's centroid
  Tensor supervision;  // [(n_gt*G) x (n_gt*G)]
  std::vector<int> blocks;  // group id + 1 per instance

  std::size_t size() const { return n_gt * groups; }
};

// Instance g*n_gt + j is GT lane j of group g.
DenoisingBatch build_denoising_batch(const std::vector<LaneInstance>& lanes, const Tensor& adjacency,
                                     std::size_t groups, double sigma, const BevGrid& grid,
                                     std::size_t dim, SeededRng& rng);

struct QuerySplit {
  Var vanilla;
  Var denoise;
};

// Splits a joint [(n_vanilla + n_denoise) x ...] tensor along axis 0.
QuerySplit split_queries(const Var& joint, std::size_t n_vanilla, std::size_t n_denoise);

}  // namespace topofg
