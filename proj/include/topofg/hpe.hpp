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

// Hierarchical prior extractor.
//
// Learnable instance queries are refined against the BEV features by a small
// mask former and predict one lane mask each. The masks give every query a
// global spatial prior (mask-weighted mean of the BEV positional code), and a
// learnable per-keypoint table plus an index code gives the local sequential
// prior shared by all lanes.

#pragma once

#include <string>
#include <vector>

#include "topofg/nn.hpp"

namespace topofg {

struct HpeConfig {
  std::size_t in_channels = 32;
  std::size_t d_model = 32;
  std::size_t num_queries = 20;
  std::size_t k = 11;
  std::size_t layers = 3;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 64;
  std::size_t grid_h = 32;
  std::size_t grid_w = 32;
  double tau = 0.3;
  double alpha = 1.0;
  bool local_prior = true;
  bool global_prior = true;
};

// Sine-cosine code of every cell centre, row-major: [(H*W) x dim].
Tensor bev_position_table(std::size_t height, std::size_t width, std::size_t dim);

// Transformer-style 1-D code of the indices 1..k: [k x dim].
Tensor index_encoding(std::size_t k, std::size_t dim, double temperature = 10000.0);

// sigmoid(queries . pixel_embed^T): [N x D], [HW x D] -> [N x HW].
Var mask_probabilities(const Var& queries, const Var& pixel_embed);

// A = M where M <= tau, alpha where M > tau.
Var compute_weights(const Var& masks, double tau, double alpha);

// Q^pos = sum_c A[i,c] P[c] / (sum_c A[i,c] + 1e-8) + Q^R.
Var spatial_prior(const Var& weights, const Tensor& position_table, const Var& refined);

// Q^seq = F(PE(1..k)) + Q'.
Var sequential_prior(const Mlp& f, const Tensor& index_code, const Var& local_queries);

// Learnable query init: the position code of N anchor cells spread over the
// grid, plus N(0, 0.1) noise, so each query starts with a spatial identity.
Tensor anchor_queries(const HpeConfig& cfg, const Tensor& position_table, SeededRng& rng);

struct HpeOutput {
  Var refined;      // Q^R [N x D]
  Var mask_logits;  // [N x HW]
  std::vector<Var> aux_mask_logits;  // after each mask former layer but the last
  Var masks;        // M = sigmoid(mask_logits)
  Var weights;      // A [N x HW]
  Var q_pos;        // [N x D]
  Var q_seq;        // [k x D]
};

class Hpe {
 public:
  Hpe(ParameterStore& store, const std::string& name, const HpeConfig& cfg, SeededRng& rng);

  // bev: [H x W x in_channels].
  HpeOutput forward(const Var& bev) const;
  Var pixel_embed(const Var& bev) const;
  // Mask former refinement of Q^L against the flattened pixel embedding.
  // Optionally collects the queries after every layer but the last.
  Var refine(const Var& pixel, std::vector<Var>* intermediate = nullptr) const;
  Var sequential() const;

  const HpeConfig& config() const { return cfg_; }
  const Tensor& position_table() const { return position_table_; }
  const Var& learnable_queries() const { return learnable_; }

 private:
  struct Layer {
    MultiHeadAttention cross;
    MultiHeadAttention self;
    LayerNorm norm_cross, norm_self, norm_ffn;
    Mlp ffn;
  };

  HpeConfig cfg_;
  Var learnable_;
  Linear pixel_proj_;
  std::vector<Layer> layers_;
  Var local_queries_;
  Mlp index_mlp_;
  Tensor position_table_;
  Tensor index_code_;
};

}  // namespace topofg
