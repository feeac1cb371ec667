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

// Region-focused decoder.
//
// Each lane instance owns k fine-grained queries, one per keypoint. A decoder
// layer runs inter-instance attention over mean-pooled instance tokens,
// intra-instance attention along each lane, deformable cross-attention to the
// BEV features around the query's reference point, and a feed-forward block.
// Reference points come from the predicted lane masks: active cells are
// ordered along their principal axis and cut into k quantiles.

#pragma once

#include <string>
#include <vector>

#include "topofg/nn.hpp"

namespace topofg {

struct RfdConfig {
  std::size_t in_channels = 32;
  std::size_t d_model = 32;
  std::size_t k = 11;
  std::size_t layers = 6;
  std::size_t heads = 4;
  std::size_t points = 4;
  std::size_t ffn_hidden = 64;
  std::size_t grid_h = 32;
  std::size_t grid_w = 32;
  double tau_roi = 0.3;
  bool fine_grained_init = true;
  bool sampled_refs = true;
  std::size_t num_queries = 20;  // only used when fine_grained_init is off
};

// Q^F0[i,t] = Q^pos[i] + mapped_seq[t]: [N x D], [k x D] -> [N x k x D].
Var init_fine_grained(const Var& q_pos, const Var& mapped_seq);

struct ReferencePoints {
  Tensor points;              // [N x k x 2], normalised (x, y)
  std::size_t fallbacks = 0;  // instances with zero mask mass
};

// masks: [N x (H*W)] probabilities, row-major cells.
ReferencePoints sample_reference_points(const Tensor& masks, std::size_t height, std::size_t width,
                                        std::size_t k, double tau_roi);

class DecoderLayer {
 public:
  DecoderLayer(ParameterStore& store, const std::string& name, const RfdConfig& cfg, SeededRng& rng);

  // queries: [N x k x D]; blocks: one id per instance (may be empty).
  Var self_attention(const Var& queries, const std::vector<int>& blocks) const;
  // bev: [H x W x in_channels]; refs: [(N*k) x 2].
  Var cross_attention(const Var& queries, const Var& bev, const Var& refs) const;
  Var feed_forward(const Var& queries) const;
  Var operator()(const Var& queries, const Var& bev, const Var& refs,
                 const std::vector<int>& blocks) const;

 private:
  RfdConfig cfg_;
  MultiHeadAttention inter_, intra_;
  LayerNorm norm_inter_, norm_intra_, norm_cross_, norm_ffn_;
  Linear offsets_, attn_weights_, value_proj_, out_proj_;
  Var head_scale_;
  Mlp ffn_;
};

struct RfdOutput {
  Var queries;       // final Q^F [N x k x D]
  Var refs;          // [(N*k) x 2]
  Var keypoints;     // normalised [N x k x 2]
  Var class_logits;  // [N]
};

class Rfd {
 public:
  Rfd(ParameterStore& store, const std::string& name, const RfdConfig& cfg, SeededRng& rng);

  // F in Q^F0 = Q^pos + F(Q^seq).
  Var map_sequential(const Var& q_seq) const { return seq_map_(q_seq); }
  // Initial queries for instances whose reference points are not sampled from
  // masks: a learned table when fine-grained init is off.
  Var initial_queries(const Var& q_pos, const Var& q_seq) const;
  // Learned reference points used when mask sampling is off.
  Var learned_refs(const Var& initial) const;

  RfdOutput decode(const Var& initial, const Var& bev, const Var& refs,
                   const std::vector<int>& blocks = {}) const;

  // Lane head: keypoint t of instance i from query (i, t) only.
  Var lane_head(const Var& queries, const Var& refs) const;
  Var class_head(const Var& queries) const;

  const RfdConfig& config() const { return cfg_; }
  const std::vector<DecoderLayer>& layers() const { return layers_; }

 private:
  RfdConfig cfg_;
  Mlp seq_map_;
  Var query_table_;
  Linear ref_head_;
  std::vector<DecoderLayer> layers_;
  Mlp kp_head_;
  Linear cls_head_;
};

}  // namespace topofg
