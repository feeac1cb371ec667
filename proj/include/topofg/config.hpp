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

// Run configuration and its flat key = value text form:
//
//   seed = 7
//   [model]
//   d_model = 32
//   [toggles]
//   btr = true
//
// Numbers are written with 17 significant digits so parse(serialize(c)) == c.

#pragma once

#include <cstdint>
#include <string>

#include "topofg/match.hpp"
#include "topofg/nn.hpp"
#include "topofg/scene.hpp"

namespace topofg {

struct RunConfig {
  std::uint64_t seed = 1;
  GenerationParams scene;
  std::size_t train_scenes = 64;
  std::size_t val_scenes = 16;

  // Model dimensions; H, W, k and the input width come from `scene`.
  std::size_t d_model = 32;
  std::size_t num_queries = 20;
  std::size_t decoder_layers = 6;
  std::size_t mask_layers = 3;
  std::size_t heads = 4;
  std::size_t points = 4;
  std::size_t ffn_hidden = 64;
  double tau = 0.3;
  double alpha = 1.0;
  double tau_roi = 0.3;

  // Ablation switches.
  bool lp = true;   // local sequential prior
  bool gp = true;   // global spatial prior
  bool fqi = true;  // fine-grained query initialisation
  bool srp = true;  // mask-sampled reference points
  bool btr = true;  // boundary-point topology features
  bool dtr = true;  // denoised topology reasoning
  bool geo = true;  // geometric topology term

  std::size_t dn_groups = 5;
  double dn_sigma = 0.5;
  double lambda = 2.0;
  double theta = 1.0;

  LossWeights loss;

  double lr = 1e-3;
  std::size_t warmup_steps = 100;
  double grad_clip = 1.0;
  AdamWConfig adam;
  std::size_t epochs = 20;
  std::size_t checkpoint_every = 0;  // steps; 0 = only the final checkpoint

  std::string dataset_dir = "data";
  std::string out_dir = "runs";

  bool operator==(const RunConfig&) const = default;

  bool denoising() const { return dtr && dn_groups > 0; }
};

// Throws std::invalid_argument on inconsistent settings.
void validate(const RunConfig& cfg);

std::string serialize_config(const RunConfig& cfg);
// Unknown keys, bad values and malformed lines throw ParseError with the byte
// offset of the offending line.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

// 16 hex digits of FNV-1a over the serialised form.
std::string config_hash(const RunConfig& cfg);

}  // namespace topofg
