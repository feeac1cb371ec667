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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "topofg/autograd.hpp"
#include "topofg/rng.hpp"

namespace topofg {

// Named trainable tensors plus their AdamW moments.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Var param;
    Tensor first_moment;
    Tensor second_moment;
  };

  // Registers a new trainable tensor; names must be unique.
  Var create(const std::string& name, Tensor init);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Var& get(const std::string& name) const;
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  void zero_grad();
  // Gradients of every parameter; zeros for parameters the loss never reached.
  std::map<std::string, Tensor> gradients() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  bool operator==(const AdamWConfig&) const = default;
};

// One AdamW update using each parameter's accumulated gradient. Throws
// std::domain_error naming the parameter if any gradient is non-finite, before
// touching any state.
void optimizer_step(ParameterStore& store, double lr, const AdamWConfig& cfg);

// Same update with an explicit gradient map; parameters absent from the map
// receive a zero gradient (decay and moment decay still apply).
void optimizer_step(ParameterStore& store, const std::map<std::string, Tensor>& grads,
                    double lr, const AdamWConfig& cfg);

// Rescales accumulated gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(ParameterStore& store, double max_norm);

// Constant learning rate after a linear warmup from 0.
double warmup_lr(double base_lr, std::uint64_t step, std::uint64_t warmup_steps);

// ---- layers ----------------------------------------------------------------

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, SeededRng& rng);

struct Linear {
  Var weight;  // [in x out]
  Var bias;    // [out]

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in,
         std::size_t out, SeededRng& rng, bool with_bias = true);
  Var operator()(const Var& x) const { return linear(x, weight, bias); }
};

struct LayerNorm {
  Var gain;
  Var bias;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim);
  Var operator()(const Var& x) const { return layer_norm(x, gain, bias); }
};

// Linear layers with ReLU between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& dims,
      SeededRng& rng);
  Var operator()(const Var& x) const;
};

// Multi-head attention with separate q/k/v/out projections of width dim.
struct MultiHeadAttention {
  Linear q, k, v, out;
  std::size_t heads = 1;
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, std::size_t dim,
                     std::size_t heads, SeededRng& rng);
  // query: [B x T x dim]; key, value: [B x S x dim].
  Var operator()(const Var& query, const Var& key, const Var& value,
                 const std::vector<int>& blocks = {}) const;
};

// ---- checkpoints -----------------------------------------------------------

// Binary container: magic "TOPOFGCK", u32 version, metadata strings, then
// per parameter its name, shape, AdamW moments and little-endian f64 payload.
struct CheckpointMeta {
  std::map<std::string, std::string> fields;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                     const CheckpointMeta& meta);

// Loads values (and optimizer state) into an existing store. Every stored
// parameter must exist in the store with an identical shape, and vice versa;
// mismatches throw before any value is modified.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParameterStore& store);

// Reads only the metadata block.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace topofg
