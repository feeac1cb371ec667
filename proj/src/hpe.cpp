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

#include "topofg/hpe.hpp"

#include <cmath>
#include <stdexcept>

#include "topofg/scene.hpp"

namespace topofg {

Tensor bev_position_table(std::size_t height, std::size_t width, std::size_t dim) {
  Tensor out(Shape{height * width, dim});
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const auto code = sine_cosine_2d((static_cast<double>(c) + 0.5) / static_cast<double>(width),
                                       (static_cast<double>(r) + 0.5) / static_cast<double>(height), dim);
      std::copy(code.begin(), code.end(), out.data() + (r * width + c) * dim);
    }
  return out;
}

Tensor index_encoding(std::size_t k, std::size_t dim, double temperature) {
  if (dim % 2 != 0) throw std::invalid_argument("index_encoding: dim must be even");
  Tensor out(Shape{k, dim});
  for (std::size_t t = 0; t < k; ++t) {
    const double pos = static_cast<double>(t + 1);
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double w = std::pow(temperature, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      out.at(t, 2 * i) = std::sin(pos * w);
      out.at(t, 2 * i + 1) = std::cos(pos * w);
    }
  }
  return out;
}

Var mask_probabilities(const Var& queries, const Var& pixel_embed) {
  return sigmoid(matmul_nt(queries, pixel_embed));
}

Var compute_weights(const Var& masks, double tau, double alpha) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("compute_weights: tau must lie in (0,1)");
  if (!(alpha > 0.0)) throw std::invalid_argument("compute_weights: alpha must be > 0");
  return threshold_weights(masks, tau, alpha);
}

Var spatial_prior(const Var& weights, const Tensor& position_table, const Var& refined) {
  return weighted_mean_rows(weights, position_table) + refined;
}

Var sequential_prior(const Mlp& f, const Tensor& index_code, const Var& local_queries) {
  return f(constant(index_code)) + local_queries;
}

Tensor anchor_queries(const HpeConfig& cfg, const Tensor& position_table, SeededRng& rng) {
  const std::size_t N = cfg.num_queries, D = cfg.d_model;
  // Near-square grid of anchors, cols >= rows.
  std::size_t rows = 1;
  while ((rows + 1) * (rows + 1) <= N) ++rows;
  const std::size_t cols = (N + rows - 1) / rows;
  Tensor out(Shape{N, D});
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t ar = i / cols, ac = i % cols;
    const std::size_t r = std::min(cfg.grid_h - 1, (2 * ar + 1) * cfg.grid_h / (2 * rows));
    const std::size_t c = std::min(cfg.grid_w - 1, (2 * ac + 1) * cfg.grid_w / (2 * cols));
    for (std::size_t d = 0; d < D; ++d) out.at(i, d) = position_table.at(r * cfg.grid_w + c, d) + rng.normal(0.0, 0.1);
  }
  return out;
}

Hpe::Hpe(ParameterStore& store, const std::string& name, const HpeConfig& cfg, SeededRng& rng)
    : cfg_(cfg) {
  if (cfg.layers < 1) throw std::invalid_argument("hpe: mask former needs at least one layer");
  if (cfg.k < 2) throw std::invalid_argument("hpe: k must be >= 2");
  const std::size_t D = cfg.d_model;
  position_table_ = bev_position_table(cfg.grid_h, cfg.grid_w, D);
  learnable_ = store.create(name + ".learnable_queries", anchor_queries(cfg, position_table_, rng));
  pixel_proj_ = Linear(store, name + ".pixel_proj", cfg.in_channels, D, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    layers_.push_back({MultiHeadAttention(store, p + ".cross", D, cfg.heads, rng),
                       MultiHeadAttention(store, p + ".self", D, cfg.heads, rng),
                       LayerNorm(store, p + ".norm_cross", D), LayerNorm(store, p + ".norm_self", D),
                       LayerNorm(store, p + ".norm_ffn", D),
                       Mlp(store, p + ".ffn", {D, cfg.ffn_hidden, D}, rng)});
  }
  Tensor local(Shape{cfg.k, D});
  for (double& v : local.values()) v = rng.normal(0.0, 1.0);
  local_queries_ = store.create(name + ".local_queries", local);
  index_mlp_ = Mlp(store, name + ".index_mlp", {D, D, D}, rng);
  index_code_ = index_encoding(cfg.k, D);
}

Var Hpe::pixel_embed(const Var& bev) const {
  const std::size_t HW = cfg_.grid_h * cfg_.grid_w;
  if (bev.shape() != Shape{cfg_.grid_h, cfg_.grid_w, cfg_.in_channels}) {
    throw ShapeError("hpe.pixel_embed", bev.shape(), Shape{cfg_.grid_h, cfg_.grid_w, cfg_.in_channels});
  }
  return pixel_proj_(reshape(bev, {HW, cfg_.in_channels})) + constant(position_table_);
}

Var Hpe::refine(const Var& pixel, std::vector<Var>* intermediate) const {
  const std::size_t N = cfg_.num_queries, D = cfg_.d_model, HW = pixel.dim(0);
  Var memory_v = reshape(pixel, {1, HW, D});
  Var memory_k = reshape(pixel, {1, HW, D});
  Var q = reshape(learnable_, {1, N, D});
  for (const auto& layer : layers_) {
    q = layer.norm_cross(q + layer.cross(q, memory_k, memory_v));
    q = layer.norm_self(q + layer.self(q, q, q));
    q = layer.norm_ffn(q + layer.ffn(q));
    if (intermediate != nullptr && &layer != &layers_.back()) intermediate->push_back(reshape(q, {N, D}));
  }
  return reshape(q, {N, D});
}

Var Hpe::sequential() const {
  if (!cfg_.local_prior) return local_queries_;
  return sequential_prior(index_mlp_, index_code_, local_queries_);
}

HpeOutput Hpe::forward(const Var& bev) const {
  HpeOutput out;
  const Var pixel = pixel_embed(bev);
  std::vector<Var> intermediate;
  out.refined = refine(pixel, &intermediate);
  out.mask_logits = matmul_nt(out.refined, pixel);
  for (const auto& q : intermediate) out.aux_mask_logits.push_back(matmul_nt(q, pixel));
  out.masks = sigmoid(out.mask_logits);
  if (cfg_.global_prior) {
    out.weights = compute_weights(out.masks, cfg_.tau, cfg_.alpha);
    out.q_pos = spatial_prior(out.weights, position_table_, out.refined);
  } else {
    out.q_pos = out.refined;
  }
  out.q_seq = sequential();
  return out;
}

}  // namespace topofg
