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

#include "topofg/rfd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace topofg {

Var init_fine_grained(const Var& q_pos, const Var& mapped_seq) { return outer_sum(q_pos, mapped_seq); }

ReferencePoints sample_reference_points(const Tensor& masks, std::size_t height, std::size_t width,
                                        std::size_t k, double tau_roi) {
  const std::size_t HW = height * width;
  if (masks.shape().size() != 2 || masks.dim(1) != HW) {
    throw ShapeError("sample_reference_points", masks.shape(), Shape{0, HW});
  }
  if (k < 1) throw std::invalid_argument("sample_reference_points: k must be >= 1");
  const std::size_t N = masks.dim(0);
  ReferencePoints out;
  out.points = Tensor(Shape{N, k, 2});
  auto cx = [&](std::size_t cell) { return (static_cast<double>(cell % width) + 0.5) / static_cast<double>(width); };
  auto cy = [&](std::size_t cell) { return (static_cast<double>(cell / width) + 0.5) / static_cast<double>(height); };
  auto fill = [&](std::size_t i, double x, double y) {
    for (std::size_t t = 0; t < k; ++t) {
      out.points.at(i, t, 0) = x;
      out.points.at(i, t, 1) = y;
    }
  };

  for (std::size_t i = 0; i < N; ++i) {
    const double* m = masks.data() + i * HW;
    std::vector<std::size_t> active;
    for (std::size_t c = 0; c < HW; ++c)
      if (m[c] > tau_roi) active.push_back(c);

    if (active.empty()) {
      double mass = 0.0, sx = 0.0, sy = 0.0;
      for (std::size_t c = 0; c < HW; ++c) {
        mass += m[c];
        sx += m[c] * cx(c);
        sy += m[c] * cy(c);
      }
      if (mass > 0.0) {
        fill(i, sx / mass, sy / mass);
      } else {
        fill(i, 0.5, 0.5);
        ++out.fallbacks;
      }
      continue;
    }

    double mx = 0.0, my = 0.0;
    for (auto c : active) {
      mx += cx(c);
      my += cy(c);
    }
    const double n = static_cast<double>(active.size());
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (auto c : active) {
      const double dx = cx(c) - mx, dy = cy(c) - my;
      sxx += dx * dx;
      sxy += dx * dy;
      syy += dy * dy;
    }
    // Principal axis of the 2x2 scatter, oriented towards +x (then +y).
    const double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
    double ax = std::cos(theta), ay = std::sin(theta);
    if (ax < -1e-12 || (std::abs(ax) <= 1e-12 && ay < 0.0)) {
      ax = -ax;
      ay = -ay;
    }
    std::vector<double> proj(active.size());
    for (std::size_t a = 0; a < active.size(); ++a) proj[a] = (cx(active[a]) - mx) * ax + (cy(active[a]) - my) * ay;
    std::vector<std::size_t> order(active.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return proj[a] < proj[b]; });

    const std::size_t last = active.size() - 1;
    for (std::size_t t = 0; t < k; ++t) {
      const double pos = k > 1 ? static_cast<double>(t) * static_cast<double>(last) / static_cast<double>(k - 1) : 0.0;
      const std::size_t lo = std::min(static_cast<std::size_t>(std::floor(pos)), last);
      const std::size_t hi = std::min(lo + 1, last);
      const double f = pos - static_cast<double>(lo);
      const std::size_t a = active[order[lo]], b = active[order[hi]];
      out.points.at(i, t, 0) = (1.0 - f) * cx(a) + f * cx(b);
      out.points.at(i, t, 1) = (1.0 - f) * cy(a) + f * cy(b);
    }
  }
  return out;
}

DecoderLayer::DecoderLayer(ParameterStore& store, const std::string& name, const RfdConfig& cfg,
                           SeededRng& rng)
    : cfg_(cfg),
      inter_(store, name + ".inter", cfg.d_model, cfg.heads, rng),
      intra_(store, name + ".intra", cfg.d_model, cfg.heads, rng),
      norm_inter_(store, name + ".norm_inter", cfg.d_model),
      norm_intra_(store, name + ".norm_intra", cfg.d_model),
      norm_cross_(store, name + ".norm_cross", cfg.d_model),
      norm_ffn_(store, name + ".norm_ffn", cfg.d_model),
      offsets_(store, name + ".offsets", cfg.d_model, cfg.heads * cfg.points * 2, rng),
      attn_weights_(store, name + ".attn_weights", cfg.d_model, cfg.heads * cfg.points, rng),
      value_proj_(store, name + ".value_proj", cfg.in_channels, cfg.d_model, rng),
      out_proj_(store, name + ".out_proj", cfg.d_model, cfg.d_model, rng),
      ffn_(store, name + ".ffn", {cfg.d_model, cfg.ffn_hidden, cfg.d_model}, rng) {
  if (cfg.d_model % cfg.heads != 0) throw std::invalid_argument("rfd: d_model must divide by heads");
  // Sampling points start on rays around the reference point, one ray per head.
  offsets_.weight.mutable_value().fill(0.0);
  auto& bias = offsets_.bias.mutable_value();
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(h) / static_cast<double>(cfg.heads);
    for (std::size_t p = 0; p < cfg.points; ++p) {
      bias[(h * cfg.points + p) * 2] = std::cos(angle) * static_cast<double>(p + 1);
      bias[(h * cfg.points + p) * 2 + 1] = std::sin(angle) * static_cast<double>(p + 1);
    }
  }
  attn_weights_.weight.mutable_value().fill(0.0);
  attn_weights_.bias.mutable_value().fill(0.0);
  head_scale_ = store.create(name + ".head_scale", Tensor(Shape{cfg.heads}, 1.0));
}

Var DecoderLayer::self_attention(const Var& queries, const std::vector<int>& blocks) const {
  const std::size_t N = queries.dim(0), k = queries.dim(1), D = queries.dim(2);
  Var tokens = reshape(mean_axis1(queries), {1, N, D});
  Var mixed = reshape(inter_(tokens, tokens, tokens, blocks), {N, D});
  Var q = norm_inter_(queries + repeat_axis1(mixed, k));
  return norm_intra_(q + intra_(q, q, q));
}

Var DecoderLayer::cross_attention(const Var& queries, const Var& bev, const Var& refs) const {
  const std::size_t N = queries.dim(0), k = queries.dim(1), D = queries.dim(2);
  const std::size_t P = N * k, h = cfg_.heads, p = cfg_.points;
  Var flat = reshape(queries, {P, D});
  Var off = reshape(offsets_(flat), {P, h, p, 2});
  Var w = softmax(reshape(attn_weights_(flat), {P, h, p}));
  Var loc = deformable_locations(refs, off, head_scale_, cfg_.grid_h, cfg_.grid_w);
  Var sampled = deformable_sample(value_proj_(bev), loc, w);
  return norm_cross_(queries + reshape(out_proj_(sampled), {N, k, D}));
}

Var DecoderLayer::feed_forward(const Var& queries) const { return norm_ffn_(queries + ffn_(queries)); }

Var DecoderLayer::operator()(const Var& queries, const Var& bev, const Var& refs,
                             const std::vector<int>& blocks) const {
  return feed_forward(cross_attention(self_attention(queries, blocks), bev, refs));
}

Rfd::Rfd(ParameterStore& store, const std::string& name, const RfdConfig& cfg, SeededRng& rng)
    : cfg_(cfg),
      seq_map_(store, name + ".seq_map", {cfg.d_model, cfg.d_model, cfg.d_model}, rng),
      ref_head_(store, name + ".ref_head", cfg.d_model, 2, rng),
      kp_head_(store, name + ".kp_head", {cfg.d_model, cfg.d_model, 2}, rng),
      cls_head_(store, name + ".cls_head", cfg.d_model, 1, rng) {
  if (cfg.layers < 1) throw std::invalid_argument("rfd: decoder needs at least one layer");
  if (cfg.k < 2) throw std::invalid_argument("rfd: k must be >= 2");
  if (!cfg.fine_grained_init) {
    Tensor table(Shape{cfg.num_queries, cfg.k, cfg.d_model});
    for (double& v : table.values()) v = rng.normal(0.0, 1.0);
    query_table_ = store.create(name + ".query_table", table);
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    layers_.emplace_back(store, name + ".layer" + std::to_string(l), cfg, rng);
  }
  // Keypoints start on their reference points.
  kp_head_.layers.back().weight.mutable_value().fill(0.0);
  kp_head_.layers.back().bias.mutable_value().fill(0.0);
}

Var Rfd::initial_queries(const Var& q_pos, const Var& q_seq) const {
  if (!cfg_.fine_grained_init) return query_table_;
  return init_fine_grained(q_pos, map_sequential(q_seq));
}

Var Rfd::learned_refs(const Var& initial) const {
  const std::size_t P = initial.dim(0) * initial.dim(1);
  return sigmoid(reshape(ref_head_(initial), {P, 2}));
}

Var Rfd::lane_head(const Var& queries, const Var& refs) const {
  const std::size_t N = queries.dim(0), k = queries.dim(1);
  return reshape(refs, {N, k, 2}) + kp_head_(queries);
}

Var Rfd::class_head(const Var& queries) const {
  return reshape(cls_head_(mean_axis1(queries)), {queries.dim(0)});
}

RfdOutput Rfd::decode(const Var& initial, const Var& bev, const Var& refs,
                      const std::vector<int>& blocks) const {
  if (refs.shape() != Shape{initial.dim(0) * initial.dim(1), 2}) {
    throw ShapeError("rfd.decode(refs)", initial.shape(), refs.shape());
  }
  RfdOutput out;
  Var q = initial;
  for (const auto& layer : layers_) q = layer(q, bev, refs, blocks);
  out.queries = q;
  out.refs = refs;
  out.keypoints = lane_head(q, refs);
  out.class_logits = class_head(q);
  return out;
}

}  // namespace topofg
