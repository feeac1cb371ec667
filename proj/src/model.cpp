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

#include "topofg/model.hpp"

#include <stdexcept>

namespace topofg {

HpeConfig hpe_config(const RunConfig& c) {
  HpeConfig h;
  h.in_channels = c.scene.feature_dim;
  h.d_model = c.d_model;
  h.num_queries = c.num_queries;
  h.k = c.scene.k;
  h.layers = c.mask_layers;
  h.heads = c.heads;
  h.ffn_hidden = c.ffn_hidden;
  h.grid_h = c.scene.grid_h;
  h.grid_w = c.scene.grid_w;
  h.tau = c.tau;
  h.alpha = c.alpha;
  h.local_prior = c.lp;
  h.global_prior = c.gp;
  return h;
}

RfdConfig rfd_config(const RunConfig& c) {
  RfdConfig r;
  r.in_channels = c.scene.feature_dim;
  r.d_model = c.d_model;
  r.k = c.scene.k;
  r.layers = c.decoder_layers;
  r.heads = c.heads;
  r.points = c.points;
  r.ffn_hidden = c.ffn_hidden;
  r.grid_h = c.scene.grid_h;
  r.grid_w = c.scene.grid_w;
  r.tau_roi = c.tau_roi;
  r.fine_grained_init = c.fqi;
  r.sampled_refs = c.srp;
  r.num_queries = c.num_queries;
  return r;
}

TopoFgModel::TopoFgModel(const RunConfig& cfg) : cfg_(cfg) {
  validate(cfg);
  SeededRng rng(cfg.seed);
  SeededRng hpe_rng = rng.fork(1), rfd_rng = rng.fork(2), sim_rng = rng.fork(3);
  hpe_ = std::make_unique<Hpe>(store_, "hpe", hpe_config(cfg), hpe_rng);
  rfd_ = std::make_unique<Rfd>(store_, "rfd", rfd_config(cfg), rfd_rng);
  sim_ = std::make_unique<SimilarityHead>(store_, "rbtr.similarity", cfg.d_model, cfg.d_model, sim_rng);
}

ForwardResult TopoFgModel::forward(const BevGrid& bev, const DenoisingBatch* dn) const {
  const auto& s = cfg_.scene;
  if (bev.height != s.grid_h || bev.width != s.grid_w || bev.channels != s.feature_dim) {
    throw std::invalid_argument("model: BEV grid " + std::to_string(bev.height) + "x" + std::to_string(bev.width) + "x" +
                                std::to_string(bev.channels) + " does not match the configured " +
                                std::to_string(s.grid_h) + "x" + std::to_string(s.grid_w) + "x" +
                                std::to_string(s.feature_dim));
  }
  ForwardResult r;
  const Var features = constant(bev.features);
  r.hpe = hpe_->forward(features);
  const std::size_t N = cfg_.num_queries, k = s.k;

  Var initial = rfd_->initial_queries(r.hpe.q_pos, r.hpe.q_seq);
  Var refs;
  if (cfg_.srp) {
    auto sampled = sample_reference_points(r.hpe.masks.value(), s.grid_h, s.grid_w, k, cfg_.tau_roi);
    r.ref_fallbacks = sampled.fallbacks;
    refs = constant(Tensor(Shape{N * k, 2}, std::vector<double>(sampled.points.values().begin(), sampled.points.values().end())));
  } else {
    refs = rfd_->learned_refs(initial);
  }

  r.n_vanilla = N;
  std::vector<int> blocks;
  if (dn != nullptr && dn->size() > 0) {
    r.n_denoise = dn->size();
    Var dn_initial = init_fine_grained(constant(dn->centroid_pe), rfd_->map_sequential(r.hpe.q_seq));
    initial = concat_rows({initial, dn_initial});
    refs = concat_rows({refs, constant(dn->refs)});
    blocks.assign(N, 0);
    blocks.insert(blocks.end(), dn->blocks.begin(), dn->blocks.end());
  }
  r.joint = rfd_->decode(initial, features, refs, blocks);

  auto queries = split_queries(r.joint.queries, r.n_vanilla, r.n_denoise);
  auto keypoints = split_queries(r.joint.keypoints, r.n_vanilla, r.n_denoise);
  auto logits = split_queries(r.joint.class_logits, r.n_vanilla, r.n_denoise);
  r.queries = queries.vanilla;
  r.keypoints = keypoints.vanilla;
  r.class_logits = logits.vanilla;

  auto boundary = [&](const Var& q) { return cfg_.btr ? extract_boundary(q) : pooled_instance_features(q); };
  const auto b = boundary(r.queries);
  r.sim_logits = sim_->logits(b.end, b.start);
  if (r.n_denoise > 0) {
    const auto bd = boundary(queries.denoise);
    r.dn_sim_logits = sim_->logits(bd.end, bd.start);
  }
  return r;
}

Prediction TopoFgModel::predict(const BevGrid& bev) const {
  NoGradGuard no_grad;
  const auto r = forward(bev);
  const std::size_t N = cfg_.num_queries, k = cfg_.scene.k;
  Prediction p;
  p.keypoints = Tensor(Shape{N, k, 2});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t t = 0; t < k; ++t) {
      const Point2 m = bev.denormalize({r.keypoints.value().at(i, t, 0), r.keypoints.value().at(i, t, 1)});
      p.keypoints.at(i, t, 0) = m.x;
      p.keypoints.at(i, t, 1) = m.y;
    }
  p.scores = sigmoid(r.class_logits).value();
  p.similarity = sigmoid(r.sim_logits).value();
  p.geometric = cfg_.geo ? geometric_topology(p.keypoints, cfg_.lambda) : Tensor(Shape{N, N}, 0.0);
  auto decision = combine_and_decide(p.similarity, p.geometric, cfg_.theta);
  p.combined = std::move(decision.combined);
  p.edges = std::move(decision.edges);
  p.masks = r.hpe.masks.value();
  p.refs = r.joint.refs.value();
  return p;
}

ScenePrediction Prediction::as_scene_prediction() const {
  ScenePrediction s;
  const std::size_t N = keypoints.dim(0), k = keypoints.dim(1);
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<Point2> lane;
    for (std::size_t t = 0; t < k; ++t) lane.push_back({keypoints.at(i, t, 0), keypoints.at(i, t, 1)});
    s.lanes.push_back(std::move(lane));
    s.scores.push_back(scores[i]);
  }
  s.edge_scores = combined;
  return s;
}

ScenePrediction oracle_prediction(const SyntheticScene& scene) {
  ScenePrediction s;
  for (const auto& lane : scene.lanes) {
    s.lanes.push_back(lane.points);
    s.scores.push_back(1.0);
  }
  s.edge_scores = scene.adjacency;
  return s;
}

SceneTruth scene_truth(const SyntheticScene& scene) {
  SceneTruth t;
  for (const auto& lane : scene.lanes) t.lanes.push_back(lane.points);
  t.adjacency = scene.adjacency;
  return t;
}

}  // namespace topofg
