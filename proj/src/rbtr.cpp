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

#include "topofg/rbtr.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace topofg {

namespace {

std::vector<std::size_t> slot_rows(std::size_t n, std::size_t k, std::size_t t) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i * k + t;
  return rows;
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> r(end - begin);
  std::iota(r.begin(), r.end(), begin);
  return r;
}

}  // namespace

BoundaryFeatures extract_boundary(const Var& queries) {
  if (queries.shape().size() != 3 || queries.dim(1) < 2) {
    throw ShapeError("extract_boundary", queries.shape(), "need [N x k x D] with k >= 2");
  }
  const std::size_t N = queries.dim(0), k = queries.dim(1);
  Var flat = reshape(queries, {N * k, queries.dim(2)});
  return {gather_rows(flat, slot_rows(N, k, 0)), gather_rows(flat, slot_rows(N, k, k - 1))};
}

BoundaryFeatures pooled_instance_features(const Var& queries) {
  Var pooled = mean_axis1(queries);
  return {pooled, pooled};
}

SimilarityHead::SimilarityHead(ParameterStore& store, const std::string& name, std::size_t dim,
                               std::size_t hidden, SeededRng& rng)
    : dim_(dim),
      first_(store, name + ".first", 2 * dim, hidden, rng),
      second_(store, name + ".second", hidden, 1, rng) {}

Var SimilarityHead::logits(const Var& f_end, const Var& f_start) const {
  if (f_end.shape() != f_start.shape() || f_end.shape().size() != 2 || f_end.dim(1) != dim_) {
    throw ShapeError("similarity_topology", f_end.shape(), f_start.shape());
  }
  const std::size_t N = f_end.dim(0);
  // concat(a, b) W = a W_top + b W_bottom, so every pair costs one add.
  Var w_end = gather_rows(first_.weight, range(0, dim_));
  Var w_start = gather_rows(first_.weight, range(dim_, 2 * dim_));
  Var a = linear(f_end, w_end, first_.bias);
  Var b = linear(f_start, w_start, Var());
  Var hidden = relu(outer_sum(a, b));
  return reshape(second_(hidden), {N, N});
}

Tensor geometric_topology(const Tensor& keypoints, double lambda) {
  if (keypoints.shape().size() != 3 || keypoints.dim(2) != 2 || keypoints.dim(1) < 1) {
    throw ShapeError("geometric_topology", keypoints.shape(), "need [N x k x 2]");
  }
  if (!(lambda > 0.0)) throw std::invalid_argument("geometric_topology: lambda must be > 0");
  const std::size_t N = keypoints.dim(0), k = keypoints.dim(1);
  Tensor g(Shape{N, N});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      const double dx = keypoints.at(i, k - 1, 0) - keypoints.at(j, 0, 0);
      const double dy = keypoints.at(i, k - 1, 1) - keypoints.at(j, 0, 1);
      g.at(i, j) = std::exp(-std::hypot(dx, dy) / lambda);
    }
  return g;
}

TopologyDecision combine_and_decide(const Tensor& similarity, const Tensor& geometric, double theta) {
  if (similarity.shape() != geometric.shape() || similarity.shape().size() != 2 ||
      similarity.dim(0) != similarity.dim(1)) {
    throw ShapeError("combine_and_decide", similarity.shape(), geometric.shape());
  }
  const std::size_t N = similarity.dim(0);
  TopologyDecision d{Tensor(Shape{N, N}), Tensor(Shape{N, N})};
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      d.combined.at(i, j) = similarity.at(i, j) + geometric.at(i, j);
      d.edges.at(i, j) = (i != j && d.combined.at(i, j) >= theta) ? 1.0 : 0.0;
    }
  return d;
}

Tensor block_diagonal(const Tensor& a, std::size_t groups) {
  if (a.shape().size() != 2 || a.dim(0) != a.dim(1)) throw ShapeError("block_diagonal", a.shape(), "need square");
  const std::size_t n = a.dim(0), m = n * groups;
  Tensor out(Shape{m, m});
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out.at(g * n + i, g * n + j) = a.at(i, j);
  return out;
}

DenoisingBatch build_denoising_batch(const std::vector<LaneInstance>& lanes, const Tensor& adjacency,
                                     std::size_t groups, double sigma, const BevGrid& grid,
                                     std::size_t dim, SeededRng& rng) {
  if (groups < 1) throw std::invalid_argument("build_denoising_batch: need at least one group");
  if (lanes.empty()) throw std::invalid_argument("build_denoising_batch: need at least one lane");
  if (adjacency.shape() != Shape{lanes.size(), lanes.size()}) {
    throw ShapeError("build_denoising_batch", adjacency.shape(), Shape{lanes.size(), lanes.size()});
  }
  const std::size_t n = lanes.size(), k = lanes[0].points.size();
  DenoisingBatch b;
  b.groups = groups;
  b.n_gt = n;
  b.refs = Tensor(Shape{n * groups * k, 2});
  b.centroid_pe = Tensor(Shape{n * groups, dim});
  b.supervision = block_diagonal(adjacency, groups);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t j = 0; j < n; ++j) {
      if (lanes[j].points.size() != k) throw std::invalid_argument("build_denoising_batch: lanes differ in k");
      const std::size_t inst = g * n + j;
      Point2 centroid;
      for (std::size_t t = 0; t < k; ++t) {
        Point2 p = lanes[j].points[t];
        if (sigma > 0.0) {
          p.x += rng.normal(0.0, sigma);
          p.y += rng.normal(0.0, sigma);
        }
        centroid.x += p.x / static_cast<double>(k);
        centroid.y += p.y / static_cast<double>(k);
        const Point2 uv = grid.normalize(p);
        b.refs.at(inst * k + t, 0) = uv.x;
        b.refs.at(inst * k + t, 1) = uv.y;
      }
      const Point2 uv = grid.normalize(centroid);
      const auto code = sine_cosine_2d(uv.x, uv.y, dim);
      std::copy(code.begin(), code.end(), b.centroid_pe.data() + inst * dim);
      b.blocks.push_back(static_cast<int>(g) + 1);
    }
  return b;
}

QuerySplit split_queries(const Var& joint, std::size_t n_vanilla, std::size_t n_denoise) {
  if (joint.shape().empty() || joint.dim(0) != n_vanilla + n_denoise) {
    throw std::invalid_argument("split_queries: " + std::to_string(n_vanilla) + " + " +
                                std::to_string(n_denoise) + " does not partition " +
                                (joint.shape().empty() ? std::string("a scalar")
                                                       : std::to_string(joint.dim(0)) + " rows"));
  }
  QuerySplit s;
  s.vanilla = gather_rows(joint, range(0, n_vanilla));
  if (n_denoise > 0) s.denoise = gather_rows(joint, range(n_vanilla, n_vanilla + n_denoise));
  return s;
}

}  // namespace topofg
