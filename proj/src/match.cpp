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

#include "topofg/match.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace topofg {

namespace {

// Shortest augmenting path with row/column potentials; rows <= cols.
// Returns the column assigned to each row.
std::vector<std::size_t> solve_rows_le_cols(const std::vector<double>& a, std::size_t n, std::size_t m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

void check_finite(const Var& v, const char* name) {
  for (double x : v.value().values()) {
    if (!std::isfinite(x)) throw std::domain_error(std::string("loss component ") + name + " is non-finite");
  }
}

}  // namespace

Assignment hungarian(const Tensor& cost) {
  if (cost.shape().size() != 2) throw ShapeError("hungarian", cost.shape(), "need a matrix");
  const std::size_t N = cost.dim(0), M = cost.dim(1);
  Assignment out;
  if (N == 0 || M == 0) return out;
  for (double c : cost.values()) {
    if (!std::isfinite(c)) throw std::invalid_argument("hungarian: cost matrix has non-finite entries");
  }
  if (N <= M) {
    std::vector<double> a(cost.values().begin(), cost.values().end());
    const auto cols = solve_rows_le_cols(a, N, M);
    for (std::size_t i = 0; i < N; ++i) out.pairs.emplace_back(i, cols[i]);
  } else {
    std::vector<double> a(N * M);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < M; ++j) a[j * N + i] = cost.at(i, j);
    const auto rows = solve_rows_le_cols(a, M, N);
    for (std::size_t j = 0; j < M; ++j) out.pairs.emplace_back(rows[j], j);
    std::sort(out.pairs.begin(), out.pairs.end());
  }
  for (const auto& [i, j] : out.pairs) out.total_cost += cost.at(i, j);
  return out;
}

Tensor matching_cost(const Tensor& pred, const Tensor& scores, const Tensor& gt, double w_reg,
                     double w_cls) {
  if (pred.shape().size() != 3 || gt.shape().size() != 3 || pred.dim(1) != gt.dim(1) ||
      pred.dim(2) != 2 || gt.dim(2) != 2) {
    throw ShapeError("matching_cost", pred.shape(), gt.shape());
  }
  if (scores.shape() != Shape{pred.dim(0)}) throw ShapeError("matching_cost(scores)", pred.shape(), scores.shape());
  const std::size_t N = pred.dim(0), M = gt.dim(0), k = pred.dim(1);
  Tensor c(Shape{N, M});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < M; ++j) {
      double l1 = 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        l1 += std::abs(pred.at(i, t, 0) - gt.at(j, t, 0)) + std::abs(pred.at(i, t, 1) - gt.at(j, t, 1));
      }
      c.at(i, j) = w_reg * l1 / static_cast<double>(k) + w_cls * (1.0 - scores[i]);
    }
  return c;
}

Tensor mask_matching_cost(const Tensor& probs, const Tensor& gt_masks) {
  if (probs.shape().size() != 2 || gt_masks.shape().size() != 2 || probs.dim(1) != gt_masks.dim(1)) {
    throw ShapeError("mask_matching_cost", probs.shape(), gt_masks.shape());
  }
  const std::size_t N = probs.dim(0), M = gt_masks.dim(0), HW = probs.dim(1);
  std::vector<double> psum(N, 0.0), tsum(M, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t c = 0; c < HW; ++c) psum[i] += probs.at(i, c);
  for (std::size_t j = 0; j < M; ++j)
    for (std::size_t c = 0; c < HW; ++c) tsum[j] += gt_masks.at(j, c);
  Tensor out(Shape{N, M});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < M; ++j) {
      double inter = 0.0;
      for (std::size_t c = 0; c < HW; ++c) inter += probs.at(i, c) * gt_masks.at(j, c);
      out.at(i, j) = 1.0 - (2.0 * inter + 1.0) / (psum[i] + tsum[j] + 1.0);
    }
  return out;
}

ScatteredTarget scatter_topology_supervision(const Tensor& a_gt, const Assignment& assignment,
                                             std::size_t n) {
  if (a_gt.shape().size() != 2 || a_gt.dim(0) != a_gt.dim(1)) {
    throw ShapeError("scatter_topology_supervision", a_gt.shape(), "need square");
  }
  const std::size_t m = a_gt.dim(0);
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> sigma(m, kNone);
  for (const auto& [pred, gt] : assignment.pairs) {
    if (pred >= n || gt >= m) throw std::invalid_argument("scatter_topology_supervision: assignment out of range");
    sigma[gt] = pred;
  }
  ScatteredTarget out{Tensor(Shape{n, n}), 0};
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b) {
      if (a_gt.at(a, b) == 0.0) continue;
      if (sigma[a] == kNone || sigma[b] == kNone) {
        ++out.dropped_edges;
        continue;
      }
      out.target.at(sigma[a], sigma[b]) = a_gt.at(a, b);
    }
  return out;
}

Tensor topology_weights(const Tensor& target, double pos_weight) {
  const std::size_t n = target.dim(0);
  Tensor w(target.shape(), 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) w.at(i, j) = 0.0;
      else if (target.at(i, j) > 0.5) w.at(i, j) = pos_weight;
    }
  return w;
}

LossBreakdown compute_losses(const LossInputs& in, const LossTargets& tg, const LossWeights& w) {
  const std::size_t N = in.class_logits.dim(0);
  std::vector<std::size_t> preds, gts;
  for (const auto& [p, g] : tg.assignment.pairs) {
    preds.push_back(p);
    gts.push_back(g);
  }
  LossBreakdown out;
  Var zero = constant(Tensor::scalar(0.0));

  Var lane = zero, mask = zero, mask_aux = zero;
  if (!preds.empty()) {
    const std::size_t P = preds.size(), k = in.keypoints.dim(1), HW = in.mask_logits.dim(1);
    Tensor gt_kp(Shape{P, k, 2});
    Tensor gt_mask(Shape{P, HW});
    for (std::size_t a = 0; a < P; ++a) {
      std::copy_n(tg.keypoints.data() + gts[a] * k * 2, k * 2, gt_kp.data() + a * k * 2);
      std::copy_n(tg.masks.data() + gts[a] * HW, HW, gt_mask.data() + a * HW);
    }
    // Mean over keypoints of the L1 norm of the 2-D error.
    lane = mean(abs(gather_rows(in.keypoints, preds) - constant(gt_kp))) * 2.0;
    Var logits = gather_rows(in.mask_logits, preds);
    mask = dice_loss(logits, gt_mask) + bce_with_logits(logits, gt_mask);
    for (const auto& aux : in.aux_mask_logits) {
      Var l = gather_rows(aux, preds);
      mask_aux = mask_aux + dice_loss(l, gt_mask) + bce_with_logits(l, gt_mask);
    }
  }

  Tensor cls_target(Shape{N}, 0.0);
  for (auto p : preds) cls_target[p] = 1.0;
  Var cls = bce_with_logits(in.class_logits, cls_target);

  Var topo = zero;
  if (N > 1) topo = bce_with_logits(in.sim_logits, tg.topology, topology_weights(tg.topology, w.topo_pos_weight));

  Var dn = zero;
  if (in.dn_sim_logits.defined() && in.dn_sim_logits.dim(0) > 1) {
    dn = bce_with_logits(in.dn_sim_logits, tg.dn_topology, topology_weights(tg.dn_topology, w.topo_pos_weight));
  }

  check_finite(lane, "lane_l1");
  check_finite(cls, "classification");
  check_finite(mask, "mask");
  check_finite(mask_aux, "mask_aux");
  check_finite(topo, "topology_vanilla");
  check_finite(dn, "topology_denoise");

  out.lane_l1 = lane.value().item();
  out.classification = cls.value().item();
  out.mask = mask.value().item();
  out.mask_aux = mask_aux.value().item();
  out.topology_vanilla = topo.value().item();
  out.topology_denoise = dn.value().item();
  out.total_var = lane * w.reg + cls * w.cls + (mask + mask_aux) * w.mask + topo * w.topo + dn * w.dn;
  out.total = out.total_var.value().item();
  return out;
}

}  // namespace topofg
