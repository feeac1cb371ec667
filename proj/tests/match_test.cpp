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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "topofg/match.hpp"

namespace topofg {
namespace {

using testing::brute_force_cost;
using testing::random_tensor;

TEST(Hungarian, TwoByTwo) {
  const auto a = hungarian(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3, 1}));
  ASSERT_EQ(a.pairs.size(), 2u);
  EXPECT_EQ(a.pairs[0], (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(a.pairs[1], (std::pair<std::size_t, std::size_t>{1, 1}));
  EXPECT_DOUBLE_EQ(a.total_cost, 2.0);
}

TEST(Hungarian, ZeroDiagonalGivesIdentity) {
  Tensor c(Shape{5, 5}, 1.0);
  for (std::size_t i = 0; i < 5; ++i) c.at(i, i) = 0.0;
  const auto a = hungarian(c);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.pairs[i], (std::pair<std::size_t, std::size_t>{i, i}));
  EXPECT_EQ(a.total_cost, 0.0);
}

TEST(Hungarian, MatchesPermutationEnumeration) {
  SeededRng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 7));
    const std::size_t m = static_cast<std::size_t>(rng.uniform_int(1, 7));
    Tensor c(Shape{n, m});
    // Integer costs make the optimum exactly representable.
    for (double& v : c.values()) v = static_cast<double>(rng.uniform_int(0, 50));
    const auto a = hungarian(c);
    ASSERT_EQ(a.pairs.size(), std::min(n, m));
    double s = 0.0;
    std::vector<bool> used_p(n), used_g(m);
    for (auto [p, g] : a.pairs) {
      ASSERT_FALSE(used_p[p]);
      ASSERT_FALSE(used_g[g]);
      used_p[p] = used_g[g] = true;
      s += c.at(p, g);
    }
    EXPECT_EQ(s, a.total_cost);
    EXPECT_EQ(a.total_cost, brute_force_cost(c)) << "trial " << trial << " " << n << "x" << m;
  }
}

TEST(Hungarian, EdgeCases) {
  EXPECT_TRUE(hungarian(Tensor(Shape{0, 3})).pairs.empty());
  EXPECT_TRUE(hungarian(Tensor(Shape{4, 0})).pairs.empty());
  Tensor bad(Shape{2, 2}, 1.0);
  bad.at(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(hungarian(bad), std::invalid_argument);
}

TEST(MatchingCost, PerfectPredictionIsFreeOnTheDiagonal) {
  SeededRng rng(3);
  const Tensor gt = random_tensor({3, 4, 2}, rng, 0.0, 1.0);
  const Tensor c = matching_cost(gt, Tensor(Shape{3}, 1.0), gt, 2.0, 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(c.at(i, i), 0.0);
}

TEST(MatchingCost, TranslationRaisesOnlyItsRow) {
  SeededRng rng(4);
  const Tensor gt = random_tensor({3, 5, 2}, rng, 0.2, 0.8);
  Tensor pred = gt;
  const Tensor scores(Shape{3}, 0.7);
  const Tensor before = matching_cost(pred, scores, gt, 2.0, 1.0);
  for (std::size_t t = 0; t < 5; ++t) {
    pred.at(1, t, 0) += 0.01;
    pred.at(1, t, 1) -= 0.02;
  }
  const Tensor after = matching_cost(pred, scores, gt, 2.0, 1.0);
  EXPECT_NEAR(after.at(1, 1) - before.at(1, 1), 2.0 * 0.03, 1e-12);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(after.at(0, j), before.at(0, j));
    EXPECT_EQ(after.at(2, j), before.at(2, j));
  }
}

TEST(MatchingCost, MatchesLoopOracle) {
  SeededRng rng(5);
  const Tensor pred = random_tensor({4, 3, 2}, rng), gt = random_tensor({2, 3, 2}, rng);
  const Tensor scores = random_tensor({4}, rng, 0.0, 1.0);
  const Tensor c = matching_cost(pred, scores, gt, 1.5, 0.5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double l1 = 0.0;
      for (std::size_t t = 0; t < 3; ++t)
        l1 += std::abs(pred.at(i, t, 0) - gt.at(j, t, 0)) + std::abs(pred.at(i, t, 1) - gt.at(j, t, 1));
      EXPECT_NEAR(c.at(i, j), 1.5 * l1 / 3.0 + 0.5 * (1.0 - scores[i]), 1e-12);
    }
}

Assignment pairs(std::vector<std::pair<std::size_t, std::size_t>> p) {
  Assignment a;
  std::sort(p.begin(), p.end());
  a.pairs = std::move(p);
  return a;
}

TEST(MaskMatchingCost, SmoothedDiceExamples) {
  const Tensor gt(Shape{2, 4}, std::vector<double>{1, 1, 0, 0, 0, 0, 1, 1});
  const Tensor probs(Shape{2, 4}, std::vector<double>{1, 1, 0, 0, 0.5, 0.5, 0.5, 0.5});
  const Tensor c = mask_matching_cost(probs, gt);
  EXPECT_DOUBLE_EQ(c.at(0, 0), 1.0 - 5.0 / 5.0);
  EXPECT_DOUBLE_EQ(c.at(0, 1), 1.0 - 1.0 / 5.0);
  EXPECT_DOUBLE_EQ(c.at(1, 0), 1.0 - 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(c.at(1, 1), c.at(1, 0));
  EXPECT_THROW(mask_matching_cost(probs, Tensor(Shape{2, 3})), ShapeError);
}

TEST(Scatter, IdentityAssignmentCopiesAdjacency) {
  const Tensor a(Shape{3, 3}, std::vector<double>{0, 1, 1, 0, 0, 0, 0, 0, 0});
  EXPECT_EQ(scatter_topology_supervision(a, pairs({{0, 0}, {1, 1}, {2, 2}}), 3).target, a);
}

TEST(Scatter, SwappedAssignmentMovesTheEdge) {
  const Tensor a(Shape{2, 2}, std::vector<double>{0, 1, 0, 0});
  const Tensor t = scatter_topology_supervision(a, pairs({{1, 0}, {0, 1}}), 2).target;
  EXPECT_EQ(t.at(1, 0), 1.0);
  EXPECT_EQ(t.at(0, 1), 0.0);
}

TEST(Scatter, HandExample) {
  const Tensor a(Shape{2, 2}, std::vector<double>{0, 1, 0, 0});
  const auto s = scatter_topology_supervision(a, pairs({{2, 0}, {0, 1}}), 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(s.target.at(i, j), (i == 2 && j == 0) ? 1.0 : 0.0);
  EXPECT_EQ(s.dropped_edges, 0u);
}

TEST(Scatter, UnmatchedLanesDropTheirEdges) {
  const Tensor a(Shape{3, 3}, std::vector<double>{0, 1, 0, 0, 0, 1, 0, 0, 0});
  const auto s = scatter_topology_supervision(a, pairs({{0, 0}, {1, 1}}), 2);
  EXPECT_EQ(s.dropped_edges, 1u);
  EXPECT_EQ(s.target.at(0, 1), 1.0);
}

struct Problem {
  LossInputs in;
  LossTargets tg;
};

// Three predictions for two GT lanes; prediction 2 is unmatched.
Problem perfect_problem() {
  SeededRng rng(6);
  Problem p;
  const Tensor gt = random_tensor({2, 4, 2}, rng, 0.1, 0.9);
  Tensor kp(Shape{3, 4, 2}, 0.5);
  std::copy(gt.values().begin(), gt.values().end(), kp.data());
  p.in.keypoints = Var(kp, true);
  p.in.class_logits = Var(Tensor(Shape{3}, std::vector<double>{40, 40, -40}), true);
  Tensor masks(Shape{2, 9}, 0.0);
  masks.at(0, 1) = masks.at(0, 2) = 1.0;
  masks.at(1, 5) = 1.0;
  Tensor mask_logits(Shape{3, 9}, -40.0);
  for (std::size_t c = 0; c < 9; ++c) {
    mask_logits.at(0, c) = masks.at(0, c) > 0 ? 40.0 : -40.0;
    mask_logits.at(1, c) = masks.at(1, c) > 0 ? 40.0 : -40.0;
  }
  p.in.mask_logits = Var(mask_logits, true);
  Tensor sim(Shape{3, 3}, -40.0);
  sim.at(0, 1) = 40.0;
  p.in.sim_logits = Var(sim, true);
  p.tg.keypoints = gt;
  p.tg.masks = masks;
  p.tg.assignment = pairs({{0, 0}, {1, 1}});
  p.tg.topology = Tensor(Shape{3, 3}, 0.0);
  p.tg.topology.at(0, 1) = 1.0;
  return p;
}

TEST(Losses, PerfectPredictionIsNearZero) {
  const Problem p = perfect_problem();
  const auto l = compute_losses(p.in, p.tg, LossWeights{});
  // Dice with smoothing 1 on a mask of area a leaves 0 exactly; the rest are
  // saturated logits.
  EXPECT_LE(l.lane_l1, 1e-6);
  EXPECT_LE(l.classification, 1e-6);
  EXPECT_LE(l.mask, 1e-6);
  EXPECT_LE(l.topology_vanilla, 1e-6);
  EXPECT_EQ(l.topology_denoise, 0.0);
  EXPECT_LE(l.total, 1e-5);
}

TEST(Losses, RegressionWeightIsLinear) {
  Problem p = perfect_problem();
  p.in.keypoints.mutable_value().at(0, 0, 0) += 0.3;
  LossWeights w;
  const auto a = compute_losses(p.in, p.tg, w);
  w.reg *= 2.0;
  const auto b = compute_losses(p.in, p.tg, w);
  EXPECT_NEAR(b.total - a.total, a.lane_l1 * w.reg / 2.0, 1e-12);
  EXPECT_GT(a.lane_l1, 0.0);
}

TEST(Losses, MatchesHandComposition) {
  SeededRng rng(7);
  const std::size_t N = 3, M = 2, k = 3, HW = 4;
  LossInputs in;
  in.keypoints = constant(random_tensor({N, k, 2}, rng, 0.0, 1.0));
  in.class_logits = constant(random_tensor({N}, rng));
  in.mask_logits = constant(random_tensor({N, HW}, rng, -2.0, 2.0));
  in.sim_logits = constant(random_tensor({N, N}, rng, -2.0, 2.0));
  in.dn_sim_logits = constant(random_tensor({4, 4}, rng, -2.0, 2.0));
  LossTargets tg;
  tg.keypoints = random_tensor({M, k, 2}, rng, 0.0, 1.0);
  tg.masks = Tensor(Shape{M, HW}, std::vector<double>{1, 0, 0, 1, 0, 1, 1, 0});
  tg.assignment = pairs({{2, 0}, {0, 1}});
  tg.topology = Tensor(Shape{N, N}, 0.0);
  tg.topology.at(2, 0) = 1.0;
  tg.dn_topology = Tensor(Shape{4, 4}, 0.0);
  tg.dn_topology.at(0, 1) = tg.dn_topology.at(2, 3) = 1.0;
  const LossWeights w;
  const auto l = compute_losses(in, tg, w);

  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  auto bce = [&](double z, double t) { return -(t * std::log(sig(z)) + (1 - t) * std::log(1 - sig(z))); };
  double lane = 0.0, dice = 0.0, mbce = 0.0;
  for (auto [pi, gi] : tg.assignment.pairs) {
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t d = 0; d < 2; ++d) lane += std::abs(in.keypoints.value().at(pi, t, d) - tg.keypoints.at(gi, t, d));
    double inter = 0.0, ps = 0.0, ts = 0.0;
    for (std::size_t c = 0; c < HW; ++c) {
      const double pr = sig(in.mask_logits.value().at(pi, c)), tv = tg.masks.at(gi, c);
      inter += pr * tv;
      ps += pr;
      ts += tv;
      mbce += bce(in.mask_logits.value().at(pi, c), tv);
    }
    dice += 1.0 - (2.0 * inter + 1.0) / (ps + ts + 1.0);
  }
  lane = lane / (2.0 * k * 2.0) * 2.0;  // mean over 2 lanes x k x 2 coords, times 2 coords
  const double mask = dice / 2.0 + mbce / (2.0 * HW);
  double cls = 0.0;
  for (std::size_t i = 0; i < N; ++i) cls += bce(in.class_logits.value()[i], i == 1 ? 0.0 : 1.0);
  cls /= N;
  auto topo_term = [&](const Tensor& z, const Tensor& t) {
    double s = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < t.dim(0); ++i)
      for (std::size_t j = 0; j < t.dim(0); ++j) {
        if (i == j) continue;
        const double wt = t.at(i, j) > 0.5 ? w.topo_pos_weight : 1.0;
        s += wt * bce(z.at(i, j), t.at(i, j));
        wsum += wt;
      }
    return s / wsum;
  };
  const double topo = topo_term(in.sim_logits.value(), tg.topology);
  const double dn = topo_term(in.dn_sim_logits.value(), tg.dn_topology);
  EXPECT_NEAR(l.lane_l1, lane, 1e-12);
  EXPECT_NEAR(l.mask, mask, 1e-12);
  EXPECT_NEAR(l.classification, cls, 1e-12);
  EXPECT_NEAR(l.topology_vanilla, topo, 1e-12);
  EXPECT_NEAR(l.topology_denoise, dn, 1e-12);
  EXPECT_NEAR(l.total, w.reg * lane + w.cls * cls + w.mask * mask + w.topo * topo + w.dn * dn, 1e-12);
}

TEST(Losses, NonFiniteComponentIsNamed) {
  Problem p = perfect_problem();
  p.in.keypoints.mutable_value().at(0, 0, 0) = std::numeric_limits<double>::infinity();
  try {
    compute_losses(p.in, p.tg, LossWeights{});
    FAIL() << "expected domain_error";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("lane_l1"), std::string::npos) << e.what();
  }
}

TEST(TopologyWeights, DiagonalIgnoredPositivesUpweighted) {
  const Tensor t(Shape{2, 2}, std::vector<double>{1, 1, 0, 0});
  const Tensor w = topology_weights(t, 5.0);
  EXPECT_EQ(std::vector<double>(w.values().begin(), w.values().end()), (std::vector<double>{0, 5, 1, 0}));
}

}  // namespace
}  // namespace topofg
