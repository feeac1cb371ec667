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

#include <cmath>

#include "gradcheck.hpp"
#include "topofg/rfd.hpp"

namespace topofg {
namespace {

using testing::grad_check;
using testing::project_to_scalar;
using testing::random_tensor;

TEST(InitFineGrained, ZeroPositionalGivesSequentialRows) {
  SeededRng rng(1);
  const Tensor seq = random_tensor({4, 6}, rng);
  const Tensor q = init_fine_grained(constant(Tensor(Shape{3, 6}, 0.0)), constant(seq)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t d = 0; d < 6; ++d) EXPECT_EQ(q.at(i, t, d), seq.at(t, d));
}

TEST(InitFineGrained, ZeroSequentialGivesPositionalRows) {
  SeededRng rng(2);
  const Tensor pos = random_tensor({3, 6}, rng);
  const Tensor q = init_fine_grained(constant(pos), constant(Tensor(Shape{4, 6}, 0.0))).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t d = 0; d < 6; ++d) EXPECT_EQ(q.at(i, t, d), pos.at(i, d));
}

TEST(InitFineGrained, MatchesLoopOracle) {
  SeededRng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor pos = random_tensor({5, 8}, rng), seq = random_tensor({7, 8}, rng);
    const Tensor q = init_fine_grained(constant(pos), constant(seq)).value();
    ASSERT_EQ(q.shape(), (Shape{5, 7, 8}));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t t = 0; t < 7; ++t)
        for (std::size_t d = 0; d < 8; ++d) EXPECT_NEAR(q.at(i, t, d), pos.at(i, d) + seq.at(t, d), 1e-12);
  }
}

TEST(ReferencePoints, RowSegmentIsEvenlySpaced) {
  const std::size_t H = 16, W = 20, k = 5, row = 6, c1 = 3, c2 = 15;
  Tensor m(Shape{1, H * W}, 0.0);
  for (std::size_t c = c1; c <= c2; ++c) m.at(0, row * W + c) = 0.9;
  const auto r = sample_reference_points(m, H, W, k, 0.3);
  EXPECT_EQ(r.fallbacks, 0u);
  const double half_cell = 0.5 / static_cast<double>(W);
  const double x1 = (c1 + 0.5) / W, x2 = (c2 + 0.5) / W;
  for (std::size_t t = 0; t < k; ++t) {
    const double want = x1 + (x2 - x1) * static_cast<double>(t) / static_cast<double>(k - 1);
    EXPECT_NEAR(r.points.at(0, t, 0), want, half_cell) << t;
    EXPECT_DOUBLE_EQ(r.points.at(0, t, 1), (row + 0.5) / H);
  }
}

TEST(ReferencePoints, SingleCellCollapsesToItsCentre) {
  Tensor m(Shape{1, 64}, 0.0);
  m.at(0, 2 * 8 + 5) = 1.0;
  const auto r = sample_reference_points(m, 8, 8, 4, 0.3);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_DOUBLE_EQ(r.points.at(0, t, 0), 5.5 / 8.0);
    EXPECT_DOUBLE_EQ(r.points.at(0, t, 1), 2.5 / 8.0);
  }
}

TEST(ReferencePoints, EmptyMaskFallsBackToGridCentre) {
  const auto r = sample_reference_points(Tensor(Shape{2, 36}, 0.0), 6, 6, 3, 0.3);
  EXPECT_EQ(r.fallbacks, 2u);
  for (double v : r.points.values()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(ReferencePoints, BelowThresholdUsesSoftCentroid) {
  Tensor m(Shape{1, 4}, 0.0);  // 2x2 grid
  m.at(0, 0) = 0.1;
  m.at(0, 3) = 0.1;
  const auto r = sample_reference_points(m, 2, 2, 2, 0.3);
  EXPECT_EQ(r.fallbacks, 0u);
  for (double v : r.points.values()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(ReferencePoints, DiagonalRunsInIncreasingX) {
  const std::size_t n = 10;
  Tensor m(Shape{1, n * n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) m.at(0, (n - 1 - i) * n + i) = 1.0;  // anti-diagonal
  const auto r = sample_reference_points(m, n, n, n, 0.3);
  for (std::size_t t = 0; t + 1 < n; ++t) EXPECT_LT(r.points.at(0, t, 0), r.points.at(0, t + 1, 0));
  EXPECT_THROW(sample_reference_points(Tensor(Shape{1, 5}, 0.0), 2, 2, 2, 0.3), ShapeError);
}

RfdConfig small_config() {
  RfdConfig c;
  c.in_channels = 5;
  c.d_model = 8;
  c.k = 4;
  c.layers = 2;
  c.heads = 2;
  c.points = 2;
  c.ffn_hidden = 12;
  c.grid_h = 6;
  c.grid_w = 7;
  c.num_queries = 3;
  return c;
}

Tensor permute_instances(const Tensor& q, const std::vector<std::size_t>& perm) {
  Tensor out(q.shape());
  const std::size_t row = q.size() / q.dim(0);
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy(q.data() + perm[i] * row, q.data() + (perm[i] + 1) * row, out.data() + i * row);
  return out;
}

TEST(DecoderLayer, SelfAttentionIsPermutationEquivariant) {
  const RfdConfig c = small_config();
  ParameterStore store;
  SeededRng rng(4);
  const DecoderLayer layer(store, "l", c, rng);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor q = random_tensor({5, c.k, c.d_model}, rng);
    const Tensor a = permute_instances(layer.self_attention(constant(q), {}).value(), perm);
    const Tensor b = layer.self_attention(constant(permute_instances(q, perm)), {}).value();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
  }
}

// A single instance token attends only to itself, so the inter stage adds
// out(v(mean_t q)) to every slot.
TEST(DecoderLayer, SingleInstanceInterStageIsValuePath) {
  const RfdConfig c = small_config();
  ParameterStore store;
  SeededRng rng(5);
  const DecoderLayer layer(store, "l", c, rng);
  const Tensor q = random_tensor({1, c.k, c.d_model}, rng);
  const Var qv = constant(q);
  const auto lin = [&](const std::string& n, const Var& x) {
    return linear(x, store.get(n + ".weight"), store.get(n + ".bias"));
  };
  const Var mixed = lin("l.inter.out", lin("l.inter.v", mean_axis1(qv)));
  Var manual = layer_norm(qv + repeat_axis1(mixed, c.k), store.get("l.norm_inter.gain"), store.get("l.norm_inter.bias"));
  const Var intra = lin("l.intra.out", attention(lin("l.intra.q", manual), lin("l.intra.k", manual),
                                                 lin("l.intra.v", manual), c.heads));
  manual = layer_norm(manual + intra, store.get("l.norm_intra.gain"), store.get("l.norm_intra.bias"));
  const Tensor got = layer.self_attention(qv, {}).value();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], manual.value()[i], 1e-12);
}

// With k = 1 a slot attends only to itself along the lane.
TEST(DecoderLayer, SingleSlotIntraStageIsValuePath) {
  RfdConfig c = small_config();
  c.k = 1;
  ParameterStore store;
  SeededRng rng(6);
  const DecoderLayer layer(store, "l", c, rng);
  const Var q = constant(random_tensor({3, 1, c.d_model}, rng));
  const auto lin = [&](const std::string& n, const Var& x) {
    return linear(x, store.get(n + ".weight"), store.get(n + ".bias"));
  };
  const Var tokens = reshape(mean_axis1(q), {1, 3, c.d_model});
  const Var mixed = reshape(lin("l.inter.out", attention(lin("l.inter.q", tokens), lin("l.inter.k", tokens),
                                                         lin("l.inter.v", tokens), c.heads)),
                            {3, c.d_model});
  Var manual = layer_norm(q + repeat_axis1(mixed, 1), store.get("l.norm_inter.gain"), store.get("l.norm_inter.bias"));
  manual = layer_norm(manual + lin("l.intra.out", lin("l.intra.v", manual)), store.get("l.norm_intra.gain"),
                      store.get("l.norm_intra.bias"));
  const Tensor got = layer.self_attention(q, {}).value();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], manual.value()[i], 1e-12);
}

TEST(DecoderLayer, DegenerateCrossAttentionIsOneBilinearSample) {
  RfdConfig c = small_config();
  c.heads = 1;
  c.points = 1;
  ParameterStore store;
  SeededRng rng(7);
  const DecoderLayer layer(store, "l", c, rng);
  store.get("l.offsets.bias").node()->value.fill(0.0);
  const Var q = constant(random_tensor({2, c.k, c.d_model}, rng));
  const Var bev = constant(random_tensor({c.grid_h, c.grid_w, c.in_channels}, rng));
  const Var refs = constant(random_tensor({2 * c.k, 2}, rng, 0.05, 0.95));
  const auto lin = [&](const std::string& n, const Var& x) {
    return linear(x, store.get(n + ".weight"), store.get(n + ".bias"));
  };
  const Var sampled = bilinear_sample(lin("l.value_proj", bev), refs);
  const Var manual = layer_norm(q + reshape(lin("l.out_proj", sampled), {2, c.k, c.d_model}),
                                store.get("l.norm_cross.gain"), store.get("l.norm_cross.bias"));
  const Tensor got = layer.cross_attention(q, bev, refs).value();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], manual.value()[i], 1e-12);
}

TEST(DecoderLayer, EqualPointLogitsAverageTheSamples) {
  RfdConfig c = small_config();
  c.heads = 1;
  c.points = 2;
  ParameterStore store;
  SeededRng rng(8);
  const DecoderLayer layer(store, "l", c, rng);
  // Attention-weight logits start at zero, so both points get weight 1/2.
  const Var q = constant(random_tensor({1, c.k, c.d_model}, rng));
  const Var bev = constant(random_tensor({c.grid_h, c.grid_w, c.in_channels}, rng));
  const Tensor r = random_tensor({c.k, 2}, rng, 0.2, 0.8);
  const auto lin = [&](const std::string& n, const Var& x) {
    return linear(x, store.get(n + ".weight"), store.get(n + ".bias"));
  };
  const Tensor& bias = store.get("l.offsets.bias").value();
  std::vector<Var> per_point;
  for (std::size_t p = 0; p < 2; ++p) {
    Tensor loc = r;
    for (std::size_t t = 0; t < c.k; ++t) {
      loc.at(t, 0) += bias[p * 2] / static_cast<double>(c.grid_w);
      loc.at(t, 1) += bias[p * 2 + 1] / static_cast<double>(c.grid_h);
    }
    per_point.push_back(bilinear_sample(lin("l.value_proj", bev), constant(loc)));
  }
  const Var mean_sample = scale(per_point[0] + per_point[1], 0.5);
  const Var manual = layer_norm(q + reshape(lin("l.out_proj", mean_sample), {1, c.k, c.d_model}),
                                store.get("l.norm_cross.gain"), store.get("l.norm_cross.bias"));
  const Tensor got = layer.cross_attention(q, bev, constant(r)).value();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], manual.value()[i], 1e-12);
}

TEST(DecoderLayer, ReferencePointGradientMatchesFiniteDifferences) {
  const RfdConfig c = small_config();
  ParameterStore store;
  SeededRng rng(9);
  const DecoderLayer layer(store, "l", c, rng);
  // Non-zero offset weights so the sampling locations depend on the queries too.
  for (double& v : store.get("l.offsets.weight").node()->value.values()) v = rng.uniform(-0.3, 0.3);
  const Var q = constant(random_tensor({2, c.k, c.d_model}, rng));
  const Var bev = constant(random_tensor({c.grid_h, c.grid_w, c.in_channels}, rng));
  const Tensor proj = random_tensor({2, c.k, c.d_model}, rng);
  for (int trial = 0; trial < 5; ++trial) {
    Var refs(random_tensor({2 * c.k, 2}, rng, 0.15, 0.85), true);
    const auto r = grad_check(
        [&](const std::vector<Var>& in) { return project_to_scalar(layer.cross_attention(q, bev, in[0]), proj); },
        {refs}, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-3) << "trial " << trial;
  }
}

TEST(Rfd, OneLayerIsTheThreeSublayersInOrder) {
  RfdConfig c = small_config();
  c.layers = 1;
  ParameterStore store;
  SeededRng rng(10);
  const Rfd rfd(store, "rfd", c, rng);
  const Var q = constant(random_tensor({3, c.k, c.d_model}, rng));
  const Var bev = constant(random_tensor({c.grid_h, c.grid_w, c.in_channels}, rng));
  const Var refs = constant(random_tensor({3 * c.k, 2}, rng, 0.0, 1.0));
  const auto& layer = rfd.layers().at(0);
  const Var manual = layer.feed_forward(layer.cross_attention(layer.self_attention(q, {}), bev, refs));
  EXPECT_EQ(rfd.decode(q, bev, refs).queries.value(), manual.value());
}

TEST(Rfd, KeypointsStartOnReferencePointsAndDecodeIsDeterministic) {
  const RfdConfig c = small_config();
  ParameterStore store;
  SeededRng rng(11);
  const Rfd rfd(store, "rfd", c, rng);
  const Var q = constant(random_tensor({3, c.k, c.d_model}, rng));
  const Var bev = constant(random_tensor({c.grid_h, c.grid_w, c.in_channels}, rng));
  const Tensor r = random_tensor({3 * c.k, 2}, rng, 0.0, 1.0);
  const RfdOutput a = rfd.decode(q, bev, constant(r)), b = rfd.decode(q, bev, constant(r));
  EXPECT_EQ(a.keypoints.value(), b.keypoints.value());
  EXPECT_EQ(a.class_logits.value(), b.class_logits.value());
  EXPECT_EQ(a.keypoints.shape(), (Shape{3, c.k, 2}));
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(a.keypoints.value()[i], r[i]);
  EXPECT_THROW(rfd.decode(q, bev, constant(Tensor(Shape{4, 2}, 0.5))), ShapeError);
}

TEST(Rfd, KeypointSlotDependsOnlyOnItsQuery) {
  const RfdConfig c = small_config();
  ParameterStore store;
  SeededRng rng(12);
  const Rfd rfd(store, "rfd", c, rng);
  // Give the keypoint head a non-zero last layer.
  for (auto& e : store.entries())
    if (e.name.rfind("rfd.kp_head", 0) == 0)
      for (double& v : e.param.mutable_value().values()) v = rng.uniform(-0.5, 0.5);
  Tensor q = random_tensor({3, c.k, c.d_model}, rng);
  const Var refs = constant(Tensor(Shape{3 * c.k, 2}, 0.5));
  const Tensor before = rfd.lane_head(constant(q), refs).value();
  q.at(1, 2, 0) += 1.0;
  const Tensor after = rfd.lane_head(constant(q), refs).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < c.k; ++t) {
      const bool changed = before.at(i, t, 0) != after.at(i, t, 0) || before.at(i, t, 1) != after.at(i, t, 1);
      EXPECT_EQ(changed, i == 1 && t == 2) << i << "," << t;
    }
}

TEST(Rfd, RejectsDegenerateConfigs) {
  ParameterStore store;
  SeededRng rng(1);
  RfdConfig c = small_config();
  c.layers = 0;
  EXPECT_THROW(Rfd(store, "a", c, rng), std::invalid_argument);
  c = small_config();
  c.k = 1;
  EXPECT_THROW(Rfd(store, "b", c, rng), std::invalid_argument);
}

}  // namespace
}  // namespace topofg
