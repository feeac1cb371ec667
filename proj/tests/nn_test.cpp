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
#include <filesystem>

#include "gradcheck.hpp"
#include "topofg/binary_io.hpp"
#include "topofg/nn.hpp"

namespace topofg {
namespace {

TEST(Optimizer, ZeroGradientNoDecayLeavesParameters) {
  ParameterStore store;
  auto p = store.create("p", Tensor::from({1.5, -2.0}));
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  optimizer_step(store, {{"p", Tensor(Shape{2}, 0.0)}}, 0.1, cfg);
  EXPECT_EQ(store.get("p").value(), Tensor::from({1.5, -2.0}));
}

TEST(Optimizer, FirstStepMovesByLearningRate) {
  ParameterStore store;
  store.create("w", Tensor::from({2.0}));
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  optimizer_step(store, {{"w", Tensor::from({1.0})}}, 0.1, cfg);
  // m_hat = v_hat = 1 after bias correction, so the step is lr / (1 + eps).
  EXPECT_NEAR(store.get("w").value()[0], 2.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Optimizer, DecoupledDecayShrinksParameter) {
  ParameterStore store;
  store.create("w", Tensor::from({4.0}));
  AdamWConfig cfg;  // weight_decay 0.01
  optimizer_step(store, {{"w", Tensor::from({0.0})}}, 0.1, cfg);
  EXPECT_DOUBLE_EQ(store.get("w").value()[0], 4.0 * (1.0 - 0.1 * 0.01));
}

TEST(Optimizer, NonFiniteGradientNamesParameter) {
  ParameterStore store;
  store.create("encoder.weight", Tensor::from({1.0}));
  try {
    optimizer_step(store, {{"encoder.weight", Tensor::from({NAN})}}, 0.1, AdamWConfig{});
    FAIL();
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.weight"), std::string::npos);
  }
  EXPECT_EQ(store.get("encoder.weight").value()[0], 1.0);
}

TEST(ParameterStoreTest, DuplicateNamesRejected) {
  ParameterStore store;
  store.create("a", Tensor::from({1.0}));
  EXPECT_THROW(store.create("a", Tensor::from({2.0})), std::invalid_argument);
}

TEST(Mlp, ThreeLayerGradientsMatchFiniteDifferences) {
  for (int trial = 0; trial < 5; ++trial) {
    SeededRng rng(40 + trial);
    ParameterStore store;
    Mlp mlp(store, "mlp", {4, 6, 5, 3}, rng);
    Var x(testing::random_tensor({7, 4}, rng), true);
    Tensor w = testing::random_tensor({7, 3}, rng);
    std::vector<Var> inputs{x};
    for (auto& e : store.entries()) inputs.push_back(e.param);
    auto f = [&](const std::vector<Var>&) { return testing::project_to_scalar(mlp(x), w); };
    auto r = testing::grad_check(f, inputs);
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
}

std::uint64_t hash_params(const ParameterStore& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : s.entries()) h = fnv1a64(f64_to_le_bytes(e.param.value().values()), h);
  return h;
}

std::uint64_t train_tiny(std::uint64_t seed, int steps) {
  SeededRng rng(seed);
  ParameterStore store;
  Mlp mlp(store, "m", {3, 8, 1}, rng);
  auto x = constant(testing::random_tensor({16, 3}, rng));
  auto y = testing::random_tensor({16, 1}, rng);
  for (int i = 0; i < steps; ++i) {
    store.zero_grad();
    auto loss = mean(mul(sub(mlp(x), constant(y)), sub(mlp(x), constant(y))));
    backward(loss);
    optimizer_step(store, 1e-2, AdamWConfig{});
  }
  return hash_params(store);
}

TEST(Determinism, SameSeedSameParametersBitwise) {
  EXPECT_EQ(train_tiny(7, 25), train_tiny(7, 25));
  EXPECT_NE(train_tiny(7, 25), train_tiny(8, 25));
}

TEST(Checkpoint, RoundTripRestoresValuesAndMoments) {
  SeededRng rng(3);
  ParameterStore a;
  Mlp m(a, "m", {3, 4, 2}, rng);
  a.zero_grad();
  backward(sum(m(constant(testing::random_tensor({2, 3}, rng)))));
  optimizer_step(a, 1e-2, AdamWConfig{});
  auto path = std::filesystem::temp_directory_path() / "topofg_nn_ckpt.bin";
  CheckpointMeta meta;
  meta.fields["config_hash"] = "abc";
  save_checkpoint(path, a, meta);

  SeededRng rng2(99);
  ParameterStore b;
  Mlp m2(b, "m", {3, 4, 2}, rng2);
  auto back = load_checkpoint(path, b);
  EXPECT_EQ(back.fields.at("config_hash"), "abc");
  EXPECT_EQ(b.step(), a.step());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.entries()[i].param.value(), b.entries()[i].param.value());
    EXPECT_EQ(a.entries()[i].second_moment, b.entries()[i].second_moment);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, ShapeMismatchAndTruncationAreErrors) {
  SeededRng rng(3);
  ParameterStore a;
  Mlp m(a, "m", {3, 4, 2}, rng);
  auto path = std::filesystem::temp_directory_path() / "topofg_nn_ckpt2.bin";
  save_checkpoint(path, a, {});
  ParameterStore b;
  Mlp m2(b, "m", {3, 5, 2}, rng);
  EXPECT_THROW(load_checkpoint(path, b), ShapeError);

  auto bytes = read_file_bytes(path);
  bytes.resize(bytes.size() / 2);
  write_file_bytes(path, bytes);
  ParameterStore c;
  Mlp m3(c, "m", {3, 4, 2}, rng);
  EXPECT_THROW(load_checkpoint(path, c), ParseError);
  std::filesystem::remove(path);
}

TEST(Base64, RoundTripsAllLengths) {
  for (std::size_t n = 0; n < 10; ++n) {
    std::vector<std::uint8_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::uint8_t>(37 * i + 250);
    EXPECT_EQ(base64_decode(base64_encode(v)), v);
  }
  EXPECT_EQ(base64_encode(std::vector<std::uint8_t>{'M', 'a'}), "TWE=");
  EXPECT_THROW(base64_decode("TW?="), std::invalid_argument);
}

}  // namespace
}  // namespace topofg
