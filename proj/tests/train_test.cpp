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

// Config round trips and short deterministic training runs.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "topofg/binary_io.hpp"
#include "topofg/train.hpp"

namespace topofg {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("topofg_train_test_" + name);
  fs::remove_all(dir);
  return dir;
}

TEST(Config, RoundTripsExactly) {
  RunConfig c;
  c.seed = 77;
  c.tau = 0.1 + 0.2;  // not representable in short decimal
  c.lr = 3.3e-4;
  c.btr = false;
  c.dn_groups = 0;
  c.scene.noise_sigma = 1.0 / 3.0;
  c.out_dir = "runs/a b";
  const std::string text = serialize_config(c);
  EXPECT_EQ(parse_config(text, "mem"), c);
  EXPECT_EQ(serialize_config(parse_config(text, "mem")), text);
  EXPECT_EQ(parse_config("", "mem"), RunConfig{});
}

TEST(Config, HashTracksEveryField) {
  RunConfig a, b;
  b.loss.topo_pos_weight = 4.0;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a), config_hash(RunConfig{}));
}

TEST(Config, ErrorsCarryTheLineOffset) {
  const std::string text = "seed = 3\n[model]\nd_modle = 16\n";
  try {
    parse_config(text, "bad.toml");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), text.find("d_modle"));
    EXPECT_NE(std::string(e.what()).find("bad.toml"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("model.d_modle"), std::string::npos);
  }
  EXPECT_THROW(parse_config("[toggles]\nlp = yes\n", "x"), ParseError);
  EXPECT_THROW(parse_config("seed = -1\n", "x"), ParseError);
  EXPECT_THROW(parse_config("[scene]\nk = 1\n", "x"), ParseError);
  EXPECT_THROW(parse_config("[model]\nheads = 5\n", "x"), ParseError);
}

RunConfig tiny_config() {
  RunConfig c;
  c.scene.grid_h = c.scene.grid_w = 16;
  c.scene.feature_dim = 16;
  c.scene.k = 5;
  c.d_model = 16;
  c.num_queries = 6;
  c.decoder_layers = 2;
  c.mask_layers = 1;
  c.heads = 2;
  c.points = 2;
  c.ffn_hidden = 16;
  c.warmup_steps = 2;
  return c;
}

std::vector<SyntheticScene> tiny_scenes(const RunConfig& c, std::size_t n) {
  std::vector<SyntheticScene> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_scene(100 + i, c.scene));
  return out;
}

TEST(SceneOrder, EachEpochVisitsEverySceneOnce) {
  for (std::uint64_t epoch = 0; epoch < 4; ++epoch) {
    std::set<std::size_t> seen;
    for (std::uint64_t s = epoch * 9; s < (epoch + 1) * 9; ++s) seen.insert(scene_for_step(5, s, 9));
    EXPECT_EQ(seen.size(), 9u);
  }
  EXPECT_THROW(scene_for_step(5, 0, 0), std::invalid_argument);
}

TEST(Train, ResumeContinuesBitwise) {
  const RunConfig c = tiny_config();
  const auto scenes = tiny_scenes(c, 3);
  TopoFgModel straight(c);
  TrainOptions opt;
  opt.max_steps = 6;
  const auto full = train(straight, scenes, opt);

  const fs::path dir = scratch_dir("resume");
  TopoFgModel first(c);
  opt.max_steps = 3;
  opt.out_dir = dir;
  const auto head = train(first, scenes, opt);
  TopoFgModel second(c);
  opt.max_steps = 6;
  opt.resume = head.checkpoint;
  const auto tail = train(second, scenes, opt);

  ASSERT_EQ(tail.log.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(tail.log[i].total, full.log[3 + i].total) << i;
  for (std::size_t e = 0; e < straight.parameters().size(); ++e) {
    EXPECT_EQ(straight.parameters().entries()[e].param.value(), second.parameters().entries()[e].param.value());
  }
  const std::string log = read_file_text(dir / "train_log.csv");
  EXPECT_NE(log.find("# started"), std::string::npos);
  EXPECT_NE(log.find("# resumed"), std::string::npos);
  EXPECT_NE(log.find("dn_groups=5"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Train, CheckpointCarriesConfig) {
  const RunConfig c = tiny_config();
  const fs::path dir = scratch_dir("ckpt");
  TopoFgModel model(c);
  TrainOptions opt;
  opt.max_steps = 2;
  opt.out_dir = dir;
  const auto s = train(model, tiny_scenes(c, 2), opt);
  const auto meta = read_checkpoint_meta(s.checkpoint);
  EXPECT_EQ(meta.fields.at("config_hash"), config_hash(c));
  EXPECT_EQ(meta.fields.at("step"), "2");
  const TopoFgModel loaded = load_model(s.checkpoint);
  const auto scene = generate_scene(9, c.scene);
  EXPECT_EQ(loaded.predict(scene.bev), model.predict(scene.bev));
  fs::remove_all(dir);
}

TEST(Train, NonFiniteLossKeepsLastGoodCheckpoint) {
  const RunConfig c = tiny_config();
  auto scenes = tiny_scenes(c, 1);
  scenes[0].bev.features[0] = std::numeric_limits<double>::quiet_NaN();
  const fs::path dir = scratch_dir("nan");
  TopoFgModel model(c);
  TrainOptions opt;
  opt.max_steps = 2;
  opt.out_dir = dir;
  EXPECT_THROW(train(model, scenes, opt), std::domain_error);
  EXPECT_TRUE(fs::exists(dir / "last_good.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "final.ckpt"));
  fs::remove_all(dir);
}

TEST(Train, DenoisingToggleRunsAndIsLogged) {
  for (std::size_t groups : {0, 5}) {
    RunConfig c = tiny_config();
    c.dn_groups = groups;
    TopoFgModel model(c);
    TrainOptions opt;
    opt.max_steps = 3;
    const auto s = train(model, tiny_scenes(c, 2), opt);
    ASSERT_EQ(s.log.size(), 3u);
    for (const auto& r : s.log) {
      EXPECT_TRUE(std::isfinite(r.total));
      if (groups == 0) EXPECT_EQ(r.topology_denoise, 0.0);
      else EXPECT_GT(r.topology_denoise, 0.0);
    }
  }
}

// The denoising target is rebuilt from ground truth every step and never
// passes through the matcher.
TEST(Train, DenoisingSupervisionIsFixedAcrossEpochs) {
  const RunConfig c = tiny_config();
  TopoFgModel model(c);
  const auto scene = tiny_scenes(c, 1)[0];
  const Tensor want = block_diagonal(scene.adjacency, c.dn_groups);
  for (std::uint64_t step = 0; step < 3; ++step) {
    model.parameters().zero_grad();
    const auto r = compute_step(model, scene, step);
    EXPECT_EQ(r.dn_supervision, want);
    optimizer_step(model.parameters(), 1e-2, c.adam);
  }
}

TEST(Evaluate, ThreadCountDoesNotChangeTheReport) {
  const RunConfig c = tiny_config();
  const TopoFgModel model(c);
  const auto scenes = tiny_scenes(c, 5);
  EXPECT_EQ(evaluate_model(model, scenes, 0.472, 0.309, 1), evaluate_model(model, scenes, 0.472, 0.309, 3));
}

}  // namespace
}  // namespace topofg
