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

// topofg generate | train | eval | render
//
// Failures print exactly one line, "error: <kind>: <message>", to stderr and
// exit nonzero (2 for usage errors, 1 otherwise).

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "topofg/binary_io.hpp"
#include "topofg/dataset.hpp"
#include "topofg/render.hpp"
#include "topofg/train.hpp"

namespace fs = std::filesystem;
using namespace topofg;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

// Ablation switches, named after the components they remove.
struct Toggles {
  std::optional<bool> lp, gp, fqi, srp, btr, dtr, geo;
  std::optional<std::size_t> dn_groups;
  std::optional<std::size_t> epochs;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "run configuration file");
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--out", c.out, "output directory (or file for render)");
}

void add_toggle(CLI::App* cmd, const std::string& name, std::optional<bool>& slot) {
  cmd->add_flag_function(
      "--" + name + ",!--no-" + name, [&slot](std::int64_t n) { slot = n > 0; }, "enable/disable " + name);
}

RunConfig resolve(const Common& c, const Toggles* t = nullptr) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (t != nullptr) {
    auto apply = [](const std::optional<bool>& v, bool& field) {
      if (v) field = *v;
    };
    apply(t->lp, cfg.lp);
    apply(t->gp, cfg.gp);
    apply(t->fqi, cfg.fqi);
    apply(t->srp, cfg.srp);
    apply(t->btr, cfg.btr);
    apply(t->dtr, cfg.dtr);
    apply(t->geo, cfg.geo);
    if (t->dn_groups) cfg.dn_groups = *t->dn_groups;
    if (t->epochs) cfg.epochs = *t->epochs;
  }
  validate(cfg);
  return cfg;
}

const std::vector<SyntheticScene>& split_of(const Dataset& ds, const std::string& split) {
  const auto it = ds.splits.find(split);
  if (it == ds.splits.end()) throw std::invalid_argument("dataset has no split '" + split + "'");
  return it->second;
}

// Dimension check between a checkpoint's config and a dataset, run before any
// inference so a mismatch never reaches the model.
void check_compatible(const RunConfig& cfg, const GenerationParams& p) {
  const GenerationParams& m = cfg.scene;
  if (m.grid_h != p.grid_h || m.grid_w != p.grid_w || m.feature_dim != p.feature_dim || m.k != p.k) {
    throw std::invalid_argument("checkpoint expects grid " + std::to_string(m.grid_h) + "x" +
                                std::to_string(m.grid_w) + " D=" + std::to_string(m.feature_dim) +
                                " k=" + std::to_string(m.k) + ", dataset has " + std::to_string(p.grid_h) + "x" +
                                std::to_string(p.grid_w) + " D=" + std::to_string(p.feature_dim) +
                                " k=" + std::to_string(p.k));
  }
}

int fail(const std::string& kind, std::string message) {
  for (char& ch : message)
    if (ch == '\n' || ch == '\r') ch = ' ';
  std::cerr << "error: " << kind << ": " << message << '\n';
  return kind == "usage" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lane topology on synthetic BEV scenes"};
  app.require_subcommand(1);

  Common gen_c;
  auto* gen = app.add_subcommand("generate", "write train/val scene splits");
  add_common(gen, gen_c);

  Common train_c;
  Toggles train_t;
  std::string train_data, train_resume;
  std::uint64_t train_steps = 0;
  auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
  add_common(tr, train_c);
  tr->add_option("--dataset", train_data, "dataset directory (default: config dataset_dir)");
  tr->add_option("--resume", train_resume, "checkpoint to continue from");
  tr->add_option("--steps", train_steps, "stop after this many optimizer steps in total");
  for (auto [name, slot] : {std::pair{"lp", &train_t.lp}, {"gp", &train_t.gp}, {"fqi", &train_t.fqi},
                            {"srp", &train_t.srp}, {"btr", &train_t.btr}, {"dtr", &train_t.dtr},
                            {"geo", &train_t.geo}}) {
    add_toggle(tr, name, *slot);
  }
  tr->add_option("--dn-groups", train_t.dn_groups, "denoising groups G (0 disables denoising)");
  tr->add_option("--epochs", train_t.epochs, "passes over the train split");

  Common eval_c;
  std::string eval_ckpt, eval_data, eval_split = "val";
  double det_t = 0.472, top_lt = 0.309;
  auto* ev = app.add_subcommand("eval", "score a checkpoint; det_t/top_lt are supplied, not measured");
  add_common(ev, eval_c);
  ev->add_option("checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--dataset", eval_data, "dataset directory")->required();
  ev->add_option("--split", eval_split, "split to score");
  ev->add_option("--det-t", det_t, "traffic-element detection score used in OLS");
  ev->add_option("--top-lt", top_lt, "lane-to-element topology score used in OLS");

  Common render_c;
  std::string render_ckpt, render_data, render_split = "val";
  std::size_t render_index = 0;
  RenderOptions render_opt;
  auto* rd = app.add_subcommand("render", "draw one scene with its predictions as SVG");
  add_common(rd, render_c);
  rd->add_option("checkpoint", render_ckpt, "checkpoint file; omit for ground truth only");
  rd->add_option("--dataset", render_data, "dataset directory")->required();
  rd->add_option("--split", render_split, "split holding the scene");
  rd->add_option("--scene", render_index, "scene index within the split");
  rd->add_option("--score-threshold", render_opt.score_threshold, "minimum score of drawn lanes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (gen->parsed()) {
      const RunConfig cfg = resolve(gen_c);
      const fs::path out = gen_c.out.empty() ? fs::path(cfg.dataset_dir) : fs::path(gen_c.out);
      const Dataset ds = generate_dataset(cfg.scene, cfg.seed, cfg.train_scenes, cfg.val_scenes);
      write_dataset(out, ds);
      for (const auto& [name, scenes] : ds.splits) std::cout << name << " " << scenes.size() << "\n";
      std::cout << "dataset_hash " << dataset_hash(out) << "\n";
    } else if (tr->parsed()) {
      const RunConfig cfg = resolve(train_c, &train_t);
      const fs::path data = train_data.empty() ? fs::path(cfg.dataset_dir) : fs::path(train_data);
      const Dataset ds = read_dataset(data);
      if (ds.params != cfg.scene) throw std::invalid_argument("dataset " + data.string() +
                                                              " was generated with different scene parameters");
      TopoFgModel model(cfg);
      TrainOptions opt;
      opt.out_dir = train_c.out.empty() ? fs::path(cfg.out_dir) : fs::path(train_c.out);
      opt.max_steps = train_steps;
      opt.resume = train_resume;
      opt.progress = &std::cout;
      const TrainSummary s = train(model, split_of(ds, "train"), opt);
      std::cout << "steps " << s.steps << "\ncheckpoint " << s.checkpoint.string() << "\n";
    } else if (ev->parsed()) {
      const Dataset ds = read_dataset(eval_data);
      const CheckpointMeta meta = read_checkpoint_meta(eval_ckpt);
      check_compatible(parse_config(meta.fields.at("config"), eval_ckpt), ds.params);
      const TopoFgModel model = load_model(eval_ckpt);
      MetricReport report = evaluate_model(model, split_of(ds, eval_split), det_t, top_lt, eval_threads());
      report.dataset_hash = dataset_hash(eval_data);
      report.config["split"] = eval_split;
      const std::string json = report_to_json(report);
      if (!eval_c.out.empty()) {
        fs::create_directories(eval_c.out);
        write_file_text(fs::path(eval_c.out) / "report.json", json);
      }
      std::cout << json;
    } else if (rd->parsed()) {
      const Dataset ds = read_dataset(render_data);
      const auto& scenes = split_of(ds, render_split);
      if (render_index >= scenes.size()) {
        throw std::out_of_range("scene " + std::to_string(render_index) + " not in split of " +
                                std::to_string(scenes.size()));
      }
      const SyntheticScene& scene = scenes[render_index];
      std::optional<Prediction> pred;
      if (!render_ckpt.empty()) {
        const CheckpointMeta meta = read_checkpoint_meta(render_ckpt);
        check_compatible(parse_config(meta.fields.at("config"), render_ckpt), ds.params);
        pred = load_model(render_ckpt).predict(scene.bev);
      }
      RenderCounts counts;
      const std::string svg = render_svg(scene, pred ? &*pred : nullptr, render_opt, &counts);
      const fs::path out = render_c.out.empty() ? fs::path("scene.svg") : fs::path(render_c.out);
      write_file_text(out, svg);
      std::cout << out.string() << " gt " << counts.gt_lanes << " pred " << counts.predicted_lanes << " arrows "
                << counts.arrows << "\n";
    }
  } catch (const ParseError& e) {
    return fail("parse", e.what());
  } catch (const std::invalid_argument& e) {
    return fail("invalid", e.what());
  } catch (const std::domain_error& e) {
    return fail("nonfinite", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
  return 0;
}
