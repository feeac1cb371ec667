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

#include "topofg/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "topofg/binary_io.hpp"

namespace topofg {

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5C4E'0000'0000ULL;
constexpr std::uint64_t kNoiseSalt = 0xD0'15E0'0000ULL;

Tensor normalized_keypoints(const SyntheticScene& scene) {
  const std::size_t M = scene.lanes.size(), k = M ? scene.lanes[0].points.size() : 0;
  Tensor out(Shape{M, k, 2});
  for (std::size_t j = 0; j < M; ++j)
    for (std::size_t t = 0; t < k; ++t) {
      const Point2 uv = scene.bev.normalize(scene.lanes[j].points[t]);
      out.at(j, t, 0) = uv.x;
      out.at(j, t, 1) = uv.y;
    }
  return out;
}

Tensor mask_tensor(const SyntheticScene& scene) {
  const std::size_t M = scene.gt_masks.size(), HW = scene.bev.height * scene.bev.width;
  Tensor out(Shape{M, HW});
  for (std::size_t j = 0; j < M; ++j)
    for (std::size_t c = 0; c < HW; ++c) out.at(j, c) = scene.gt_masks[j][c];
  return out;
}

std::string format_row(const StepRecord& r) {
  char buf[320];
  std::snprintf(buf, sizeof buf, "%llu,%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                static_cast<unsigned long long>(r.step), r.scene, r.lane_l1, r.classification, r.mask,
                r.topology_vanilla, r.topology_denoise, r.total, r.lr);
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::size_t scene_for_step(std::uint64_t seed, std::uint64_t step, std::size_t n) {
  if (n == 0) throw std::invalid_argument("train: no scenes");
  const std::uint64_t epoch = step / n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  SeededRng rng = SeededRng(seed ^ kShuffleSalt).fork(epoch);
  for (std::size_t i = n; i-- > 1;) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
    std::swap(order[i], order[j]);
  }
  return order[step % n];
}

StepResult compute_step(TopoFgModel& model, const SyntheticScene& scene, std::uint64_t step) {
  const RunConfig& cfg = model.config();
  StepResult out;
  DenoisingBatch dn;
  const bool use_dn = cfg.denoising() && !scene.lanes.empty();
  if (use_dn) {
    SeededRng noise = SeededRng(cfg.seed ^ kNoiseSalt).fork(step);
    dn = build_denoising_batch(scene.lanes, scene.adjacency, cfg.dn_groups, cfg.dn_sigma, scene.bev, cfg.d_model, noise);
    out.dn_supervision = dn.supervision;
  }
  const auto fr = model.forward(scene.bev, use_dn ? &dn : nullptr);

  LossTargets tg;
  tg.keypoints = normalized_keypoints(scene);
  tg.masks = mask_tensor(scene);
  Tensor scores = fr.class_logits.value();
  for (double& s : scores.values()) s = 1.0 / (1.0 + std::exp(-s));
  for (double v : fr.keypoints.value().values())
    if (!std::isfinite(v)) throw std::domain_error("train: non-finite keypoint predictions");
  for (double v : scores.values())
    if (!std::isfinite(v)) throw std::domain_error("train: non-finite class scores");
  if (!scene.lanes.empty()) {
    Tensor cost = matching_cost(fr.keypoints.value(), scores, tg.keypoints, cfg.loss.reg, cfg.loss.cls);
    if (cfg.loss.mask_match > 0.0) {
      const Tensor mc = mask_matching_cost(fr.hpe.masks.value(), tg.masks);
      for (std::size_t i = 0; i < cost.size(); ++i) cost[i] += cfg.loss.mask_match * mc[i];
    }
    tg.assignment = hungarian(cost);
  }
  tg.topology = scatter_topology_supervision(scene.adjacency, tg.assignment, cfg.num_queries).target;
  tg.dn_topology = out.dn_supervision;
  out.assignment = tg.assignment;
  out.vanilla_target = tg.topology;

  LossInputs in{fr.keypoints, fr.class_logits, fr.hpe.mask_logits, fr.hpe.aux_mask_logits, fr.sim_logits,
                fr.dn_sim_logits};
  out.losses = compute_losses(in, tg, cfg.loss);
  backward(out.losses.total_var);
  return out;
}

CheckpointMeta checkpoint_meta(const RunConfig& cfg, std::uint64_t step) {
  CheckpointMeta meta;
  meta.fields["config"] = serialize_config(cfg);
  meta.fields["config_hash"] = config_hash(cfg);
  meta.fields["step"] = std::to_string(step);
  return meta;
}

TopoFgModel load_model(const std::filesystem::path& checkpoint) {
  const auto meta = read_checkpoint_meta(checkpoint);
  auto it = meta.fields.find("config");
  if (it == meta.fields.end()) throw ParseError(checkpoint.string(), 0, "checkpoint has no embedded config");
  TopoFgModel model(parse_config(it->second, checkpoint.string() + ":config"));
  load_checkpoint(checkpoint, model.parameters());
  return model;
}

TrainSummary train(TopoFgModel& model, const std::vector<SyntheticScene>& scenes, const TrainOptions& opt) {
  const RunConfig& cfg = model.config();
  if (scenes.empty()) throw std::invalid_argument("train: no scenes");
  auto& store = model.parameters();
  if (!opt.resume.empty()) load_checkpoint(opt.resume, store);
  const std::uint64_t total = opt.max_steps ? opt.max_steps : cfg.epochs * scenes.size();
  const bool write = !opt.out_dir.empty();

  std::ofstream log;
  if (write) {
    std::filesystem::create_directories(opt.out_dir);
    write_file_text(opt.out_dir / "config.toml", serialize_config(cfg));
    const auto log_path = opt.out_dir / "train_log.csv";
    const bool fresh = opt.resume.empty() || !std::filesystem::exists(log_path);
    log.open(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("cannot open " + log_path.string());
    log << "# " << (fresh ? "started " : "resumed ") << utc_timestamp() << " config " << config_hash(cfg)
        << " dtr=" << cfg.dtr << " dn_groups=" << cfg.dn_groups << "\n";
    if (fresh) log << "step,scene,lane_l1,classification,mask,topology_vanilla,topology_denoise,total,lr\n";
  }

  TrainSummary summary;
  for (std::uint64_t s = store.step(); s < total; ++s) {
    const std::size_t idx = scene_for_step(cfg.seed, s, scenes.size());
    store.zero_grad();
    StepResult r;
    try {
      r = compute_step(model, scenes[idx], s);
    } catch (const std::domain_error&) {
      if (write) save_checkpoint(opt.out_dir / "last_good.ckpt", store, checkpoint_meta(cfg, store.step()));
      throw;
    }
    if (cfg.grad_clip > 0.0) clip_grad_norm(store, cfg.grad_clip);
    const double lr = warmup_lr(cfg.lr, s, cfg.warmup_steps);
    optimizer_step(store, lr, cfg.adam);

    StepRecord rec{store.step(), idx, r.losses.lane_l1, r.losses.classification, r.losses.mask,
                   r.losses.topology_vanilla, r.losses.topology_denoise, r.losses.total, lr};
    summary.log.push_back(rec);
    if (write) {
      log << format_row(rec);
      if (cfg.checkpoint_every > 0 && store.step() % cfg.checkpoint_every == 0) {
        save_checkpoint(opt.out_dir / ("step_" + std::to_string(store.step()) + ".ckpt"), store,
                        checkpoint_meta(cfg, store.step()));
      }
    }
    if (opt.progress && opt.progress_every > 0 && store.step() % opt.progress_every == 0) {
      *opt.progress << "step " << store.step() << "/" << total << " loss " << rec.total << std::endl;
    }
  }
  summary.steps = store.step();
  if (write) {
    summary.checkpoint = opt.out_dir / "final.ckpt";
    save_checkpoint(summary.checkpoint, store, checkpoint_meta(cfg, store.step()));
  }
  return summary;
}

std::size_t eval_threads() {
  if (const char* env = std::getenv("TOPOFG_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

std::vector<Prediction> predict_all(const TopoFgModel& model, const std::vector<SyntheticScene>& scenes,
                                    std::size_t threads) {
  std::vector<Prediction> out(scenes.size());
  threads = std::max<std::size_t>(1, std::min(threads, scenes.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < scenes.size(); ++i) out[i] = model.predict(scenes[i].bev);
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < scenes.size(); i += threads) out[i] = model.predict(scenes[i].bev);
    });
  }
  for (auto& th : pool) th.join();
  return out;
}

MetricReport evaluate_model(const TopoFgModel& model, const std::vector<SyntheticScene>& scenes, double det_t,
                            double top_lt, std::size_t threads) {
  const auto preds = predict_all(model, scenes, threads);
  std::vector<ScenePrediction> sp;
  std::vector<SceneTruth> truths;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    sp.push_back(preds[i].as_scene_prediction());
    truths.push_back(scene_truth(scenes[i]));
  }
  auto report = evaluate(sp, truths, det_t, top_lt, model.config().theta);
  report.config["config_hash"] = config_hash(model.config());
  return report;
}

}  // namespace topofg
