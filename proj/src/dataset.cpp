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

#include "topofg/dataset.hpp"

#include <cstdio>

#include "json.hpp"
#include "topofg/binary_io.hpp"
#include "topofg/rng.hpp"

namespace topofg {

using nlohmann::json;

std::size_t Dataset::scene_count() const {
  std::size_t n = 0;
  for (const auto& [_, scenes] : splits) n += scenes.size();
  return n;
}

namespace {

json bounds_json(const Bounds& b) { return json::array({b.x_min, b.x_max, b.y_min, b.y_max}); }

Bounds bounds_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("bounds must be [x_min, x_max, y_min, y_max]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json params_json(const GenerationParams& p) {
  return json{{"bounds", bounds_json(p.bounds)},
              {"grid_h", p.grid_h},
              {"grid_w", p.grid_w},
              {"feature_dim", p.feature_dim},
              {"k", p.k},
              {"min_roots", p.min_roots},
              {"max_roots", p.max_roots},
              {"min_lanes", p.min_lanes},
              {"max_lanes", p.max_lanes},
              {"p_fork", p.p_fork},
              {"p_continue", p.p_continue},
              {"p_merge", p.p_merge},
              {"length_min", p.length_min},
              {"length_max", p.length_max},
              {"curvature_max", p.curvature_max},
              {"root_heading_max", p.root_heading_max},
              {"heading_max", p.heading_max},
              {"margin", p.margin},
              {"lane_width_cells", p.lane_width_cells},
              {"distance_clip_cells", p.distance_clip_cells},
              {"noise_sigma", p.noise_sigma},
              {"position_channels", p.position_channels}};
}

GenerationParams params_from(const json& j) {
  GenerationParams p;
  p.bounds = bounds_from(j.at("bounds"));
  j.at("grid_h").get_to(p.grid_h);
  j.at("grid_w").get_to(p.grid_w);
  j.at("feature_dim").get_to(p.feature_dim);
  j.at("k").get_to(p.k);
  j.at("min_roots").get_to(p.min_roots);
  j.at("max_roots").get_to(p.max_roots);
  j.at("min_lanes").get_to(p.min_lanes);
  j.at("max_lanes").get_to(p.max_lanes);
  j.at("p_fork").get_to(p.p_fork);
  j.at("p_continue").get_to(p.p_continue);
  j.at("p_merge").get_to(p.p_merge);
  j.at("length_min").get_to(p.length_min);
  j.at("length_max").get_to(p.length_max);
  j.at("curvature_max").get_to(p.curvature_max);
  j.at("root_heading_max").get_to(p.root_heading_max);
  j.at("heading_max").get_to(p.heading_max);
  j.at("margin").get_to(p.margin);
  j.at("lane_width_cells").get_to(p.lane_width_cells);
  j.at("distance_clip_cells").get_to(p.distance_clip_cells);
  j.at("noise_sigma").get_to(p.noise_sigma);
  j.at("position_channels").get_to(p.position_channels);
  return p;
}

json scene_json(const SyntheticScene& s) {
  json lanes = json::array();
  for (const auto& lane : s.lanes) {
    json pts = json::array();
    for (const auto& p : lane.points) pts.push_back(json::array({p.x, p.y}));
    lanes.push_back(json{{"class_id", lane.class_id}, {"points", std::move(pts)}});
  }
  const std::size_t n = s.lanes.size();
  json adj = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < n; ++j) row.push_back(static_cast<int>(s.adjacency.at(i, j)));
    adj.push_back(std::move(row));
  }
  std::vector<std::uint8_t> mask_bytes;
  for (const auto& m : s.gt_masks) mask_bytes.insert(mask_bytes.end(), m.begin(), m.end());
  return json{{"version", kDatasetVersion},
              {"seed", s.seed},
              {"bounds", bounds_json(s.bev.bounds)},
              {"grid", {{"h", s.bev.height}, {"w", s.bev.width}, {"d", s.bev.channels}}},
              {"lanes", std::move(lanes)},
              {"adjacency", std::move(adj)},
              {"clipped_lanes", s.clipped_lanes},
              {"masks", base64_encode(mask_bytes)},
              {"features", base64_encode(f64_to_le_bytes(s.bev.features.values()))}};
}

SyntheticScene scene_from(const json& j) {
  if (j.at("version").get<int>() != kDatasetVersion) {
    throw std::invalid_argument("record version " + j.at("version").dump() + " != " +
                                std::to_string(kDatasetVersion));
  }
  SyntheticScene s;
  j.at("seed").get_to(s.seed);
  s.bev.bounds = bounds_from(j.at("bounds"));
  j.at("grid").at("h").get_to(s.bev.height);
  j.at("grid").at("w").get_to(s.bev.width);
  j.at("grid").at("d").get_to(s.bev.channels);
  for (const auto& lj : j.at("lanes")) {
    LaneInstance lane;
    lj.at("class_id").get_to(lane.class_id);
    for (const auto& pj : lj.at("points")) {
      if (!pj.is_array() || pj.size() != 2) throw std::invalid_argument("lane point must be [x, y]");
      lane.points.push_back({pj[0].get<double>(), pj[1].get<double>()});
    }
    s.lanes.push_back(std::move(lane));
  }
  const std::size_t n = s.lanes.size();
  const auto& adj = j.at("adjacency");
  if (adj.size() != n) throw std::invalid_argument("adjacency row count != lane count");
  s.adjacency = Tensor(Shape{n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (adj[i].size() != n) throw std::invalid_argument("adjacency is not square");
    for (std::size_t k = 0; k < n; ++k) {
      const int v = adj[i][k].get<int>();
      if (v != 0 && v != 1) throw std::invalid_argument("adjacency entries must be 0 or 1");
      s.adjacency.at(i, k) = v;
    }
  }
  j.at("clipped_lanes").get_to(s.clipped_lanes);
  const std::size_t HW = s.bev.height * s.bev.width;
  auto mask_bytes = base64_decode(j.at("masks").get<std::string>());
  if (mask_bytes.size() != n * HW) throw std::invalid_argument("mask payload size mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    s.gt_masks.emplace_back(mask_bytes.begin() + static_cast<std::ptrdiff_t>(i * HW),
                            mask_bytes.begin() + static_cast<std::ptrdiff_t>((i + 1) * HW));
  }
  auto feats = le_bytes_to_f64(base64_decode(j.at("features").get<std::string>()));
  if (feats.size() != HW * s.bev.channels) throw std::invalid_argument("feature payload size mismatch");
  s.bev.features = Tensor(Shape{s.bev.height, s.bev.width, s.bev.channels}, std::move(feats));
  return s;
}

// Runs f, re-raising JSON and validation failures as ParseError for `source`.
template <class F>
auto parse_guard(const std::string& source, F&& f) {
  try {
    return f();
  } catch (const json::parse_error& e) {
    throw ParseError(source, e.byte, e.what());
  } catch (const json::exception& e) {
    throw ParseError(source, 0, e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(source, 0, e.what());
  }
}

std::string record_name(const std::string& split, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu.json", split.c_str(), i);
  return buf;
}

}  // namespace

std::string scene_to_json(const SyntheticScene& scene) { return scene_json(scene).dump(); }

SyntheticScene scene_from_json(const std::string& text, const std::string& source) {
  return parse_guard(source, [&] { return scene_from(json::parse(text)); });
}

std::string params_to_json(const GenerationParams& params) { return params_json(params).dump(); }

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  json seeds = json::array();
  json splits = json::object();
  for (const auto& [name, scenes] : dataset.splits) {
    json files = json::array();
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const auto file = record_name(name, i);
      write_file_text(dir / file, scene_to_json(scenes[i]));
      files.push_back(file);
      seeds.push_back(scenes[i].seed);
    }
    splits[name] = std::move(files);
  }
  json manifest{{"version", kDatasetVersion},
                {"params", params_json(dataset.params)},
                {"scene_count", dataset.scene_count()},
                {"seeds", std::move(seeds)},
                {"splits", std::move(splits)}};
  write_file_text(dir / "manifest.json", manifest.dump(2));
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const std::string source = manifest_path.string();
  const auto text = read_file_text(manifest_path);
  Dataset ds;
  std::vector<std::uint64_t> seeds;
  std::vector<std::pair<std::string, std::vector<std::string>>> files;
  parse_guard(source, [&] {
    const auto m = json::parse(text);
    if (m.at("version").get<int>() != kDatasetVersion) {
      throw std::invalid_argument("manifest version " + m.at("version").dump() + " != " +
                                  std::to_string(kDatasetVersion));
    }
    ds.params = params_from(m.at("params"));
    seeds = m.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& [name, list] : m.at("splits").items()) {
      files.emplace_back(name, list.get<std::vector<std::string>>());
    }
    std::size_t total = 0;
    for (const auto& [_, f] : files) total += f.size();
    if (total != m.at("scene_count").get<std::size_t>() || total != seeds.size()) {
      throw std::invalid_argument("scene_count does not match record lists");
    }
    return 0;
  });
  std::size_t idx = 0;
  for (const auto& [name, list] : files) {
    auto& out = ds.splits[name];
    for (const auto& file : list) {
      const auto path = dir / file;
      auto scene = scene_from_json(read_file_text(path), path.string());
      if (scene.seed != seeds[idx]) {
        throw ParseError(path.string(), 0, "record seed does not match manifest");
      }
      ++idx;
      out.push_back(std::move(scene));
    }
  }
  // Splits present in the manifest with no records still exist.
  return ds;
}

std::string dataset_hash(const std::filesystem::path& dir) {
  const auto manifest = read_file_text(dir / "manifest.json");
  std::uint64_t h = fnv1a64(manifest);
  const auto m = json::parse(manifest);
  for (const auto& [_, list] : m.at("splits").items()) {
    for (const auto& file : list) h = fnv1a64(read_file_text(dir / file.get<std::string>()), h);
  }
  return hex64(h);
}

Dataset generate_dataset(const GenerationParams& params, std::uint64_t seed, std::size_t n_train,
                         std::size_t n_val) {
  validate(params);
  Dataset ds;
  ds.params = params;
  SeededRng root(seed);
  SeededRng train_rng = root.fork(1), val_rng = root.fork(2);
  auto& train = ds.splits["train"];
  auto& val = ds.splits["val"];
  for (std::size_t i = 0; i < n_train; ++i) train.push_back(generate_scene(train_rng.next_u64(), params));
  for (std::size_t i = 0; i < n_val; ++i) val.push_back(generate_scene(val_rng.next_u64(), params));
  return ds;
}

}  // namespace topofg
