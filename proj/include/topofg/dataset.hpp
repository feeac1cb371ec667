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

// On-disk dataset layout:
//
//   <dir>/manifest.json          version, generation params, scene count,
//                                seeds, and per-split record file lists
//   <dir>/<split>_<NNNN>.json    one scene: lanes, adjacency, base64 payloads
//
// Masks are base64 of one byte per cell; features are base64 of little-endian
// f64. Coordinates are JSON numbers printed with round-trip precision.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "topofg/scene.hpp"

namespace topofg {

inline constexpr int kDatasetVersion = 1;

struct Dataset {
  GenerationParams params;
  std::map<std::string, std::vector<SyntheticScene>> splits;

  std::size_t scene_count() const;
  bool operator==(const Dataset&) const = default;
};

// Generates "train" and "val" splits. Scene seeds are drawn from independent
// streams of `seed`, so growing one split never changes the other.
Dataset generate_dataset(const GenerationParams& params, std::uint64_t seed, std::size_t n_train,
                         std::size_t n_val);

// Writes the manifest and one record per scene; creates dir if needed.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);

// Reads and validates a dataset; throws ParseError naming the file and byte
// offset on malformed or inconsistent content.
Dataset read_dataset(const std::filesystem::path& dir);

// FNV-1a over the manifest and every record file, in manifest order.
std::string dataset_hash(const std::filesystem::path& dir);

// JSON helpers shared with the config and report writers.
std::string scene_to_json(const SyntheticScene& scene);
SyntheticScene scene_from_json(const std::string& text, const std::string& source);
std::string params_to_json(const GenerationParams& params);

}  // namespace topofg
