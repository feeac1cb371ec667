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

// Lane detection and topology metrics.
//
// det_l is the mean over Frechet thresholds of the all-points AP of the
// score-ranked predictions pooled over scenes, each prediction greedily taking
// the nearest unmatched GT lane of its scene under the threshold. top_ll
// reuses the matching at the middle threshold, ranks the predicted directed
// edges of a scene by score and takes the AP against the GT edges; scenes are
// averaged. Ranking ties break by ascending scene, then prediction index.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "topofg/scene.hpp"

namespace topofg {

// Throws std::invalid_argument on an empty polyline.
double discrete_frechet(const std::vector<Point2>& p, const std::vector<Point2>& q);

// All-points interpolated AP of a ranked hit list against n_positive items.
double average_precision(const std::vector<bool>& ranked_hits, std::size_t n_positive);

struct ScenePrediction {
  std::vector<std::vector<Point2>> lanes;  // metres
  std::vector<double> scores;              // one per lane
  Tensor edge_scores;                      // [N x N] combined topology scores
};

struct SceneTruth {
  std::vector<std::vector<Point2>> lanes;
  Tensor adjacency;
};

inline const std::vector<double> kFrechetThresholds = {1.0, 2.0, 3.0};

struct DetectionResult {
  double det_l = 0.0;
  std::vector<double> per_threshold;
  // Per scene, per prediction: matched GT index or -1, at each threshold.
  std::vector<std::vector<std::vector<long>>> matches;
};

DetectionResult det_l(const std::vector<ScenePrediction>& preds, const std::vector<SceneTruth>& truths,
                      const std::vector<double>& thresholds = kFrechetThresholds);

// matches: per scene, per prediction GT index or -1. theta decides the
// edge-free scene case.
double top_ll(const std::vector<ScenePrediction>& preds, const std::vector<SceneTruth>& truths,
              const std::vector<std::vector<long>>& matches, double theta);

// 1/4 [det_l + det_t + sqrt(top_ll) + sqrt(top_lt)]; inputs must lie in [0,1].
double ols(double det_l, double det_t, double top_ll, double top_lt);

struct MetricReport {
  double det_l = 0.0;
  double top_ll = 0.0;
  double det_t = 0.0;   // supplied
  double top_lt = 0.0;  // supplied
  double ols = 0.0;
  std::vector<std::pair<double, double>> per_threshold;  // (metres, AP)
  std::map<std::string, std::string> config;
  std::string dataset_hash;
  std::size_t scenes = 0;

  bool operator==(const MetricReport&) const = default;
};

// Scores every scene and fills det_l, top_ll and ols.
MetricReport evaluate(const std::vector<ScenePrediction>& preds, const std::vector<SceneTruth>& truths,
                      double det_t, double top_lt, double theta);

std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(const std::string& text);

}  // namespace topofg
