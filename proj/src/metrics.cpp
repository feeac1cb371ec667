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

#include "topofg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>

#include "json.hpp"

namespace topofg {

double discrete_frechet(const std::vector<Point2>& p, const std::vector<Point2>& q) {
  if (p.empty() || q.empty()) throw std::invalid_argument("discrete_frechet: empty polyline");
  const std::size_t n = p.size(), m = q.size();
  std::vector<double> ca(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double d = distance(p[i], q[j]);
      double prev;
      if (i == 0 && j == 0) prev = 0.0;
      else if (i == 0) prev = ca[j - 1];
      else if (j == 0) prev = ca[(i - 1) * m];
      else prev = std::min({ca[(i - 1) * m + j], ca[(i - 1) * m + j - 1], ca[i * m + j - 1]});
      ca[i * m + j] = std::max(prev, d);
    }
  return ca.back();
}

double average_precision(const std::vector<bool>& ranked_hits, std::size_t n_positive) {
  if (n_positive == 0) return 0.0;
  const std::size_t n = ranked_hits.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += ranked_hits[i];
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_positive);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

DetectionResult det_l(const std::vector<ScenePrediction>& preds, const std::vector<SceneTruth>& truths,
                      const std::vector<double>& thresholds) {
  if (preds.size() != truths.size()) throw std::invalid_argument("det_l: prediction and truth scene counts differ");
  if (thresholds.empty()) throw std::invalid_argument("det_l: no thresholds");
  const std::size_t S = preds.size();

  struct Ranked {
    double score;
    std::size_t scene, idx;
  };
  std::vector<Ranked> ranked;
  std::size_t total_gt = 0;
  std::vector<std::vector<double>> frechet(S);
  for (std::size_t s = 0; s < S; ++s) {
    const auto& p = preds[s];
    if (p.scores.size() != p.lanes.size()) throw std::invalid_argument("det_l: one score per predicted lane");
    const std::size_t M = truths[s].lanes.size();
    total_gt += M;
    frechet[s].resize(p.lanes.size() * M);
    for (std::size_t i = 0; i < p.lanes.size(); ++i) {
      ranked.push_back({p.scores[i], s, i});
      for (std::size_t j = 0; j < M; ++j) frechet[s][i * M + j] = discrete_frechet(p.lanes[i], truths[s].lanes[j]);
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.scene, a.idx) < std::tie(b.scene, b.idx);
  });

  DetectionResult out;
  out.matches.resize(S);
  for (std::size_t s = 0; s < S; ++s) out.matches[s].assign(thresholds.size(), std::vector<long>(preds[s].lanes.size(), -1));
  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    std::vector<std::vector<char>> taken(S);
    for (std::size_t s = 0; s < S; ++s) taken[s].assign(truths[s].lanes.size(), 0);
    std::vector<bool> hits;
    hits.reserve(ranked.size());
    for (const auto& r : ranked) {
      const std::size_t M = truths[r.scene].lanes.size();
      double best = std::numeric_limits<double>::infinity();
      long best_j = -1;
      for (std::size_t j = 0; j < M; ++j) {
        const double d = frechet[r.scene][r.idx * M + j];
        if (!taken[r.scene][j] && d < thresholds[ti] && d < best) {
          best = d;
          best_j = static_cast<long>(j);
        }
      }
      if (best_j >= 0) {
        taken[r.scene][static_cast<std::size_t>(best_j)] = 1;
        out.matches[r.scene][ti][r.idx] = best_j;
      }
      hits.push_back(best_j >= 0);
    }
    double ap;
    if (total_gt == 0) ap = ranked.empty() ? 1.0 : 0.0;
    else ap = average_precision(hits, total_gt);
    out.per_threshold.push_back(ap);
  }
  double sum = 0.0;
  for (double ap : out.per_threshold) sum += ap;
  out.det_l = sum / static_cast<double>(thresholds.size());
  return out;
}

double top_ll(const std::vector<ScenePrediction>& preds, const std::vector<SceneTruth>& truths,
              const std::vector<std::vector<long>>& matches, double theta) {
  if (preds.size() != truths.size() || preds.size() != matches.size()) {
    throw std::invalid_argument("top_ll: scene counts differ");
  }
  if (preds.empty()) throw std::invalid_argument("top_ll: no scenes");
  double sum = 0.0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const auto& p = preds[s];
    const auto& gt = truths[s].adjacency;
    const std::size_t N = p.lanes.size(), M = truths[s].lanes.size();
    if (matches[s].size() != N) throw std::invalid_argument("top_ll: one match entry per predicted lane");
    if (N > 0 && p.edge_scores.shape() != Shape{N, N}) throw ShapeError("top_ll(edge_scores)", p.edge_scores.shape(), Shape{N, N});
    std::size_t n_pos = 0;
    for (std::size_t a = 0; a < M; ++a)
      for (std::size_t b = 0; b < M; ++b) n_pos += a != b && gt.at(a, b) > 0.5;

    struct Edge {
      double score;
      std::size_t i, j;
    };
    std::vector<Edge> edges;
    bool any_above = false;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        if (i == j) continue;
        const double sc = p.edge_scores.at(i, j);
        any_above = any_above || sc >= theta;
        if (sc > 0.0) edges.push_back({sc, i, j});
      }
    if (n_pos == 0) {
      sum += any_above ? 0.0 : 1.0;
      continue;
    }
    std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
      if (a.score != b.score) return a.score > b.score;
      return std::tie(a.i, a.j) < std::tie(b.i, b.j);
    });
    std::vector<bool> hits;
    for (const auto& e : edges) {
      const long a = matches[s][e.i], b = matches[s][e.j];
      hits.push_back(a >= 0 && b >= 0 && gt.at(static_cast<std::size_t>(a), static_cast<std::size_t>(b)) > 0.5);
    }
    sum += average_precision(hits, n_pos);
  }
  return sum / static_cast<double>(preds.size());
}

double ols(double det_l, double det_t, double top_ll, double top_lt) {
  for (double v : {det_l, det_t, top_ll, top_lt}) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("ols: inputs must lie in [0,1]");
  }
  return 0.25 * (det_l + det_t + std::sqrt(top_ll) + std::sqrt(top_lt));
}

MetricReport evaluate(const std::vector<ScenePrediction>& preds, const std::vector<SceneTruth>& truths,
                      double det_t, double top_lt, double theta) {
  MetricReport r;
  const auto det = det_l(preds, truths, kFrechetThresholds);
  r.det_l = det.det_l;
  for (std::size_t i = 0; i < kFrechetThresholds.size(); ++i) r.per_threshold.emplace_back(kFrechetThresholds[i], det.per_threshold[i]);
  const std::size_t mid = kFrechetThresholds.size() / 2;
  std::vector<std::vector<long>> matches;
  for (const auto& per_scene : det.matches) matches.push_back(per_scene[mid]);
  r.top_ll = top_ll(preds, truths, matches, theta);
  r.det_t = det_t;
  r.top_lt = top_lt;
  r.ols = ols(r.det_l, det_t, r.top_ll, top_lt);
  r.scenes = preds.size();
  return r;
}

std::string report_to_json(const MetricReport& r) {
  using nlohmann::ordered_json;
  ordered_json table = ordered_json::array();
  for (const auto& [thr, ap] : r.per_threshold) table.push_back({{"threshold_m", thr}, {"ap", ap}});
  ordered_json j{{"det_l", r.det_l},
                 {"top_ll", r.top_ll},
                 {"det_t", r.det_t},
                 {"det_t_source", "supplied"},
                 {"top_lt", r.top_lt},
                 {"top_lt_source", "supplied"},
                 {"ols", r.ols},
                 {"scenes", r.scenes},
                 {"per_threshold", table},
                 {"dataset_hash", r.dataset_hash},
                 {"config", r.config}};
  return j.dump(2) + "\n";
}

MetricReport report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MetricReport r;
  j.at("det_l").get_to(r.det_l);
  j.at("top_ll").get_to(r.top_ll);
  j.at("det_t").get_to(r.det_t);
  j.at("top_lt").get_to(r.top_lt);
  j.at("ols").get_to(r.ols);
  j.at("scenes").get_to(r.scenes);
  for (const auto& row : j.at("per_threshold")) r.per_threshold.emplace_back(row.at("threshold_m"), row.at("ap"));
  j.at("dataset_hash").get_to(r.dataset_hash);
  r.config = j.at("config").get<std::map<std::string, std::string>>();
  return r;
}

}  // namespace topofg
