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

// Test-only reference implementations written as plain loops, independent of
// the library code they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "topofg/scene.hpp"
#include "topofg/tensor.hpp"

namespace topofg::testing {

// Minimum over every injective map of the smaller side into the larger one.
inline double brute_force_cost(const Tensor& c) {
  const std::size_t n = c.dim(0), m = c.dim(1);
  const bool rows_small = n <= m;
  const std::size_t small = rows_small ? n : m, large = rows_small ? m : n;
  std::vector<std::size_t> perm(large);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < small; ++i) s += rows_small ? c.at(i, perm[i]) : c.at(perm[i], i);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// The coupling recursion written out directly, without memoisation.
inline double frechet_recursive(const std::vector<Point2>& p, const std::vector<Point2>& q, std::size_t i,
                                std::size_t j) {
  const double d = distance(p[i], q[j]);
  if (i == 0 && j == 0) return d;
  if (i == 0) return std::max(frechet_recursive(p, q, 0, j - 1), d);
  if (j == 0) return std::max(frechet_recursive(p, q, i - 1, 0), d);
  return std::max(std::min({frechet_recursive(p, q, i - 1, j), frechet_recursive(p, q, i - 1, j - 1),
                            frechet_recursive(p, q, i, j - 1)}),
                  d);
}

// A[i,c] = M[i,c] if M[i,c] <= tau else alpha.
inline double prior_weight(double m, double tau, double alpha) { return m <= tau ? m : alpha; }

// Q^pos[i] = sum_c A[i,c] P[c] / (sum_c A[i,c] + 1e-8) + Q^R[i].
inline Tensor spatial_prior_loop(const Tensor& masks, const Tensor& table, const Tensor& refined, double tau,
                                 double alpha) {
  const std::size_t N = masks.dim(0), C = masks.dim(1), D = table.dim(1);
  Tensor out(Shape{N, D});
  for (std::size_t i = 0; i < N; ++i) {
    double denom = 0.0;
    for (std::size_t c = 0; c < C; ++c) denom += prior_weight(masks.at(i, c), tau, alpha);
    for (std::size_t d = 0; d < D; ++d) {
      double num = 0.0;
      for (std::size_t c = 0; c < C; ++c) num += prior_weight(masks.at(i, c), tau, alpha) * table.at(c, d);
      out.at(i, d) = num / (denom + 1e-8) + refined.at(i, d);
    }
  }
  return out;
}

// Q^F0[i,t] = Q^pos[i] + seq[t].
inline Tensor fine_grained_loop(const Tensor& pos, const Tensor& seq) {
  const std::size_t N = pos.dim(0), k = seq.dim(0), D = pos.dim(1);
  Tensor out(Shape{N, k, D});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t d = 0; d < D; ++d) out.at(i, t, d) = pos.at(i, d) + seq.at(t, d);
  return out;
}

// sigmoid(w2 . relu(W1 [f_end_i ; f_start_j] + b1) + b2) for every pair.
inline Tensor similarity_loop(const Tensor& f_end, const Tensor& f_start, const Tensor& w1, const Tensor& b1,
                              const Tensor& w2, const Tensor& b2) {
  const std::size_t N = f_end.dim(0), D = f_end.dim(1), Hd = w1.dim(1);
  Tensor out(Shape{N, N});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double logit = b2[0];
      for (std::size_t h = 0; h < Hd; ++h) {
        double z = b1[h];
        for (std::size_t d = 0; d < D; ++d) z += f_end.at(i, d) * w1.at(d, h) + f_start.at(j, d) * w1.at(D + d, h);
        logit += std::max(z, 0.0) * w2.at(h, 0);
      }
      out.at(i, j) = 1.0 / (1.0 + std::exp(-logit));
    }
  return out;
}

}  // namespace topofg::testing
