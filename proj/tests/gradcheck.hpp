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

// Central finite-difference oracle shared by the unit and acceptance suites.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "topofg/autograd.hpp"
#include "topofg/rng.hpp"

namespace topofg::testing {

inline Tensor random_tensor(const Shape& shape, SeededRng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Reduces an arbitrary output to a scalar with fixed random weights so every
// output element contributes to the checked gradient.
inline Var project_to_scalar(const Var& out, const Tensor& weights) {
  return sum(mul(out, constant(weights)));
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor)
inline GradCheckResult grad_check(const std::function<Var(const std::vector<Var>&)>& f,
                                  std::vector<Var> inputs, double h = 1e-5,
                                  double floor = 1e-6) {
  for (auto& in : inputs) in.zero_grad();
  Var loss = f(inputs);
  backward(loss);
  std::vector<Tensor> analytic;
  for (const auto& in : inputs) analytic.push_back(in.grad());

  GradCheckResult r;
  NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    auto& vals = inputs[k].mutable_value();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = f(inputs).value().item();
      vals[i] = orig - h;
      const double fm = f(inputs).value().item();
      vals[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      r.max_abs_error = std::max(r.max_abs_error, err);
      r.max_rel_error = std::max(r.max_rel_error, err / denom);
    }
  }
  return r;
}

}  // namespace topofg::testing
