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

// Reverse-mode automatic differentiation over dense tensors.
//
// Every op returns a Var whose node remembers its inputs and a closure that
// pushes the output gradient back into them. backward() walks the recorded
// graph in reverse topological order. Nothing is global except the per-thread
// grad-mode flag, so independent graphs can be built on different threads.

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "topofg/tensor.hpp"

namespace topofg {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Zero-initialised on first use.
  Tensor& ensure_grad();
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Accumulated gradient; zeros of the value's shape when nothing reached it.
  Tensor grad() const;
  void zero_grad() { node_->grad = Tensor(); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
// node that requires them. Throws if loss is not a single element.
void backward(const Var& loss);

// Constant (non-differentiable) input.
inline Var constant(Tensor t) { return Var(std::move(t), false); }

// ---- elementwise -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var abs(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }

// ---- reductions ------------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
// [A x B x C] -> [A x C], mean over the middle axis.
Var mean_axis1(const Var& a);

// ---- shape -----------------------------------------------------------------
Var reshape(const Var& a, Shape shape);
// Concatenation along axis 0; trailing dimensions must agree.
Var concat_rows(const std::vector<Var>& parts);
// Rows of a (axis 0, trailing dims flattened) in the given order.
Var gather_rows(const Var& a, const std::vector<std::size_t>& rows);
// [A x C] -> [A x B x C] by repetition over the new middle axis.
Var repeat_axis1(const Var& a, std::size_t b);
// out[i, j, :] = a[i, :] + b[j, :]; a is [A x C], b is [B x C].
Var outer_sum(const Var& a, const Var& b);

// ---- linear algebra --------------------------------------------------------
// [M x K] x [K x N] -> [M x N].
Var matmul(const Var& a, const Var& b);
// [M x K] x [N x K]^T -> [M x N].
Var matmul_nt(const Var& a, const Var& b);
// x[..., in] * w[in x out] + bias[out]; bias may be undefined.
Var linear(const Var& x, const Var& w, const Var& bias);

// ---- normalisation ---------------------------------------------------------
// Softmax over the last axis.
Var softmax(const Var& a);
// Layer norm over the last axis with affine gain/bias of that length.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// ---- attention -------------------------------------------------------------
// Scaled dot-product attention with `heads` heads splitting the feature axis.
// q: [B x T x E], k, v: [B x S x E]. When blocks is non-empty (length T == S),
// token t attends only to tokens carrying the same block id.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
              const std::vector<int>& blocks = {});

// ---- sampling --------------------------------------------------------------
// grid: [H x W x D]; points: [P x 2] as normalised (x, y) in [0,1]^2 where x
// runs along W. Cell (r, c) has its centre at ((c + .5) / W, (r + .5) / H).
// Coordinates are clamped to the border.
Var bilinear_sample(const Var& grid, const Var& points);

// loc[q,h,p] = ref[q] + offsets[q,h,p] * head_scale[h] / (W, H).
// ref: [P x 2]; offsets: [P x heads x points x 2] in cell units; head_scale: [heads].
Var deformable_locations(const Var& ref, const Var& offsets, const Var& head_scale,
                         std::size_t grid_h, std::size_t grid_w);

// out[q, h*dh + c] = sum_p weights[q,h,p] * sample(value[..., h*dh + c], loc[q,h,p]).
// value: [H x W x E]; loc: [P x heads x points x 2]; weights: [P x heads x points].
Var deformable_sample(const Var& value, const Var& loc, const Var& weights);

// ---- task-specific fused ops -----------------------------------------------
// out = m where m <= tau, alpha elsewhere (elementwise).
Var threshold_weights(const Var& m, double tau, double alpha);
// Row-weighted mean: out[i] = (sum_c a[i,c] * table[c]) / (sum_c a[i,c] + eps).
Var weighted_mean_rows(const Var& a, const Tensor& table, double eps = 1e-8);

// ---- losses ----------------------------------------------------------------
// Mean binary cross-entropy on logits. When weights is non-empty each element
// is weighted and the sum is divided by the total weight.
Var bce_with_logits(const Var& logits, const Tensor& target,
                    const Tensor& weights = Tensor());
// Mean over rows of 1 - (2 * sum(p * t) + smooth) / (sum(p) + sum(t) + smooth)
// with p = sigmoid(logits); logits and target are [R x C].
Var dice_loss(const Var& logits, const Tensor& target, double smooth = 1.0);

}  // namespace topofg
