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

#include "topofg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace topofg {

namespace {

thread_local bool g_grad_enabled = true;

Var make_result(Tensor value, std::vector<NodePtr> parents,
                std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

bool wants(const NodePtr& p) { return p && p->requires_grad; }

template <class F>
Var unary(const Var& a, F&& f, std::function<void(Node&)> bw) {
  Tensor out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_result(std::move(out), {a.node()}, std::move(bw));
}

}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.shape() != value.shape() || grad.size() != value.size()) {
    grad = Tensor(value.shape(), 0.0);
  }
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->grad.size() == node_->value.size() && !node_->grad.empty()) {
    return node_->grad;
  }
  return Tensor(node_->value.shape(), 0.0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward", loss.shape(), "loss must be a scalar");
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!wants(p)) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    if (wants(self.parents[0])) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.parents[1])) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (wants(pb)) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Var scale(const Var& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
  });
}

Var add_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (p->value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

namespace {
inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& a) {
  return unary(a, stable_sigmoid, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.value[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / p->value[i];
  });
}

Var abs(const Var& a) {
  return unary(a, [](double x) { return std::abs(x); }, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = p->value[i];
      g[i] += self.grad[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
    }
  });
}

// ---- reductions ------------------------------------------------------------

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return make_result(Tensor::scalar(s), {a.node()}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const double d = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d;
  });
}

Var mean(const Var& a) {
  const auto n = a.value().size();
  if (n == 0) throw ShapeError("mean", a.shape(), "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mean_axis1(const Var& a) {
  if (a.shape().size() != 3) throw ShapeError("mean_axis1", a.shape(), "expected rank 3");
  const std::size_t A = a.dim(0), B = a.dim(1), C = a.dim(2);
  if (B == 0) throw ShapeError("mean_axis1", a.shape(), "empty middle axis");
  Tensor out(Shape{A, C});
  const auto& x = a.value();
  const double inv = 1.0 / static_cast<double>(B);
  for (std::size_t i = 0; i < A; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      const double* row = x.data() + (i * B + j) * C;
      for (std::size_t c = 0; c < C; ++c) out[i * C + c] += row[c];
    }
    for (std::size_t c = 0; c < C; ++c) out[i * C + c] *= inv;
  }
  return make_result(std::move(out), {a.node()}, [A, B, C, inv](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < A; ++i)
      for (std::size_t j = 0; j < B; ++j)
        for (std::size_t c = 0; c < C; ++c)
          g[(i * B + j) * C + c] += self.grad[i * C + c] * inv;
  });
}

// ---- shape -----------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a.value().size()) throw ShapeError("reshape", a.shape(), shape);
  return make_result(a.value().reshaped(std::move(shape)), {a.node()}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (p.shape().empty() || t != tail) throw ShapeError("concat_rows", parts[0].shape(), p.shape());
    rows += p.dim(0);
    parents.push_back(p.node());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor out(shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.value().size();
  }
  return make_result(std::move(out), std::move(parents), [](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->value.size();
      if (wants(p)) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

Var gather_rows(const Var& a, const std::vector<std::size_t>& rows) {
  if (a.shape().empty()) throw ShapeError("gather_rows", a.shape(), "rank 0");
  const std::size_t R = a.dim(0);
  const std::size_t width = R ? a.value().size() / R : 0;
  for (auto r : rows) {
    if (r >= R) throw ShapeError("gather_rows", a.shape(), "row " + std::to_string(r));
  }
  Shape shape = a.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(a.value().data() + rows[i] * width, width, out.data() + i * width);
  }
  return make_result(std::move(out), {a.node()}, [rows, width](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < width; ++c) g[rows[i] * width + c] += self.grad[i * width + c];
  });
}

Var repeat_axis1(const Var& a, std::size_t b) {
  if (a.shape().size() != 2) throw ShapeError("repeat_axis1", a.shape(), "expected rank 2");
  const std::size_t A = a.dim(0), C = a.dim(1);
  Tensor out(Shape{A, b, C});
  for (std::size_t i = 0; i < A; ++i)
    for (std::size_t j = 0; j < b; ++j)
      std::copy_n(a.value().data() + i * C, C, out.data() + (i * b + j) * C);
  return make_result(std::move(out), {a.node()}, [A, b, C](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < A; ++i)
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t c = 0; c < C; ++c) g[i * C + c] += self.grad[(i * b + j) * C + c];
  });
}

Var outer_sum(const Var& a, const Var& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("outer_sum", a.shape(), b.shape());
  }
  const std::size_t A = a.dim(0), B = b.dim(0), C = a.dim(1);
  Tensor out(Shape{A, B, C});
  for (std::size_t i = 0; i < A; ++i)
    for (std::size_t j = 0; j < B; ++j) {
      double* o = out.data() + (i * B + j) * C;
      const double* x = a.value().data() + i * C;
      const double* y = b.value().data() + j * C;
      for (std::size_t c = 0; c < C; ++c) o[c] = x[c] + y[c];
    }
  return make_result(std::move(out), {a.node(), b.node()}, [A, B, C](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < A; ++i)
        for (std::size_t j = 0; j < B; ++j)
          for (std::size_t c = 0; c < C; ++c) g[i * C + c] += self.grad[(i * B + j) * C + c];
    }
    if (wants(pb)) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < A; ++i)
        for (std::size_t j = 0; j < B; ++j)
          for (std::size_t c = 0; c < C; ++c) g[j * C + c] += self.grad[(i * B + j) * C + c];
    }
  });
}

// ---- linear algebra --------------------------------------------------------

namespace {

// c[M x N] += a[M x K] * b[K x N]
void gemm_nn(const double* a, const double* b, double* c, std::size_t M, std::size_t K,
             std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    double* ci = c + i * N;
    const double* ai = a + i * K;
    for (std::size_t p = 0; p < K; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * N;
      for (std::size_t j = 0; j < N; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[M x K] += g[M x N] * b[K x N]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t M, std::size_t K,
             std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* gi = g + i * N;
    double* ci = c + i * K;
    for (std::size_t p = 0; p < K; ++p) {
      const double* bp = b + p * N;
      double s = 0.0;
      for (std::size_t j = 0; j < N; ++j) s += gi[j] * bp[j];
      ci[p] += s;
    }
  }
}

// c[K x N] += a[M x K]^T * g[M x N]
void gemm_tn(const double* a, const double* g, double* c, std::size_t M, std::size_t K,
             std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* ai = a + i * K;
    const double* gi = g + i * N;
    for (std::size_t p = 0; p < K; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * N;
      for (std::size_t j = 0; j < N; ++j) cp[j] += av * gi[j];
    }
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul", a.shape(), b.shape());
  }
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor out(Shape{M, N});
  gemm_nn(a.value().data(), b.value().data(), out.data(), M, K, N);
  return make_result(std::move(out), {a.node(), b.node()}, [M, K, N](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) gemm_nt(self.grad.data(), pb->value.data(), pa->ensure_grad().data(), M, K, N);
    if (wants(pb)) gemm_tn(pa->value.data(), self.grad.data(), pb->ensure_grad().data(), M, K, N);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_nt", a.shape(), b.shape());
  }
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(0);
  Tensor out(Shape{M, N});
  gemm_nt(a.value().data(), b.value().data(), out.data(), M, N, K);
  return make_result(std::move(out), {a.node(), b.node()}, [M, K, N](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) gemm_nn(self.grad.data(), pb->value.data(), pa->ensure_grad().data(), M, N, K);
    if (wants(pb)) gemm_tn(self.grad.data(), pa->value.data(), pb->ensure_grad().data(), M, N, K);
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  if (w.shape().size() != 2 || x.shape().empty() || x.shape().back() != w.dim(0)) {
    throw ShapeError("linear", x.shape(), w.shape());
  }
  const std::size_t K = w.dim(0), N = w.dim(1);
  if (bias.defined() && bias.shape() != Shape{N}) throw ShapeError("linear(bias)", w.shape(), bias.shape());
  const std::size_t M = x.value().size() / K;
  Shape shape = x.shape();
  shape.back() = N;
  Tensor out(shape);
  if (bias.defined()) {
    for (std::size_t i = 0; i < M; ++i) std::copy_n(bias.value().data(), N, out.data() + i * N);
  }
  gemm_nn(x.value().data(), w.value().data(), out.data(), M, K, N);
  std::vector<NodePtr> parents{x.node(), w.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return make_result(std::move(out), std::move(parents), [M, K, N](Node& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    if (wants(px)) gemm_nt(self.grad.data(), pw->value.data(), px->ensure_grad().data(), M, K, N);
    if (wants(pw)) gemm_tn(px->value.data(), self.grad.data(), pw->ensure_grad().data(), M, K, N);
    if (self.parents.size() > 2 && wants(self.parents[2])) {
      auto& g = self.parents[2]->ensure_grad();
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) g[j] += self.grad[i * N + j];
    }
  });
}

// ---- normalisation ---------------------------------------------------------

Var softmax(const Var& a) {
  if (a.shape().empty()) throw ShapeError("softmax", a.shape(), "rank 0");
  const std::size_t C = a.shape().back();
  if (C == 0) throw ShapeError("softmax", a.shape(), "empty axis");
  const std::size_t R = a.value().size() / C;
  Tensor out(a.shape());
  for (std::size_t r = 0; r < R; ++r) {
    const double* x = a.value().data() + r * C;
    double* o = out.data() + r * C;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, x[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += (o[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < C; ++c) o[c] /= s;
  }
  return make_result(std::move(out), {a.node()}, [R, C](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < R; ++r) {
      const double* y = self.value.data() + r * C;
      const double* dy = self.grad.data() + r * C;
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += y[c] * dy[c];
      for (std::size_t c = 0; c < C; ++c) g[r * C + c] += y[c] * (dy[c] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  if (x.shape().empty()) throw ShapeError("layer_norm", x.shape(), "rank 0");
  const std::size_t C = x.shape().back();
  if (gain.shape() != Shape{C}) throw ShapeError("layer_norm(gain)", x.shape(), gain.shape());
  if (bias.shape() != Shape{C}) throw ShapeError("layer_norm(bias)", x.shape(), bias.shape());
  const std::size_t R = x.value().size() / C;
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(R);
  for (std::size_t r = 0; r < R; ++r) {
    const double* xi = x.value().data() + r * C;
    double mu = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += xi[c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (xi[c] - mu) * (xi[c] - mu);
    var /= static_cast<double>(C);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (xi[c] - mu) * is;
      xhat[r * C + c] = h;
      out[r * C + c] = h * gain.value()[c] + bias.value()[c];
    }
  }
  return make_result(
      std::move(out), {x.node(), gain.node(), bias.node()},
      [R, C, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        if (wants(pg)) {
          auto& g = pg->ensure_grad();
          for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) g[c] += self.grad[r * C + c] * xhat[r * C + c];
        }
        if (wants(pb)) {
          auto& g = pb->ensure_grad();
          for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) g[c] += self.grad[r * C + c];
        }
        if (wants(px)) {
          auto& g = px->ensure_grad();
          const double invC = 1.0 / static_cast<double>(C);
          for (std::size_t r = 0; r < R; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              const double dh = self.grad[r * C + c] * pg->value[c];
              s1 += dh;
              s2 += dh * xhat[r * C + c];
            }
            for (std::size_t c = 0; c < C; ++c) {
              const double dh = self.grad[r * C + c] * pg->value[c];
              g[r * C + c] += inv_std[r] * (dh - s1 * invC - xhat[r * C + c] * s2 * invC);
            }
          }
        }
      });
}

// ---- attention -------------------------------------------------------------

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
              const std::vector<int>& blocks) {
  if (q.shape().size() != 3 || k.shape().size() != 3 || k.shape() != v.shape() ||
      q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2)) {
    throw ShapeError("attention", q.shape(), k.shape());
  }
  const std::size_t B = q.dim(0), T = q.dim(1), S = k.dim(1), E = q.dim(2);
  if (heads == 0 || E % heads != 0) throw ShapeError("attention", q.shape(), "heads must divide features");
  if (!blocks.empty() && (blocks.size() != T || T != S)) {
    throw ShapeError("attention", q.shape(), "block ids need length T == S");
  }
  const std::size_t dh = E / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out(Shape{B, T, E});
  // probs[b, h, t, s]
  auto probs = std::make_shared<std::vector<double>>(B * heads * T * S, 0.0);
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  std::vector<double> row(S);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < T; ++t) {
        const double* qt = Q.data() + (b * T + t) * E + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < S; ++s) {
          if (!blocks.empty() && blocks[s] != blocks[t]) continue;
          const double* ks = K.data() + (b * S + s) * E + h * dh;
          double d = 0.0;
          for (std::size_t c = 0; c < dh; ++c) d += qt[c] * ks[c];
          row[s] = d * sc;
          mx = std::max(mx, row[s]);
        }
        double* p = probs->data() + ((b * heads + h) * T + t) * S;
        double z = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
          if (!blocks.empty() && blocks[s] != blocks[t]) continue;
          z += (p[s] = std::exp(row[s] - mx));
        }
        double* o = out.data() + (b * T + t) * E + h * dh;
        for (std::size_t s = 0; s < S; ++s) {
          if (p[s] == 0.0) continue;
          p[s] /= z;
          const double* vs = V.data() + (b * S + s) * E + h * dh;
          for (std::size_t c = 0; c < dh; ++c) o[c] += p[s] * vs[c];
        }
      }
  return make_result(
      std::move(out), {q.node(), k.node(), v.node()},
      [B, T, S, E, heads, dh, sc, probs](Node& self) {
        auto& pq = self.parents[0];
        auto& pk = self.parents[1];
        auto& pv = self.parents[2];
        const bool gq = wants(pq), gk = wants(pk), gv = wants(pv);
        double* dq = gq ? pq->ensure_grad().data() : nullptr;
        double* dk = gk ? pk->ensure_grad().data() : nullptr;
        double* dv = gv ? pv->ensure_grad().data() : nullptr;
        const double* Qv = pq->value.data();
        const double* Kv = pk->value.data();
        const double* Vv = pv->value.data();
        std::vector<double> dp(S);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < T; ++t) {
              const double* p = probs->data() + ((b * heads + h) * T + t) * S;
              const double* go = self.grad.data() + (b * T + t) * E + h * dh;
              double dot = 0.0;
              for (std::size_t s = 0; s < S; ++s) {
                if (p[s] == 0.0) {
                  dp[s] = 0.0;
                  continue;
                }
                const double* vs = Vv + (b * S + s) * E + h * dh;
                double d = 0.0;
                for (std::size_t c = 0; c < dh; ++c) d += go[c] * vs[c];
                dp[s] = d;
                dot += p[s] * d;
                if (gv) {
                  double* dvs = dv + (b * S + s) * E + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dvs[c] += p[s] * go[c];
                }
              }
              const double* qt = Qv + (b * T + t) * E + h * dh;
              for (std::size_t s = 0; s < S; ++s) {
                if (p[s] == 0.0) continue;
                const double ds = p[s] * (dp[s] - dot) * sc;
                const double* ks = Kv + (b * S + s) * E + h * dh;
                if (gq) {
                  double* dqt = dq + (b * T + t) * E + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dqt[c] += ds * ks[c];
                }
                if (gk) {
                  double* dks = dk + (b * S + s) * E + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dks[c] += ds * qt[c];
                }
              }
            }
      });
}

// ---- sampling --------------------------------------------------------------

namespace {

struct BilinearTap {
  std::size_t r0, r1, c0, c1;
  double fu, fv;
  bool u_free, v_free;  // false when the coordinate was clamped
};

BilinearTap bilinear_tap(double x, double y, std::size_t H, std::size_t W) {
  BilinearTap t{};
  double u = x * static_cast<double>(W) - 0.5;
  double v = y * static_cast<double>(H) - 0.5;
  const double umax = static_cast<double>(W - 1);
  const double vmax = static_cast<double>(H - 1);
  t.u_free = u > 0.0 && u < umax;
  t.v_free = v > 0.0 && v < vmax;
  if (!std::isfinite(u)) u = 0.0;
  if (!std::isfinite(v)) v = 0.0;
  u = std::clamp(u, 0.0, umax);
  v = std::clamp(v, 0.0, vmax);
  t.c0 = W > 1 ? std::min(static_cast<std::size_t>(u), W - 2) : 0;
  t.r0 = H > 1 ? std::min(static_cast<std::size_t>(v), H - 2) : 0;
  t.c1 = W > 1 ? t.c0 + 1 : 0;
  t.r1 = H > 1 ? t.r0 + 1 : 0;
  t.fu = u - static_cast<double>(t.c0);
  t.fv = v - static_cast<double>(t.r0);
  return t;
}

// Samples channels [off, off + n) of grid [H x W x D] into out.
void sample_into(const double* grid, std::size_t W, std::size_t D, const BilinearTap& t,
                 std::size_t off, std::size_t n, double weight, double* out) {
  const double w00 = (1 - t.fv) * (1 - t.fu) * weight, w01 = (1 - t.fv) * t.fu * weight;
  const double w10 = t.fv * (1 - t.fu) * weight, w11 = t.fv * t.fu * weight;
  const double* g00 = grid + (t.r0 * W + t.c0) * D + off;
  const double* g01 = grid + (t.r0 * W + t.c1) * D + off;
  const double* g10 = grid + (t.r1 * W + t.c0) * D + off;
  const double* g11 = grid + (t.r1 * W + t.c1) * D + off;
  for (std::size_t c = 0; c < n; ++c) {
    out[c] += w00 * g00[c] + w01 * g01[c] + w10 * g10[c] + w11 * g11[c];
  }
}

// Backward of sample_into for the grid values: scatter weight * go into dgrid.
void scatter_grid(double* dgrid, std::size_t W, std::size_t D, const BilinearTap& t,
                  std::size_t off, std::size_t n, double weight, const double* go) {
  const double w00 = (1 - t.fv) * (1 - t.fu) * weight, w01 = (1 - t.fv) * t.fu * weight;
  const double w10 = t.fv * (1 - t.fu) * weight, w11 = t.fv * t.fu * weight;
  double* g00 = dgrid + (t.r0 * W + t.c0) * D + off;
  double* g01 = dgrid + (t.r0 * W + t.c1) * D + off;
  double* g10 = dgrid + (t.r1 * W + t.c0) * D + off;
  double* g11 = dgrid + (t.r1 * W + t.c1) * D + off;
  for (std::size_t c = 0; c < n; ++c) {
    g00[c] += w00 * go[c];
    g01[c] += w01 * go[c];
    g10[c] += w10 * go[c];
    g11[c] += w11 * go[c];
  }
}

// d(sum_c go[c] * sample[c]) / d(x, y); also returns go . sample for weight grads.
struct TapGrad {
  double dx, dy, dot;
};

TapGrad tap_grad(const double* grid, std::size_t H, std::size_t W, std::size_t D,
                 const BilinearTap& t, std::size_t off, std::size_t n, const double* go) {
  const double* g00 = grid + (t.r0 * W + t.c0) * D + off;
  const double* g01 = grid + (t.r0 * W + t.c1) * D + off;
  const double* g10 = grid + (t.r1 * W + t.c0) * D + off;
  const double* g11 = grid + (t.r1 * W + t.c1) * D + off;
  double du = 0.0, dv = 0.0, dot = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    du += go[c] * ((1 - t.fv) * (g01[c] - g00[c]) + t.fv * (g11[c] - g10[c]));
    dv += go[c] * ((1 - t.fu) * (g10[c] - g00[c]) + t.fu * (g11[c] - g01[c]));
    dot += go[c] * ((1 - t.fv) * (1 - t.fu) * g00[c] + (1 - t.fv) * t.fu * g01[c] +
                    t.fv * (1 - t.fu) * g10[c] + t.fv * t.fu * g11[c]);
  }
  TapGrad r{};
  r.dx = (t.u_free && W > 1) ? du * static_cast<double>(W) : 0.0;
  r.dy = (t.v_free && H > 1) ? dv * static_cast<double>(H) : 0.0;
  r.dot = dot;
  return r;
}

}  // namespace

Var bilinear_sample(const Var& grid, const Var& points) {
  if (grid.shape().size() != 3 || grid.value().empty()) {
    throw ShapeError("bilinear_sample", grid.shape(), "grid must be non-empty H x W x D");
  }
  if (points.shape().size() != 2 || points.dim(1) != 2) {
    throw ShapeError("bilinear_sample", grid.shape(), points.shape());
  }
  const std::size_t H = grid.dim(0), W = grid.dim(1), D = grid.dim(2), P = points.dim(0);
  Tensor out(Shape{P, D});
  std::vector<BilinearTap> taps(P);
  for (std::size_t i = 0; i < P; ++i) {
    taps[i] = bilinear_tap(points.value()[2 * i], points.value()[2 * i + 1], H, W);
    sample_into(grid.value().data(), W, D, taps[i], 0, D, 1.0, out.data() + i * D);
  }
  return make_result(std::move(out), {grid.node(), points.node()},
                     [H, W, D, P, taps = std::move(taps)](Node& self) {
                       auto& pg = self.parents[0];
                       auto& pp = self.parents[1];
                       if (wants(pg)) {
                         double* dg = pg->ensure_grad().data();
                         for (std::size_t i = 0; i < P; ++i)
                           scatter_grid(dg, W, D, taps[i], 0, D, 1.0, self.grad.data() + i * D);
                       }
                       if (wants(pp)) {
                         auto& dp = pp->ensure_grad();
                         for (std::size_t i = 0; i < P; ++i) {
                           auto tg = tap_grad(pg->value.data(), H, W, D, taps[i], 0, D,
                                              self.grad.data() + i * D);
                           dp[2 * i] += tg.dx;
                           dp[2 * i + 1] += tg.dy;
                         }
                       }
                     });
}

Var deformable_locations(const Var& ref, const Var& offsets, const Var& head_scale,
                         std::size_t grid_h, std::size_t grid_w) {
  if (ref.shape().size() != 2 || ref.dim(1) != 2) throw ShapeError("deformable_locations", ref.shape(), "expected P x 2");
  if (offsets.shape().size() != 4 || offsets.dim(0) != ref.dim(0) || offsets.dim(3) != 2) {
    throw ShapeError("deformable_locations", ref.shape(), offsets.shape());
  }
  const std::size_t P = ref.dim(0), Hd = offsets.dim(1), Pt = offsets.dim(2);
  if (head_scale.shape() != Shape{Hd}) throw ShapeError("deformable_locations", offsets.shape(), head_scale.shape());
  const double sx = 1.0 / static_cast<double>(grid_w), sy = 1.0 / static_cast<double>(grid_h);
  Tensor out(offsets.shape());
  const auto& R = ref.value();
  const auto& O = offsets.value();
  const auto& S = head_scale.value();
  for (std::size_t q = 0; q < P; ++q)
    for (std::size_t h = 0; h < Hd; ++h)
      for (std::size_t p = 0; p < Pt; ++p) {
        const std::size_t i = ((q * Hd + h) * Pt + p) * 2;
        out[i] = R[2 * q] + O[i] * S[h] * sx;
        out[i + 1] = R[2 * q + 1] + O[i + 1] * S[h] * sy;
      }
  return make_result(std::move(out), {ref.node(), offsets.node(), head_scale.node()},
                     [P, Hd, Pt, sx, sy](Node& self) {
                       auto& pr = self.parents[0];
                       auto& po = self.parents[1];
                       auto& ps = self.parents[2];
                       const auto& g = self.grad;
                       for (std::size_t q = 0; q < P; ++q)
                         for (std::size_t h = 0; h < Hd; ++h)
                           for (std::size_t p = 0; p < Pt; ++p) {
                             const std::size_t i = ((q * Hd + h) * Pt + p) * 2;
                             if (wants(pr)) {
                               auto& dr = pr->ensure_grad();
                               dr[2 * q] += g[i];
                               dr[2 * q + 1] += g[i + 1];
                             }
                             if (wants(po)) {
                               auto& d = po->ensure_grad();
                               d[i] += g[i] * ps->value[h] * sx;
                               d[i + 1] += g[i + 1] * ps->value[h] * sy;
                             }
                             if (wants(ps)) {
                               auto& d = ps->ensure_grad();
                               d[h] += g[i] * po->value[i] * sx + g[i + 1] * po->value[i + 1] * sy;
                             }
                           }
                     });
}

Var deformable_sample(const Var& value, const Var& loc, const Var& weights) {
  if (value.shape().size() != 3 || value.value().empty()) {
    throw ShapeError("deformable_sample", value.shape(), "value must be non-empty H x W x E");
  }
  if (loc.shape().size() != 4 || loc.dim(3) != 2) throw ShapeError("deformable_sample", loc.shape(), "expected P x heads x points x 2");
  if (weights.shape() != Shape{loc.dim(0), loc.dim(1), loc.dim(2)}) {
    throw ShapeError("deformable_sample", loc.shape(), weights.shape());
  }
  const std::size_t H = value.dim(0), W = value.dim(1), E = value.dim(2);
  const std::size_t P = loc.dim(0), Hd = loc.dim(1), Pt = loc.dim(2);
  if (E % Hd != 0) throw ShapeError("deformable_sample", value.shape(), "heads must divide channels");
  const std::size_t dh = E / Hd;
  Tensor out(Shape{P, E});
  std::vector<BilinearTap> taps(P * Hd * Pt);
  for (std::size_t q = 0; q < P; ++q)
    for (std::size_t h = 0; h < Hd; ++h)
      for (std::size_t p = 0; p < Pt; ++p) {
        const std::size_t i = (q * Hd + h) * Pt + p;
        const double x = loc.value()[2 * i], y = loc.value()[2 * i + 1];
        if (!std::isfinite(x) || !std::isfinite(y)) {
          throw std::domain_error("deformable_sample: non-finite sampling location");
        }
        taps[i] = bilinear_tap(x, y, H, W);
        sample_into(value.value().data(), W, E, taps[i], h * dh, dh, weights.value()[i],
                    out.data() + q * E + h * dh);
      }
  return make_result(
      std::move(out), {value.node(), loc.node(), weights.node()},
      [H, W, E, P, Hd, Pt, dh, taps = std::move(taps)](Node& self) {
        auto& pv = self.parents[0];
        auto& pl = self.parents[1];
        auto& pw = self.parents[2];
        const bool gv = wants(pv), gl = wants(pl), gw = wants(pw);
        for (std::size_t q = 0; q < P; ++q)
          for (std::size_t h = 0; h < Hd; ++h)
            for (std::size_t p = 0; p < Pt; ++p) {
              const std::size_t i = (q * Hd + h) * Pt + p;
              const double* go = self.grad.data() + q * E + h * dh;
              const double w = pw->value[i];
              if (gv) scatter_grid(pv->ensure_grad().data(), W, E, taps[i], h * dh, dh, w, go);
              if (gl || gw) {
                auto tg = tap_grad(pv->value.data(), H, W, E, taps[i], h * dh, dh, go);
                if (gl) {
                  auto& dl = pl->ensure_grad();
                  dl[2 * i] += w * tg.dx;
                  dl[2 * i + 1] += w * tg.dy;
                }
                if (gw) pw->ensure_grad()[i] += tg.dot;
              }
            }
      });
}

// ---- task-specific fused ops -----------------------------------------------

Var threshold_weights(const Var& m, double tau, double alpha) {
  return unary(m, [tau, alpha](double x) { return x <= tau ? x : alpha; },
               [tau](Node& self) {
                 auto& p = self.parents[0];
                 auto& g = p->ensure_grad();
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   if (p->value[i] <= tau) g[i] += self.grad[i];
                 }
               });
}

Var weighted_mean_rows(const Var& a, const Tensor& table, double eps) {
  if (a.shape().size() != 2 || table.rank() != 2 || a.dim(1) != table.dim(0)) {
    throw ShapeError("weighted_mean_rows", a.shape(), table.shape());
  }
  const std::size_t N = a.dim(0), C = a.dim(1), D = table.dim(1);
  Tensor out(Shape{N, D});
  std::vector<double> denom(N);
  gemm_nn(a.value().data(), table.data(), out.data(), N, C, D);
  for (std::size_t i = 0; i < N; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += a.value()[i * C + c];
    denom[i] = s + eps;
    for (std::size_t d = 0; d < D; ++d) out[i * D + d] /= denom[i];
  }
  return make_result(std::move(out), {a.node()},
                     [N, C, D, table, denom = std::move(denom)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < N; ++i) {
                         const double* go = self.grad.data() + i * D;
                         const double* y = self.value.data() + i * D;
                         double ydot = 0.0;
                         for (std::size_t d = 0; d < D; ++d) ydot += go[d] * y[d];
                         for (std::size_t c = 0; c < C; ++c) {
                           const double* tc = table.data() + c * D;
                           double s = 0.0;
                           for (std::size_t d = 0; d < D; ++d) s += go[d] * tc[d];
                           g[i * C + c] += (s - ydot) / denom[i];
                         }
                       }
                     });
}

// ---- losses ----------------------------------------------------------------

Var bce_with_logits(const Var& logits, const Tensor& target, const Tensor& weights) {
  if (logits.shape() != target.shape()) throw ShapeError("bce_with_logits", logits.shape(), target.shape());
  if (!weights.empty() && weights.shape() != target.shape()) {
    throw ShapeError("bce_with_logits(weights)", target.shape(), weights.shape());
  }
  const std::size_t n = target.size();
  if (n == 0) throw ShapeError("bce_with_logits", logits.shape(), "empty input");
  double total_w = 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits.value()[i];
    const double w = weights.empty() ? 1.0 : weights[i];
    total_w += w;
    s += w * (std::max(x, 0.0) - x * target[i] + std::log1p(std::exp(-std::abs(x))));
  }
  if (total_w <= 0.0) throw std::invalid_argument("bce_with_logits: total weight must be positive");
  return make_result(Tensor::scalar(s / total_w), {logits.node()},
                     [target, weights, total_w](Node& self) {
                       auto& p = self.parents[0];
                       auto& g = p->ensure_grad();
                       const double d = self.grad[0] / total_w;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double w = weights.empty() ? 1.0 : weights[i];
                         g[i] += d * w * (stable_sigmoid(p->value[i]) - target[i]);
                       }
                     });
}


Var dice_loss(const Var& logits, const Tensor& target, double smooth) {
  if (logits.shape().size() != 2 || logits.shape() != target.shape()) {
    throw ShapeError("dice_loss", logits.shape(), target.shape());
  }
  const std::size_t R = logits.dim(0), C = logits.dim(1);
  if (R == 0) throw ShapeError("dice_loss", logits.shape(), "empty input");
  std::vector<double> inter(R, 0.0), total(R, 0.0);
  double s = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      const double p = stable_sigmoid(logits.value()[r * C + c]);
      inter[r] += p * target[r * C + c];
      total[r] += p + target[r * C + c];
    }
    s += 1.0 - (2.0 * inter[r] + smooth) / (total[r] + smooth);
  }
  return make_result(Tensor::scalar(s / static_cast<double>(R)), {logits.node()},
                     [target, inter, total, smooth, R, C](Node& self) {
                       auto& p = self.parents[0];
                       auto& g = p->ensure_grad();
                       const double d = self.grad[0] / static_cast<double>(R);
                       for (std::size_t r = 0; r < R; ++r) {
                         const double den = total[r] + smooth;
                         const double num = 2.0 * inter[r] + smooth;
                         for (std::size_t c = 0; c < C; ++c) {
                           const double sg = stable_sigmoid(p->value[r * C + c]);
                           const double dp = -(2.0 * target[r * C + c] * den - num) / (den * den);
                           g[r * C + c] += d * dp * sg * (1.0 - sg);
                         }
                       }
                     });
}

}  // namespace topofg
