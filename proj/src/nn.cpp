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

#include "topofg/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "topofg/binary_io.hpp"

namespace topofg {

Var ParameterStore::create(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Entry e;
  e.name = name;
  e.first_moment = Tensor(init.shape(), 0.0);
  e.second_moment = Tensor(init.shape(), 0.0);
  e.param = Var(std::move(init), true);
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
  return entries_.back().param;
}

const Var& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second].param;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.param.value().size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.param.zero_grad();
}

std::map<std::string, Tensor> ParameterStore::gradients() const {
  std::map<std::string, Tensor> out;
  for (const auto& e : entries_) out[e.name] = e.param.grad();
  return out;
}

namespace {

void adamw_update(ParameterStore::Entry& e, const Tensor& g, double lr, std::uint64_t t,
                  const AdamWConfig& cfg) {
  auto& p = e.param.mutable_value();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g.empty() ? 0.0 : g[i];
    e.first_moment[i] = cfg.beta1 * e.first_moment[i] + (1.0 - cfg.beta1) * gi;
    e.second_moment[i] = cfg.beta2 * e.second_moment[i] + (1.0 - cfg.beta2) * gi * gi;
    const double mhat = e.first_moment[i] / bc1;
    const double vhat = e.second_moment[i] / bc2;
    p[i] -= lr * cfg.weight_decay * p[i];
    p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

void check_finite(const std::string& name, const Tensor& g) {
  for (double v : g.values()) {
    if (!std::isfinite(v)) throw std::domain_error("non-finite gradient for parameter " + name);
  }
}

}  // namespace

void optimizer_step(ParameterStore& store, double lr, const AdamWConfig& cfg) {
  for (const auto& e : store.entries()) check_finite(e.name, e.param.node()->grad);
  const std::uint64_t t = store.step() + 1;
  for (auto& e : store.entries()) {
    const Tensor& g = e.param.node()->grad;
    adamw_update(e, g.size() == e.param.value().size() ? g : Tensor(), lr, t, cfg);
  }
  store.set_step(t);
}

void optimizer_step(ParameterStore& store, const std::map<std::string, Tensor>& grads,
                    double lr, const AdamWConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (!store.contains(name)) throw std::out_of_range("gradient for unknown parameter: " + name);
    if (g.shape() != store.get(name).shape()) throw ShapeError("optimizer_step(" + name + ")", g.shape(), store.get(name).shape());
    check_finite(name, g);
  }
  const std::uint64_t t = store.step() + 1;
  for (auto& e : store.entries()) {
    auto it = grads.find(e.name);
    adamw_update(e, it == grads.end() ? Tensor() : it->second, lr, t, cfg);
  }
  store.set_step(t);
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& e : store.entries()) {
    for (double v : e.param.node()->grad.values()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& e : store.entries()) {
      for (double& v : e.param.node()->grad.values()) v *= f;
    }
  }
  return norm;
}

double warmup_lr(double base_lr, std::uint64_t step, std::uint64_t warmup_steps) {
  if (warmup_steps == 0 || step >= warmup_steps) return base_lr;
  return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, SeededRng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(Shape{fan_in, fan_out});
  for (double& v : t.values()) v = rng.uniform(-a, a);
  return t;
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in,
               std::size_t out, SeededRng& rng, bool with_bias) {
  weight = store.create(name + ".weight", xavier_uniform(in, out, rng));
  if (with_bias) bias = store.create(name + ".bias", Tensor(Shape{out}, 0.0));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim) {
  gain = store.create(name + ".gain", Tensor(Shape{dim}, 1.0));
  bias = store.create(name + ".bias", Tensor(Shape{dim}, 0.0));
}

Mlp::Mlp(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& dims,
         SeededRng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("Mlp needs at least input and output dims");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    layers.emplace_back(store, name + "." + std::to_string(i), dims[i], dims[i + 1], rng);
  }
}

Var Mlp::operator()(const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name,
                                       std::size_t dim, std::size_t heads, SeededRng& rng)
    : q(store, name + ".q", dim, dim, rng),
      k(store, name + ".k", dim, dim, rng),
      v(store, name + ".v", dim, dim, rng),
      out(store, name + ".out", dim, dim, rng),
      heads(heads) {}

Var MultiHeadAttention::operator()(const Var& query, const Var& key, const Var& value,
                                   const std::vector<int>& blocks) const {
  return out(attention(q(query), k(key), v(value), heads, blocks));
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'O', 'P', 'O', 'F', 'G', 'C', 'K'};

void write_meta(BinaryWriter& w, const CheckpointMeta& meta) {
  w.u64(meta.fields.size());
  for (const auto& [k, v] : meta.fields) {
    w.str(k);
    w.str(v);
  }
}

CheckpointMeta read_meta(BinaryReader& r) {
  CheckpointMeta meta;
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    auto k = r.str();
    meta.fields[k] = r.str();
  }
  return meta;
}

BinaryReader open_checkpoint(const std::filesystem::path& path) {
  BinaryReader r(read_file_bytes(path), path.string());
  const auto magic = r.bytes(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) r.fail("bad checkpoint magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version));
  }
  return r;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                     const CheckpointMeta& meta) {
  BinaryWriter w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  write_meta(w, meta);
  w.u64(store.step());
  w.u64(store.size());
  for (const auto& e : store.entries()) {
    w.str(e.name);
    const auto& shape = e.param.shape();
    w.u64(shape.size());
    for (auto d : shape) w.u64(d);
    w.f64s(e.param.value().values());
    w.f64s(e.first_moment.values());
    w.f64s(e.second_moment.values());
  }
  write_file_bytes(path, w.buffer());
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  auto r = open_checkpoint(path);
  return read_meta(r);
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParameterStore& store) {
  auto r = open_checkpoint(path);
  auto meta = read_meta(r);
  const auto step = r.u64();
  const auto count = r.u64();
  struct Loaded {
    std::size_t index;
    std::vector<double> value, m1, m2;
  };
  std::vector<Loaded> loaded;
  std::vector<bool> seen(store.size(), false);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = r.str();
    const auto rank = r.u64();
    if (rank > 8) r.fail("implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (!store.contains(name)) r.fail("checkpoint parameter not in model: " + name);
    const auto& target = store.get(name);
    if (target.shape() != shape) {
      throw ShapeError("load_checkpoint(" + name + ")", shape, target.shape());
    }
    std::size_t idx = 0;
    while (store.entries()[idx].name != name) ++idx;
    const auto n = shape_numel(shape);
    Loaded l{idx, r.f64s(n), r.f64s(n), r.f64s(n)};
    seen[idx] = true;
    loaded.push_back(std::move(l));
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) r.fail("model parameter missing from checkpoint: " + store.entries()[i].name);
  }
  for (auto& l : loaded) {
    auto& e = store.entries()[l.index];
    e.param.mutable_value().storage() = std::move(l.value);
    e.first_moment.storage() = std::move(l.m1);
    e.second_moment.storage() = std::move(l.m2);
  }
  store.set_step(step);
  return meta;
}

}  // namespace topofg
