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

#include "topofg/config.hpp"

#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <variant>
#include <vector>

#include "topofg/binary_io.hpp"

namespace topofg {

namespace {

// std::uint64_t and std::size_t are the same type on LP64 targets.
static_assert(std::is_same_v<std::uint64_t, std::size_t>);
using FieldRef = std::variant<double*, std::size_t*, int*, bool*, std::string*>;

struct Field {
  const char* section;
  const char* key;
  FieldRef ref;
};

std::vector<Field> fields(RunConfig& c) {
  auto& s = c.scene;
  return {
      {"", "seed", &c.seed},
      {"", "train_scenes", &c.train_scenes},
      {"", "val_scenes", &c.val_scenes},
      {"scene", "x_min", &s.bounds.x_min},
      {"scene", "x_max", &s.bounds.x_max},
      {"scene", "y_min", &s.bounds.y_min},
      {"scene", "y_max", &s.bounds.y_max},
      {"scene", "grid_h", &s.grid_h},
      {"scene", "grid_w", &s.grid_w},
      {"scene", "feature_dim", &s.feature_dim},
      {"scene", "k", &s.k},
      {"scene", "min_roots", &s.min_roots},
      {"scene", "max_roots", &s.max_roots},
      {"scene", "min_lanes", &s.min_lanes},
      {"scene", "max_lanes", &s.max_lanes},
      {"scene", "p_fork", &s.p_fork},
      {"scene", "p_continue", &s.p_continue},
      {"scene", "p_merge", &s.p_merge},
      {"scene", "length_min", &s.length_min},
      {"scene", "length_max", &s.length_max},
      {"scene", "curvature_max", &s.curvature_max},
      {"scene", "root_heading_max", &s.root_heading_max},
      {"scene", "heading_max", &s.heading_max},
      {"scene", "margin", &s.margin},
      {"scene", "lane_width_cells", &s.lane_width_cells},
      {"scene", "distance_clip_cells", &s.distance_clip_cells},
      {"scene", "noise_sigma", &s.noise_sigma},
      {"scene", "position_channels", &s.position_channels},
      {"model", "d_model", &c.d_model},
      {"model", "num_queries", &c.num_queries},
      {"model", "decoder_layers", &c.decoder_layers},
      {"model", "mask_layers", &c.mask_layers},
      {"model", "heads", &c.heads},
      {"model", "points", &c.points},
      {"model", "ffn_hidden", &c.ffn_hidden},
      {"model", "tau", &c.tau},
      {"model", "alpha", &c.alpha},
      {"model", "tau_roi", &c.tau_roi},
      {"toggles", "lp", &c.lp},
      {"toggles", "gp", &c.gp},
      {"toggles", "fqi", &c.fqi},
      {"toggles", "srp", &c.srp},
      {"toggles", "btr", &c.btr},
      {"toggles", "dtr", &c.dtr},
      {"toggles", "geo", &c.geo},
      {"rbtr", "dn_groups", &c.dn_groups},
      {"rbtr", "dn_sigma", &c.dn_sigma},
      {"rbtr", "lambda", &c.lambda},
      {"rbtr", "theta", &c.theta},
      {"loss", "reg", &c.loss.reg},
      {"loss", "cls", &c.loss.cls},
      {"loss", "mask", &c.loss.mask},
      {"loss", "topo", &c.loss.topo},
      {"loss", "dn", &c.loss.dn},
      {"loss", "topo_pos_weight", &c.loss.topo_pos_weight},
      {"loss", "mask_match", &c.loss.mask_match},
      {"optim", "lr", &c.lr},
      {"optim", "warmup_steps", &c.warmup_steps},
      {"optim", "grad_clip", &c.grad_clip},
      {"optim", "beta1", &c.adam.beta1},
      {"optim", "beta2", &c.adam.beta2},
      {"optim", "eps", &c.adam.eps},
      {"optim", "weight_decay", &c.adam.weight_decay},
      {"train", "epochs", &c.epochs},
      {"train", "checkpoint_every", &c.checkpoint_every},
      {"paths", "dataset", &c.dataset_dir},
      {"paths", "out", &c.out_dir},
  };
}

std::string format_value(const FieldRef& ref) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%.17g", *p);
          std::string s = buf;
          if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
          return s;
        } else if constexpr (std::is_same_v<T, bool>) {
          return *p ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          return "\"" + *p + "\"";
        } else {
          return std::to_string(*p);
        }
      },
      ref);
}

template <class T>
bool parse_integer(const std::string& v, T& out) {
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  return ec == std::errc() && end == v.data() + v.size();
}

// Empty string on success, else the reason.
std::string assign_value(const FieldRef& ref, const std::string& v) {
  return std::visit(
      [&](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          char* end = nullptr;
          const double d = std::strtod(v.c_str(), &end);
          if (v.empty() || end != v.c_str() + v.size()) return "expected a number";
          *p = d;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (v == "true") *p = true;
          else if (v == "false") *p = false;
          else return "expected true or false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          if (v.size() < 2 || v.front() != '"' || v.back() != '"') return "expected a quoted string";
          *p = v.substr(1, v.size() - 2);
        } else {
          if (!parse_integer(v, *p)) return "expected an integer";
        }
        return {};
      },
      ref);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void validate(const RunConfig& c) {
  auto bad = [](const std::string& why) { throw std::invalid_argument("config: " + why); };
  validate(c.scene);
  if (c.scene.k < 2) bad("k must be >= 2");
  if (c.decoder_layers < 1) bad("decoder_layers must be >= 1");
  if (c.mask_layers < 1) bad("mask_layers must be >= 1");
  if (c.num_queries < 1) bad("num_queries must be >= 1");
  if (c.heads == 0 || c.d_model % c.heads != 0) bad("d_model must be a positive multiple of heads");
  if (c.d_model % 4 != 0) bad("d_model must be a multiple of 4");
  if (c.points == 0) bad("points must be >= 1");
  if (!(c.tau > 0.0 && c.tau < 1.0)) bad("tau must lie in (0,1)");
  if (!(c.alpha > 0.0)) bad("alpha must be > 0");
  if (!(c.lambda > 0.0)) bad("lambda must be > 0");
  if (c.dn_sigma < 0.0) bad("dn_sigma must be >= 0");
  if (!(c.lr > 0.0)) bad("lr must be > 0");
}

std::string serialize_config(const RunConfig& cfg) {
  RunConfig c = cfg;
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields(c)) {
    if (f.section != section) {
      section = f.section;
      out << "\n[" << section << "]\n";
    }
    out << f.key << " = " << format_value(f.ref) << "\n";
  }
  return out.str();
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig c;
  std::map<std::string, FieldRef> index;
  for (const auto& f : fields(c)) index.emplace(std::string(f.section) + "." + f.key, f.ref);
  std::string section;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t eol = std::min(text.find('\n', pos), text.size());
    const std::size_t offset = pos;
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (auto hash = line.find('#'); hash != std::string::npos && line.find('"') == std::string::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(source, offset, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, offset, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = index.find(section + "." + key);
    if (it == index.end()) throw ParseError(source, offset, "unknown key '" + (section.empty() ? key : section + "." + key) + "'");
    if (auto why = assign_value(it->second, value); !why.empty()) {
      throw ParseError(source, offset, key + ": " + why);
    }
  }
  try {
    validate(c);
  } catch (const std::invalid_argument& e) {
    throw ParseError(source, 0, e.what());
  }
  return c;
}

RunConfig load_config(const std::string& path) { return parse_config(read_file_text(path), path); }

std::string config_hash(const RunConfig& cfg) { return hex64(fnv1a64(serialize_config(cfg))); }

}  // namespace topofg
