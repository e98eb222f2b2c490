// Copyright 2026 The pass-reid Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pass/autograd.hpp"

namespace pass {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; derives independent child seeds from (seed, stream).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream = 0) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Uniform [0, 1) from the top 53 bits; identical across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Normal(0, std) truncated at two standard deviations.
inline Tensor trunc_normal(Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : t.data()) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    v = z * std;
  }
  return t;
}

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;
};

/// Ordered, named collection of learnable tensors.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor value, bool decay = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_.emplace(name, items_.size());
    Tensor grad(value.shape(), 0.0);
    items_.push_back(Parameter{std::move(name), std::move(value), std::move(grad), decay});
    return items_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }
  Parameter& at(const std::string& name) { return items_[index_of(name)]; }
  const Parameter& at(const std::string& name) const { return items_[index_of(name)]; }

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p.grad.fill(0.0);
  }

  /// Same names, order and shapes.
  bool same_layout(const ParamStore& other) const {
    if (items_.size() != other.items_.size()) return false;
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (items_[i].name != other.items_[i].name ||
          items_[i].value.shape() != other.items_[i].value.shape())
        return false;
    return true;
  }

 private:
  std::vector<Parameter> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Leaves of a ParamStore on one tape.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamStore& store, bool requires_grad) : store_(&store) {
    vars_.reserve(store.size());
    for (const auto& p : store.items()) vars_.push_back(tape.leaf(p.value, requires_grad));
  }

  const Var& operator[](const std::string& name) const { return vars_[store_->index_of(name)]; }
  const Var& operator[](std::size_t i) const { return vars_[i]; }
  const ParamStore& store() const { return *store_; }
  Tape& tape() const { return *vars_.front().tape(); }

  /// Adds the tape gradients of every leaf into `target` (same layout).
  void accumulate_grads(const Tape& tape, ParamStore& target) const {
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      const Tensor g = tape.grad(vars_[i]);
      auto& dst = target.items()[i].grad;
      for (std::size_t k = 0; k < g.numel(); ++k) dst[k] += g[k];
    }
  }

 private:
  const ParamStore* store_;
  std::vector<Var> vars_;
};

/// Cosine interpolation from `start` (step 0) to `end` (step `total`).
inline double cosine_schedule(double start, double end, std::size_t step, std::size_t total) {
  if (total == 0) return end;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return end + (start - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

/// Linear warmup to `base` over `warmup` steps, then cosine decay to `final_value`.
inline double warmup_cosine(double base, double final_value, std::size_t warmup, std::size_t step,
                            std::size_t total) {
  if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  return cosine_schedule(base, final_value, step - warmup, total > warmup ? total - warmup : 0);
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.04;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
};

/// Adam with decoupled weight decay, applied to parameters flagged `decay`.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& params, double lr) {
    if (m_.empty()) {
      for (const auto& p : params.items()) {
        m_.emplace_back(p.value.shape(), 0.0);
        v_.emplace_back(p.value.shape(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("AdamW: parameter layout changed");
    double clip = 1.0;
    if (cfg_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& p : params.items())
        for (double g : p.grad.data()) sq += g * g;
      const double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = params.items()[i];
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      const double wd = p.decay ? cfg_.weight_decay : 0.0;
      for (std::size_t k = 0; k < p.value.numel(); ++k) {
        const double g = p.grad[k] * clip;
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        const double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
        p.value[k] -= lr * (update + wd * p.value[k]);
      }
    }
  }

  std::size_t steps() const { return t_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(std::vector<Tensor> m, std::vector<Tensor> v, std::size_t t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace pass
