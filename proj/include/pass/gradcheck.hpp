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

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "pass/autograd.hpp"
#include "pass/params.hpp"

namespace pass {

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences and returns max |analytic - numeric| / max(1, |numeric|).
///
/// `loss_fn(Tape&, std::span<const Var>)` must build a scalar loss from leaf
/// Vars bound to the given tensors, in order. Each tensor is perturbed in
/// place and restored afterwards.
template <class LossFn>
double finite_diff_check(LossFn&& loss_fn, std::span<Tensor* const> params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");

  auto evaluate = [&](bool with_grad, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (Tensor* p : params) leaves.push_back(tape.leaf(*p, with_grad));
    Var loss = loss_fn(tape, std::span<const Var>(leaves));
    const double v = loss.value().item();
    if (!std::isfinite(v)) throw std::runtime_error("finite_diff_check: non-finite loss");
    if (grads) {
      tape.backward(loss);
      for (const Var& l : leaves) grads->push_back(tape.grad(l));
    }
    return v;
  };

  std::vector<Tensor> analytic;
  evaluate(true, &analytic);

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = t[i];
      t[i] = saved + eps;
      const double up = evaluate(false, nullptr);
      t[i] = saved - eps;
      const double down = evaluate(false, nullptr);
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      if (!std::isfinite(a)) throw std::runtime_error("finite_diff_check: non-finite gradient");
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

/// Same check for a loss over a whole parameter store. `loss_fn(const
/// BoundParams&)` returns a scalar Var; every `stride`-th coordinate of every
/// tensor is perturbed.
template <class LossFn>
double finite_diff_check_store(LossFn&& loss_fn, ParamStore& store, double eps, std::size_t stride = 1) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  if (stride == 0) throw std::invalid_argument("finite_diff_check: stride must be positive");
  auto evaluate = [&](bool with_grad, std::vector<Tensor>* grads) {
    Tape tape;
    BoundParams bound(tape, store, with_grad);
    Var loss = loss_fn(static_cast<const BoundParams&>(bound));
    const double v = loss.value().item();
    if (!std::isfinite(v)) throw std::runtime_error("finite_diff_check: non-finite loss");
    if (grads) {
      tape.backward(loss);
      for (std::size_t i = 0; i < store.size(); ++i) grads->push_back(tape.grad(bound[i]));
    }
    return v;
  };
  std::vector<Tensor> analytic;
  evaluate(true, &analytic);
  double worst = 0.0;
  std::size_t counter = 0;
  for (std::size_t p = 0; p < store.size(); ++p) {
    Tensor& t = store.items()[p].value;
    for (std::size_t i = 0; i < t.numel(); ++i, ++counter) {
      if (counter % stride) continue;
      const double saved = t[i];
      t[i] = saved + eps;
      const double up = evaluate(false, nullptr);
      t[i] = saved - eps;
      const double down = evaluate(false, nullptr);
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[p][i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace pass
