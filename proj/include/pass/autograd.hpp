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

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pass/tensor.hpp"

namespace pass {

class Tape;

/// Handle to one value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of executed operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, which is a topological order of
/// the computation graph; backward() walks them in reverse and calls each
/// node's pullback once. A Tape is single-threaded. Use one per worker.
class Tape {
 public:
  /// Receives the gradient flowing into the node's output.
  using Pullback = std::function<void(Tape&, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }
  Var leaf(Tensor value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, nullptr);
  }
  Var record(Tensor value, Pullback pullback) {
    return push(std::move(value), true, std::move(pullback));
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Mutable gradient accumulator for a node, allocated as zeros on first use.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape(), 0.0);
      n.has_grad = true;
    }
    return n.grad;
  }

  /// d(loss)/d(var) after backward(); zeros when var was unreachable.
  Tensor grad(const Var& v) const {
    const Node& n = nodes_[v.id()];
    return n.has_grad ? n.grad : Tensor(n.value.shape(), 0.0);
  }

  void backward(const Var& loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
    if (nodes_.empty()) throw std::invalid_argument("backward: tape is empty");
    const Tensor& lv = nodes_[loss.id()].value;
    if (lv.numel() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id()).fill(1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.pullback) n.pullback(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Pullback pullback;
  };

  Var push(Tensor value, bool requires_grad, Pullback pullback) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, false, std::move(pullback)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace pass
