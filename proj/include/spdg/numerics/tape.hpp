// Copyright 2026 The spdg Authors
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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spdg/error.hpp"
#include "spdg/numerics/tensor.hpp"

namespace spdg {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a backward rule sees: the forward output, the incoming gradient, the
/// forward inputs, and accumulators for inputs that need a gradient (nullptr
/// otherwise). Rules must accumulate (+=) since one node may appear twice.
struct GradContext {
  const Tensor& out;
  const Tensor& grad_out;
  std::span<const Tensor* const> inputs;
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const GradContext&)>;

/// Single-threaded reverse-mode tape. Nodes are appended in evaluation order,
/// so ids are already a topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad, Tensor(), false});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    Node node{std::move(value), {}, {}, false, Tensor(), false};
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
      if (in.tape_ != this) fail(ErrorCode::kInternalInvariant, "input recorded on a different tape");
      node.inputs.push_back(in.id_);
      node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  const Tensor& value(const Var& v) const { return node(v).value; }
  bool requires_grad(const Var& v) const { return node(v).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Populates gradients of a scalar loss for every node that requires one.
  void backward(const Var& loss) {
    const Node& root = node(loss);
    if (root.value.size() != 1) {
      fail(ErrorCode::kNonScalarLoss, "backward needs a scalar loss, got shape " + shape_string(root.value.shape()));
    }
    for (Node& n : nodes_) {
      n.grad = Tensor();
      n.has_grad = false;
    }
    if (!root.requires_grad) return;
    ensure_grad(loss.id_)[0] = 1.0;

    std::vector<const Tensor*> in_values;
    std::vector<Tensor*> in_grads;
    for (std::size_t id = loss.id_ + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.has_grad || !n.backward) continue;
      in_values.clear();
      in_grads.clear();
      for (std::size_t in : n.inputs) {
        if (in >= id) fail(ErrorCode::kInternalInvariant, "node reached before its consumers");
        in_values.push_back(&nodes_[in].value);
        in_grads.push_back(nodes_[in].requires_grad ? &ensure_grad(in) : nullptr);
      }
      n.backward(GradContext{n.value, n.grad, in_values, in_grads});
    }
  }

  /// Gradient of the last backward pass; zeros for nodes off the loss path.
  Tensor grad(const Var& v) const {
    const Node& n = node(v);
    if (n.has_grad) return n.grad;
    return Tensor(n.value.shape(), 0.0);
  }

  bool has_grad(const Var& v) const { return node(v).has_grad; }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad;
    Tensor grad;
    bool has_grad;
  };

  const Node& node(const Var& v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) fail(ErrorCode::kInternalInvariant, "variable does not belong to this tape");
    return nodes_[v.id_];
  }

  Tensor& ensure_grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape(), 0.0);
      n.has_grad = true;
    }
    return n.grad;
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const {
  if (!tape_) fail(ErrorCode::kInternalInvariant, "use of an unbound Var");
  return tape_->value(*this);
}

inline bool Var::requires_grad() const { return tape_ && tape_->requires_grad(*this); }

}  // namespace spdg
