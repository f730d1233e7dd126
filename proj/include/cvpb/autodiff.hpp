// Copyright 2026 The cvpb Authors.
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

// Reverse-mode differentiation over an append-only tape.
//
// A Tape is built for one forward/backward step and then discarded. Nodes are
// appended in evaluation order, so append order is a topological order and
// backward is a single reverse sweep. Values live in a deque, which keeps
// references handed out by Var::value() stable while the tape grows.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "cvpb/tensor.hpp"

namespace cvpb::ad {

using NodeId = std::int32_t;
class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = -1;
};

/// Accumulates d(loss)/d(output) into the inputs' gradient buffers.
/// grad_inputs[i] is null when input i does not require a gradient; buffers
/// are pre-sized to the input's shape and must be added to, never assigned,
/// because one node may appear several times among the inputs.
using BackwardFn =
    std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_inputs)>;

class Gradients {
 public:
  /// Gradient of a parameter; all zeros when the loss does not depend on it.
  const Tensor& operator[](Var param) const;
  bool contains(Var param) const { return grads_.count(param.id()) != 0; }

 private:
  friend class Tape;
  std::unordered_map<NodeId, Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Trainable leaf; backward() reports a gradient for every parameter.
  Var parameter(Tensor value);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(NodeId id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a single-element loss.
  Gradients backward(Var loss);
  /// Nodes whose backward function ran during the last sweep.
  std::size_t last_backward_visits() const { return last_visits_; }

 private:
  struct Node {
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_parameter = false;
  };
  std::deque<Node> nodes_;
  std::size_t last_visits_ = 0;
};

}  // namespace cvpb::ad
