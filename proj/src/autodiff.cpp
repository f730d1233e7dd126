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

#include "cvpb/autodiff.hpp"

#include <optional>

namespace cvpb::ad {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& Gradients::operator[](Var param) const {
  auto it = grads_.find(param.id());
  if (it == grads_.end()) {
    throw std::out_of_range("no gradient recorded for node " + std::to_string(param.id()));
  }
  return it->second;
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false, false});
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true, true});
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw std::logic_error("operand recorded on a different tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || requires_grad(in.id());
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Gradients Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::logic_error("loss recorded on a different tape");
  if (loss.value().numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[static_cast<std::size_t>(loss.id())] = Tensor(loss.shape(), 1.0f);
  last_visits_ = 0;

  std::vector<Tensor*> slots;
  for (NodeId id = loss.id(); id >= 0; --id) {
    const auto uid = static_cast<std::size_t>(id);
    Node& node = nodes_[uid];
    if (!grads[uid] || !node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const auto in = static_cast<std::size_t>(node.inputs[i]);
      if (!nodes_[in].requires_grad) continue;
      if (!grads[in]) grads[in] = Tensor(nodes_[in].value.shape(), 0.0f);
      slots[i] = &*grads[in];
    }
    node.backward(*grads[uid], slots);
    ++last_visits_;
  }

  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].is_parameter) continue;
    out.grads_.emplace(static_cast<NodeId>(i),
                       grads[i] ? std::move(*grads[i]) : Tensor(nodes_[i].value.shape(), 0.0f));
  }
  return out;
}

}  // namespace cvpb::ad
