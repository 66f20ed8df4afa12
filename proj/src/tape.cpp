/* Copyright 2026 The vidattn Authors. All Rights Reserved.

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

#include "vidattn/tape.hpp"

#include "vidattn/errors.hpp"
#include "vidattn/numerics.hpp"

namespace vidattn::ad {

const Tensor& Var::value() const { return tape_->value(id_); }

const Tensor& Gradients::operator[](Var leaf) const {
  if (leaf.id() >= by_node_.size() || by_node_[leaf.id()].empty()) {
    throw ArgumentError("gradient requested for a node that is not a differentiable leaf");
  }
  return by_node_[leaf.id()];
}

Tensor Gradients::of(const Tensor& param) const {
  auto it = params_.find(&param);
  if (it == params_.end()) return Tensor(param.shape());
  return by_node_[it->second];
}

Var Tape::constant(Tensor value) {
  Node node;
  node.kind = Kind::Constant;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node node;
  node.kind = Kind::Leaf;
  node.owned = std::move(value);
  node.requires_grad = recording_;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const Tensor& value) {
  if (auto it = params_.find(&value); it != params_.end()) return Var(this, it->second);
  Node node;
  node.kind = Kind::Param;
  node.ref = &value;
  node.requires_grad = recording_;
  nodes_.push_back(std::move(node));
  params_.emplace(&value, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> parents, Backward backward) {
  Node node;
  node.kind = Kind::Op;
  node.owned = std::move(value);
  if (recording_) {
    for (const Var& p : parents) {
      if (&p.tape() != this) throw ArgumentError("record: parent belongs to another tape");
      node.parents.push_back(p.id());
      node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.ref != nullptr ? *node.ref : node.owned;
}

Gradients Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ArgumentError("backward: loss belongs to another tape");
  if (value(loss.id()).size() != 1) {
    throw ArgumentError("backward: loss must be a scalar, got shape " +
                        shape_string(value(loss.id()).shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[loss.id()] = Tensor(value(loss.id()).shape(), 1.0);
  last_visits_ = 0;

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (grads[id].empty() || !node.requires_grad) continue;
    ++last_visits_;
    if (node.kind != Kind::Op) continue;
    std::vector<Tensor> parent_grads = node.backward(grads[id]);
    if (parent_grads.size() != node.parents.size()) {
      throw DimensionError("backward: op returned the wrong number of parent gradients");
    }
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      const std::size_t pid = node.parents[k];
      if (parent_grads[k].empty() || !nodes_[pid].requires_grad) continue;
      if (grads[pid].empty()) {
        grads[pid] = std::move(parent_grads[k]);
      } else {
        grads[pid] = add(grads[pid], parent_grads[k]);
      }
    }
    grads[id] = Tensor();
  }

  Gradients out;
  out.by_node_.resize(nodes_.size());
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (node.kind != Kind::Leaf && node.kind != Kind::Param) continue;
    out.by_node_[id] = grads[id].empty() ? Tensor(value(id).shape()) : std::move(grads[id]);
  }
  out.params_ = params_;
  return out;
}

}  // namespace vidattn::ad
