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

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

#include "vidattn/tensor.hpp"

namespace vidattn::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Result of a reverse sweep: d loss / d leaf for every leaf and parameter on
/// the tape. Leaves that the loss does not depend on get exact zeros.
class Gradients {
 public:
  const Tensor& operator[](Var leaf) const;
  // Gradient for a tensor bound with Tape::param. Zeros of the tensor's shape
  // when it was never bound.
  Tensor of(const Tensor& param) const;
  bool contains(const Tensor& param) const { return params_.count(&param) != 0; }

 private:
  friend class Tape;
  std::vector<Tensor> by_node_;
  std::unordered_map<const Tensor*, std::size_t> params_;
};

/// Reverse-mode recording of tensor operations.
///
/// Nodes are appended in evaluation order, which is a topological order, so
/// the reverse sweep walks ids downward and touches each reachable node once.
/// With recording disabled the tape only stores values, which makes the same
/// forward code usable for plain evaluation.
class Tape {
 public:
  // Maps the output gradient to one gradient per parent (same order as the
  // parents passed to record()). An empty Tensor means "no contribution".
  using Backward = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(Tensor value);
  // Differentiable input owned by the tape.
  Var leaf(Tensor value);
  // Differentiable input that references `value` (no copy); one node per
  // address. `value` must outlive the tape and stay unmodified while in use.
  Var param(const Tensor& value);

  Var record(Tensor value, std::vector<Var> parents, Backward backward);

  const Tensor& value(std::size_t id) const;
  std::size_t size() const { return nodes_.size(); }

  // Loss must hold exactly one element. Throws ArgumentError otherwise.
  Gradients backward(Var loss);

  // Number of nodes whose backward function ran in the last sweep.
  std::size_t last_backward_visits() const { return last_visits_; }

 private:
  enum class Kind { Constant, Leaf, Param, Op };
  struct Node {
    Kind kind = Kind::Constant;
    Tensor owned;
    const Tensor* ref = nullptr;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad = false;
  };

  bool recording_;
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> params_;
  std::size_t last_visits_ = 0;
};

}  // namespace vidattn::ad
