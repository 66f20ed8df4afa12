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
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vidattn/params.hpp"
#include "vidattn/tape.hpp"
#include "vidattn/tensor.hpp"

namespace vidattn {

/// Named parameter tensors (not owned) in freezable groups.
class ParamRegistry {
 public:
  void add(NamedParam param);
  void add_all(const std::vector<NamedParam>& params);

  void set_frozen(ParamGroup group, bool frozen);
  bool is_frozen(ParamGroup group) const;

  const std::vector<NamedParam>& entries() const { return entries_; }
  std::size_t group_size(ParamGroup group) const;

 private:
  std::vector<NamedParam> entries_;
  bool frozen_[4] = {false, false, false, false};
};

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Applies updates to every entry of a registry whose group is not frozen.
/// Gradients are looked up by tensor address (see ad::Gradients::of).
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, const ParamRegistry& registry);

  void step(ParamRegistry& registry, const ad::Gradients& grads);
  // Same, with gradients already gathered per registry entry.
  void step(ParamRegistry& registry, const std::vector<Tensor>& grads);

  std::size_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<Tensor> first_moment_;
  std::vector<Tensor> second_moment_;
  std::size_t steps_ = 0;
};

// One gradient tensor per registry entry, in entry order.
std::vector<Tensor> gather_gradients(const ParamRegistry& registry, const ad::Gradients& grads);

struct GradCheckOptions {
  double h = 1e-5;
  std::size_t coords_per_group = 200;
  std::uint64_t seed = 0;
};

struct GroupCheck {
  ParamGroup group = ParamGroup::Projector;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<GroupCheck> groups;
  double max_rel_error() const;
};

/// Central-difference check of `analytic` against `loss`.
///
/// For every non-empty group the coordinates form one flat index space (entry
/// order, row-major inside each tensor). Groups with at most
/// `coords_per_group` coordinates are checked exhaustively; larger groups are
/// checked on a uniformly drawn subset of that size (partial Fisher-Yates with
/// SeededRng(derive_seed(seed, group))). The relative error of a coordinate is
/// |a - b| / max(1, |a|, |b|). Frozen groups are checked like any other.
GradCheckReport fd_gradcheck(const std::function<double()>& loss, ParamRegistry& registry,
                             const std::vector<Tensor>& analytic,
                             const GradCheckOptions& options = {});

}  // namespace vidattn
