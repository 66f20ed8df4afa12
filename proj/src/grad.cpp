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

#include "vidattn/grad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vidattn/errors.hpp"
#include "vidattn/numerics.hpp"
#include "vidattn/rng.hpp"

namespace vidattn {

std::string_view group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::Projector: return "projector";
    case ParamGroup::Decoder: return "decoder";
    case ParamGroup::Embeddings: return "embeddings";
    case ParamGroup::Head: return "head";
  }
  return "unknown";
}

std::optional<ParamGroup> parse_group(std::string_view name) {
  for (ParamGroup g : {ParamGroup::Projector, ParamGroup::Decoder, ParamGroup::Embeddings,
                       ParamGroup::Head}) {
    if (group_name(g) == name) return g;
  }
  return std::nullopt;
}

void ParamRegistry::add(NamedParam param) {
  if (param.tensor == nullptr) throw ArgumentError("registry: null tensor for " + param.name);
  entries_.push_back(std::move(param));
}

void ParamRegistry::add_all(const std::vector<NamedParam>& params) {
  for (const NamedParam& p : params) add(p);
}

void ParamRegistry::set_frozen(ParamGroup group, bool frozen) {
  frozen_[static_cast<int>(group)] = frozen;
}

bool ParamRegistry::is_frozen(ParamGroup group) const { return frozen_[static_cast<int>(group)]; }

std::size_t ParamRegistry::group_size(ParamGroup group) const {
  std::size_t n = 0;
  for (const NamedParam& p : entries_) {
    if (p.group == group) n += p.tensor->size();
  }
  return n;
}

std::vector<Tensor> gather_gradients(const ParamRegistry& registry, const ad::Gradients& grads) {
  std::vector<Tensor> out;
  out.reserve(registry.entries().size());
  for (const NamedParam& p : registry.entries()) out.push_back(grads.of(*p.tensor));
  return out;
}

Optimizer::Optimizer(OptimizerConfig config, const ParamRegistry& registry) : config_(config) {
  if (!(config_.lr >= 0.0)) throw ArgumentError("optimizer: lr must be >= 0");
  if (config_.kind == OptimizerKind::Adam) {
    for (const NamedParam& p : registry.entries()) {
      first_moment_.emplace_back(p.tensor->shape());
      second_moment_.emplace_back(p.tensor->shape());
    }
  }
}

void Optimizer::step(ParamRegistry& registry, const ad::Gradients& grads) {
  step(registry, gather_gradients(registry, grads));
}

void Optimizer::step(ParamRegistry& registry, const std::vector<Tensor>& grads) {
  const auto& entries = registry.entries();
  if (grads.size() != entries.size()) {
    throw DimensionError("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(entries.size()) + " parameters");
  }
  if (config_.kind == OptimizerKind::Adam && first_moment_.size() != entries.size()) {
    throw DimensionError("optimizer: registry changed since construction");
  }
  for (std::size_t e = 0; e < entries.size(); ++e) {
    if (grads[e].shape() != entries[e].tensor->shape()) {
      throw DimensionError("optimizer: gradient " + shape_string(grads[e].shape()) + " for " +
                           entries[e].name + " " + shape_string(entries[e].tensor->shape()));
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t e = 0; e < entries.size(); ++e) {
    if (registry.is_frozen(entries[e].group)) continue;
    auto theta = entries[e].tensor->data();
    auto g = grads[e].data();
    if (config_.kind == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= config_.lr * g[i];
      continue;
    }
    auto m = first_moment_[e].data();
    auto v = second_moment_[e].data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      theta[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const GroupCheck& g : groups) worst = std::max(worst, g.max_rel_error);
  return worst;
}

GradCheckReport fd_gradcheck(const std::function<double()>& loss, ParamRegistry& registry,
                             const std::vector<Tensor>& analytic,
                             const GradCheckOptions& options) {
  if (!(options.h > 0.0)) throw ArgumentError("fd_gradcheck: h must be > 0");
  const auto& entries = registry.entries();
  if (analytic.size() != entries.size()) {
    throw DimensionError("fd_gradcheck: analytic gradient count mismatch");
  }
  GradCheckReport report;
  for (ParamGroup group : {ParamGroup::Projector, ParamGroup::Decoder, ParamGroup::Embeddings,
                           ParamGroup::Head}) {
    // Flat coordinate space: (entry, offset) pairs.
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t e = 0; e < entries.size(); ++e) {
      if (entries[e].group != group) continue;
      for (std::size_t i = 0; i < entries[e].tensor->size(); ++i) coords.emplace_back(e, i);
    }
    if (coords.empty()) continue;
    if (coords.size() > options.coords_per_group) {
      SeededRng rng(derive_seed(options.seed, static_cast<std::uint64_t>(group)));
      for (std::size_t i = 0; i < options.coords_per_group; ++i) {
        const std::size_t j = i + rng.uniform_index(coords.size() - i);
        std::swap(coords[i], coords[j]);
      }
      coords.resize(options.coords_per_group);
    }
    GroupCheck check;
    check.group = group;
    for (const auto& [e, i] : coords) {
      double& theta = entries[e].tensor->data()[i];
      const double saved = theta;
      theta = saved + options.h;
      const double up = loss();
      theta = saved - options.h;
      const double down = loss();
      theta = saved;
      const double numeric = (up - down) / (2.0 * options.h);
      const double exact = analytic[e].data()[i];
      const double rel =
          std::abs(numeric - exact) / std::max({1.0, std::abs(numeric), std::abs(exact)});
      ++check.checked;
      if (rel >= check.max_rel_error) {
        check.max_rel_error = rel;
        check.worst_param = entries[e].name;
        check.worst_index = i;
      }
    }
    report.groups.push_back(std::move(check));
  }
  return report;
}

}  // namespace vidattn
