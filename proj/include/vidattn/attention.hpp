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

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "vidattn/rng.hpp"
#include "vidattn/rope.hpp"
#include "vidattn/tape.hpp"
#include "vidattn/tensor.hpp"

namespace vidattn {

/// How rotary embedding is applied to queries and keys.
///
/// - NoPos: no rotation.
/// - RopeAll: every query and key rotated at its absolute index.
/// - Edvt: logits against text keys use rotated queries and keys; logits
///   against visual keys use the unrotated vectors, so every query sees every
///   visual key at the same (zero) distance.
/// - FixVpe: text tokens rotated at their absolute index, visual tokens at 0.
/// - RopeQueryEdvtKey: every query rotated; only text keys rotated.
enum class PositionalStrategy { NoPos, RopeAll, Edvt, FixVpe, RopeQueryEdvtKey };

inline constexpr std::array<PositionalStrategy, 5> kAllStrategies = {
    PositionalStrategy::NoPos, PositionalStrategy::RopeAll, PositionalStrategy::Edvt,
    PositionalStrategy::FixVpe, PositionalStrategy::RopeQueryEdvtKey};

std::string_view strategy_name(PositionalStrategy strategy);
std::optional<PositionalStrategy> parse_strategy(std::string_view name);

/// One flag per sequence slot; true marks a visual slot.
class ModalityMask {
 public:
  ModalityMask() = default;
  explicit ModalityMask(std::vector<bool> visual) : visual_(std::move(visual)) {}

  static ModalityMask all_text(std::size_t n) { return ModalityMask(std::vector<bool>(n, false)); }
  static ModalityMask all_visual(std::size_t n) { return ModalityMask(std::vector<bool>(n, true)); }
  static ModalityMask visual_prefix(std::size_t visual, std::size_t total);

  std::size_t size() const { return visual_.size(); }
  bool is_visual(std::size_t i) const { return visual_[i]; }
  const std::vector<bool>& flags() const { return visual_; }
  std::size_t visual_count() const;

 private:
  std::vector<bool> visual_;
};

/// Projection weights for multi-head attention. Row-vector convention:
/// Q = X * wq, output = concat(heads) * wo.
struct AttentionParams {
  std::size_t heads = 1;
  std::size_t head_dim = 2;
  Tensor wq, wk, wv, wo;

  std::size_t model_dim() const { return heads * head_dim; }
  void validate() const;

  static AttentionParams random(SeededRng& rng, std::size_t heads, std::size_t head_dim,
                                double scale);
};

/// Per-head logit planes and weights, each heads x n x n.
/// `logits` is the merged plane that enters the softmax.
struct AttentionTrace {
  Tensor weights;
  Tensor logits;
  Tensor logits_rotated;
  Tensor logits_plain;

  std::size_t heads() const { return weights.dim(0); }
  std::size_t length() const { return weights.dim(1); }
};

struct AttentionResult {
  Tensor output;
  AttentionTrace trace;
};

// Causal multi-head attention over one sequence. `positions` must be strictly
// increasing with one entry per row of x.
AttentionResult attention_forward(const AttentionParams& params, const RotaryTable& table,
                                  const Tensor& x, const ModalityMask& mask,
                                  std::span<const std::size_t> positions,
                                  PositionalStrategy strategy);

// Column i comes from `plain` when key slot i is visual, else from `rotated`.
Tensor merge_logits(const Tensor& plain, const Tensor& rotated, const ModalityMask& mask);

// Merged pre-softmax logits from `query_index` to every visual key at or
// before it, in key order.
std::vector<double> visual_logit_row(const AttentionTrace& trace, std::size_t query_index,
                                     const ModalityMask& mask, std::size_t head = 0);

namespace ad {

struct AttentionRecord {
  std::vector<Var> weights;
  std::vector<Var> logits;
  std::vector<Var> plain;
  std::vector<Var> rotated;
};

Var merge_logits(Var plain, Var rotated, const ModalityMask& mask);

// When `record` is non-null every plane is materialized, including ones the
// strategy does not need. `table` must outlive the tape.
Var attention_forward(const AttentionParams& params, const RotaryTable& table, Var x,
                      const ModalityMask& mask, std::span<const std::size_t> positions,
                      PositionalStrategy strategy, AttentionRecord* record = nullptr);

}  // namespace ad
}  // namespace vidattn
