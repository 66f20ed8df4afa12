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

#include "vidattn/attention.hpp"

#include <algorithm>
#include <cmath>

#include "vidattn/autodiff.hpp"
#include "vidattn/errors.hpp"
#include "vidattn/numerics.hpp"

namespace vidattn {
namespace {

// Flags choosing the plain plane for a key column. The tamper switch exists
// only so the invariant checker can be shown to catch a flipped merge.
std::vector<bool> plain_columns(const ModalityMask& mask) {
  std::vector<bool> flags = mask.flags();
#ifdef VIDATTN_TAMPER_MERGE_POLARITY
  flags.flip();
#endif
  return flags;
}

Tensor stack_planes(const std::vector<ad::Var>& planes) {
  const std::size_t n = planes.front().value().rows();
  Tensor out({planes.size(), n, n});
  for (std::size_t h = 0; h < planes.size(); ++h) {
    const Tensor& p = planes[h].value();
    std::copy(p.data().begin(), p.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(h * n * n));
  }
  return out;
}

}  // namespace

std::string_view strategy_name(PositionalStrategy strategy) {
  switch (strategy) {
    case PositionalStrategy::NoPos: return "nopos";
    case PositionalStrategy::RopeAll: return "rope";
    case PositionalStrategy::Edvt: return "edvt";
    case PositionalStrategy::FixVpe: return "fixvpe";
    case PositionalStrategy::RopeQueryEdvtKey: return "rope-edvt";
  }
  return "unknown";
}

std::optional<PositionalStrategy> parse_strategy(std::string_view name) {
  for (PositionalStrategy s : kAllStrategies) {
    if (strategy_name(s) == name) return s;
  }
  return std::nullopt;
}

ModalityMask ModalityMask::visual_prefix(std::size_t visual, std::size_t total) {
  if (visual > total) throw DimensionError("visual_prefix: more visual slots than slots");
  std::vector<bool> flags(total, false);
  std::fill(flags.begin(), flags.begin() + static_cast<std::ptrdiff_t>(visual), true);
  return ModalityMask(std::move(flags));
}

std::size_t ModalityMask::visual_count() const {
  return static_cast<std::size_t>(std::count(visual_.begin(), visual_.end(), true));
}

void AttentionParams::validate() const {
  if (heads == 0) throw DimensionError("attention: heads must be >= 1");
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw DimensionError("attention: head_dim must be even and positive, got " +
                         std::to_string(head_dim));
  }
  const Shape square{model_dim(), model_dim()};
  for (const Tensor* w : {&wq, &wk, &wv, &wo}) {
    if (w->shape() != square) {
      throw DimensionError("attention: weight " + shape_string(w->shape()) + " should be " +
                           shape_string(square));
    }
  }
}

AttentionParams AttentionParams::random(SeededRng& rng, std::size_t heads, std::size_t head_dim,
                                        double scale) {
  AttentionParams p;
  p.heads = heads;
  p.head_dim = head_dim;
  if (heads == 0 || head_dim == 0 || head_dim % 2 != 0) p.validate();
  const std::size_t dim = p.model_dim();
  p.wq = gaussian_init(rng, {dim, dim}, scale);
  p.wk = gaussian_init(rng, {dim, dim}, scale);
  p.wv = gaussian_init(rng, {dim, dim}, scale);
  p.wo = gaussian_init(rng, {dim, dim}, scale);
  return p;
}

Tensor merge_logits(const Tensor& plain, const Tensor& rotated, const ModalityMask& mask) {
  ad::Tape tape(false);
  return ad::merge_logits(tape.constant(plain), tape.constant(rotated), mask).value();
}

AttentionResult attention_forward(const AttentionParams& params, const RotaryTable& table,
                                  const Tensor& x, const ModalityMask& mask,
                                  std::span<const std::size_t> positions,
                                  PositionalStrategy strategy) {
  ad::Tape tape(false);
  ad::AttentionRecord record;
  ad::Var out = ad::attention_forward(params, table, tape.constant(x), mask, positions,
                                      strategy, &record);
  AttentionResult result;
  result.output = out.value();
  result.trace.weights = stack_planes(record.weights);
  result.trace.logits = stack_planes(record.logits);
  result.trace.logits_rotated = stack_planes(record.rotated);
  result.trace.logits_plain = stack_planes(record.plain);
  return result;
}

std::vector<double> visual_logit_row(const AttentionTrace& trace, std::size_t query_index,
                                     const ModalityMask& mask, std::size_t head) {
  if (head >= trace.heads()) throw RangeError("visual_logit_row: head out of range");
  if (query_index >= trace.length()) {
    throw RangeError("visual_logit_row: query " + std::to_string(query_index) +
                     " outside sequence of " + std::to_string(trace.length()));
  }
  if (mask.size() != trace.length()) throw DimensionError("visual_logit_row: mask length");
  std::vector<double> row;
  for (std::size_t key = 0; key <= query_index; ++key) {
    if (mask.is_visual(key)) row.push_back(trace.logits(head, query_index, key));
  }
  return row;
}

namespace ad {

Var merge_logits(Var plain, Var rotated, const ModalityMask& mask) {
  return select_columns(plain, rotated, plain_columns(mask));
}

Var attention_forward(const AttentionParams& params, const RotaryTable& table, Var x,
                      const ModalityMask& mask, std::span<const std::size_t> positions,
                      PositionalStrategy strategy, AttentionRecord* record) {
  params.validate();
  const Tensor& xv = x.value();
  const std::size_t n = xv.rank() == 2 ? xv.rows() : 0;
  if (xv.rank() != 2 || xv.cols() != params.model_dim()) {
    throw DimensionError("attention: input " + shape_string(xv.shape()) + " needs " +
                         std::to_string(params.model_dim()) + " columns");
  }
  if (mask.size() != n || positions.size() != n) {
    throw DimensionError("attention: sequence of " + std::to_string(n) + " rows with mask of " +
                         std::to_string(mask.size()) + " and " +
                         std::to_string(positions.size()) + " positions");
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (positions[i] <= positions[i - 1]) {
      throw ArgumentError("attention: positions must be strictly increasing");
    }
  }
  if (table.head_dim() != params.head_dim) {
    throw DimensionError("attention: rotary table head_dim " + std::to_string(table.head_dim()) +
                         " vs " + std::to_string(params.head_dim));
  }

  std::vector<std::size_t> fixed(positions.begin(), positions.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (mask.is_visual(i)) fixed[i] = 0;
  }

  Tape& tape = x.tape();
  const Var q = matmul(x, tape.param(params.wq));
  const Var k = matmul(x, tape.param(params.wk));
  const Var v = matmul(x, tape.param(params.wv));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params.head_dim));
  const Mask causal = Mask::causal(n);
  const bool keep_all = record != nullptr;

  std::vector<Var> head_outputs;
  for (std::size_t h = 0; h < params.heads; ++h) {
    const std::size_t col = h * params.head_dim;
    const Var qh = slice_cols(q, col, params.head_dim);
    const Var kh = slice_cols(k, col, params.head_dim);
    const Var vh = slice_cols(v, col, params.head_dim);

    const bool need_plain = keep_all || strategy == PositionalStrategy::NoPos ||
                            strategy == PositionalStrategy::Edvt;
    const bool need_rotated = keep_all || strategy == PositionalStrategy::RopeAll ||
                              strategy == PositionalStrategy::Edvt ||
                              strategy == PositionalStrategy::RopeQueryEdvtKey;
    const bool need_rotated_query = need_rotated ||
                                    strategy == PositionalStrategy::RopeQueryEdvtKey;

    Var plain, rotated, q_rot;
    if (need_plain) plain = scale(matmul_nt(qh, kh), inv_sqrt_d);
    if (need_rotated_query) q_rot = apply_rotary(table, qh, positions);
    if (need_rotated) {
      rotated = scale(matmul_nt(q_rot, apply_rotary(table, kh, positions)), inv_sqrt_d);
    }

    // Plane used against visual keys, plane used against text keys.
    Var visual_plane, text_plane;
    switch (strategy) {
      case PositionalStrategy::NoPos:
        visual_plane = text_plane = plain;
        break;
      case PositionalStrategy::RopeAll:
        visual_plane = text_plane = rotated;
        break;
      case PositionalStrategy::Edvt:
        visual_plane = plain;
        text_plane = rotated;
        break;
      case PositionalStrategy::FixVpe:
        visual_plane = text_plane = scale(
            matmul_nt(apply_rotary(table, qh, fixed), apply_rotary(table, kh, fixed)),
            inv_sqrt_d);
        break;
      case PositionalStrategy::RopeQueryEdvtKey:
        visual_plane = scale(matmul_nt(q_rot, kh), inv_sqrt_d);
        text_plane = rotated;
        break;
    }
    const Var logits = merge_logits(visual_plane, text_plane, mask);
    const Var weights = softmax_rows(logits, causal);
    head_outputs.push_back(matmul(weights, vh));

    if (record != nullptr) {
      record->weights.push_back(weights);
      record->logits.push_back(logits);
      record->plain.push_back(plain);
      record->rotated.push_back(rotated);
    }
  }
  const Var joined = params.heads == 1 ? head_outputs.front() : concat_cols(head_outputs);
  return matmul(joined, tape.param(params.wo));
}

}  // namespace ad
}  // namespace vidattn
