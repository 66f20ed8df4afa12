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
#include <span>

#include "vidattn/attention.hpp"
#include "vidattn/model.hpp"
#include "vidattn/projector.hpp"
#include "vidattn/tensor.hpp"

// Slow, literal evaluators used as oracles by the invariant suite and tests.
// Nothing here goes through the tape, the rotary table, or the batched
// kernels: rotations are evaluated from the angle formula, and attention is
// the explicit per-query ratio of exponentiated similarities.
namespace vidattn::reference {

// R_pos x for one head-sized vector, interleaved pairs, from cos/sin of the
// angle computed on the spot.
std::vector<double> rotate(std::span<const double> x, std::size_t pos, double base);

// Per-position evaluation of causal attention:
//   out_j = sum_i sim_ji v_i / sum_i sim_ji,  sim_ji = exp(<a_j, b_i> / sqrt(d))
// where (a_j, b_i) are the query/key vectors chosen by the strategy for the
// (query j, key i) pair.
Tensor attention(const AttentionParams& params, const Tensor& x, const ModalityMask& mask,
                 std::span<const std::size_t> positions, PositionalStrategy strategy,
                 double base = 10000.0);

// Pre-softmax logit for one (head, query, key) pair, same conventions.
double attention_logit(const AttentionParams& params, const Tensor& x, const ModalityMask& mask,
                       std::span<const std::size_t> positions, PositionalStrategy strategy,
                       std::size_t head, std::size_t query, std::size_t key,
                       double base = 10000.0);

Tensor projector_frame(const ProjectorParams& params, const Tensor& frame, const Tensor& queries);

Tensor decoder(const DecoderParams& params, const MixedSequence& seq, PositionalStrategy strategy);

}  // namespace vidattn::reference
