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
#include <optional>
#include <span>
#include <vector>

#include "vidattn/attention.hpp"
#include "vidattn/params.hpp"
#include "vidattn/rng.hpp"
#include "vidattn/rope.hpp"
#include "vidattn/tape.hpp"
#include "vidattn/tensor.hpp"

namespace vidattn {

struct DecoderConfig {
  std::size_t vocab = 26;
  std::size_t heads = 2;
  std::size_t head_dim = 16;
  std::size_t layers = 2;
  std::size_t ffn_dim = 64;
  PositionalStrategy strategy = PositionalStrategy::Edvt;
  std::size_t max_positions = 1024;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;
  bool tie_head = false;
  double init_scale = 0.0;  // 0 selects 1/sqrt(fan_in) per matrix
  double embed_scale = 1.0;
  double head_scale = 0.1;  // 0 selects 1/sqrt(fan_in)

  std::size_t model_dim() const { return heads * head_dim; }
  void validate() const;
};

struct DecoderLayer {
  AttentionParams attn;
  Tensor attn_norm;  // 1 x model
  Tensor ffn_norm;   // 1 x model
  Tensor ffn_in;     // model x ffn
  Tensor ffn_out;    // ffn x model
};

struct DecoderParams {
  explicit DecoderParams(const DecoderConfig& config);

  DecoderConfig config;
  Tensor embedding;  // vocab x model
  std::vector<DecoderLayer> layers;
  Tensor final_norm;  // 1 x model
  Tensor head;        // model x vocab; empty when tied to the embedding
  RotaryTable rope;

  void validate() const;
  static DecoderParams random(const DecoderConfig& config, SeededRng& rng);
};

// Every tensor with a stable dotted name, e.g. "layers.0.attn.wq".
std::vector<NamedParam> decoder_parameters(DecoderParams& params);

/// Visual and text slots sharing one absolute index space 0..n-1.
class MixedSequence {
 public:
  struct Slot {
    bool visual = false;
    Tensor vector;          // 1 x model_dim when visual
    std::size_t token = 0;  // vocabulary id when text
  };

  void push_visual(Tensor row);
  void push_text(std::size_t token);

  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }
  const Slot& slot(std::size_t i) const { return slots_.at(i); }
  ModalityMask modality_mask() const;
  std::vector<std::size_t> positions() const;

 private:
  std::vector<Slot> slots_;
};

// Visual tokens (frames x k x model, or an empty Tensor) flattened frame-major,
// then the prompt as text slots. Throws ArgumentError on an empty prompt.
MixedSequence assemble(const Tensor& visual_tokens, std::span<const std::size_t> prompt_ids);

struct DecoderOutput {
  Tensor logits;  // n x vocab
  std::vector<AttentionTrace> layers;
};

// Per-position vocabulary logits. `strategy` overrides config.strategy.
Tensor decoder_forward(const DecoderParams& params, const MixedSequence& seq,
                       std::optional<PositionalStrategy> strategy = std::nullopt);
DecoderOutput decoder_forward_traced(const DecoderParams& params, const MixedSequence& seq,
                                     std::optional<PositionalStrategy> strategy = std::nullopt);

// Argmax decoding without a cache: every step re-runs the full forward.
// Ties go to the smallest id. Stops after emitting stop_id or max_new tokens.
std::vector<std::size_t> greedy_decode(const DecoderParams& params, const MixedSequence& seq,
                                       std::size_t max_new, std::size_t stop_id,
                                       std::optional<PositionalStrategy> strategy = std::nullopt);

void save_decoder(const std::string& path, DecoderParams& params);
void load_decoder(const std::string& path, DecoderParams& params);

namespace ad {

// Embeds a mixed sequence: text slots through the embedding table, visual
// slots as constants.
Var embed_sequence(const DecoderParams& params, Tape& tape, const MixedSequence& seq);

// Visual-prefix layout with differentiable visual rows (m x model), which may
// be absent for a text-only prompt.
Var embed_prefixed(const DecoderParams& params, Tape& tape, std::optional<Var> visual_rows,
                   std::span<const std::size_t> prompt_ids);

Var decoder_forward(const DecoderParams& params, Var inputs, const ModalityMask& mask,
                    std::span<const std::size_t> positions, PositionalStrategy strategy,
                    std::vector<AttentionRecord>* records = nullptr);

}  // namespace ad
}  // namespace vidattn
