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

#include "vidattn/model.hpp"

#include <algorithm>
#include <cmath>

#include "vidattn/autodiff.hpp"
#include "vidattn/checkpoint.hpp"
#include "vidattn/errors.hpp"
#include "vidattn/numerics.hpp"

namespace vidattn {
namespace {

Tensor init_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale) {
  const double s = scale > 0.0 ? scale : 1.0 / std::sqrt(static_cast<double>(rows));
  return gaussian_init(rng, {rows, cols}, s);
}

void expect_shape(const Tensor& t, const Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw DimensionError("decoder: " + name + " is " + shape_string(t.shape()) + ", expected " +
                         shape_string(shape));
  }
}

}  // namespace

void DecoderConfig::validate() const {
  if (vocab == 0) throw DimensionError("decoder: vocab must be >= 1");
  if (heads == 0) throw DimensionError("decoder: heads must be >= 1");
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw DimensionError("decoder: head_dim must be even and positive, got " +
                         std::to_string(head_dim));
  }
  if (ffn_dim == 0) throw DimensionError("decoder: ffn_dim must be >= 1");
  if (max_positions == 0) throw DimensionError("decoder: max_positions must be >= 1");
  if (!(norm_eps > 0.0)) throw ArgumentError("decoder: norm_eps must be > 0");
}

DecoderParams::DecoderParams(const DecoderConfig& cfg)
    : config((cfg.validate(), cfg)),
      embedding({cfg.vocab, cfg.model_dim()}),
      final_norm({1, cfg.model_dim()}, 1.0),
      rope(cfg.head_dim, cfg.max_positions, cfg.rope_base) {
  const std::size_t d = cfg.model_dim();
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    DecoderLayer layer;
    layer.attn.heads = cfg.heads;
    layer.attn.head_dim = cfg.head_dim;
    layer.attn.wq = Tensor({d, d});
    layer.attn.wk = Tensor({d, d});
    layer.attn.wv = Tensor({d, d});
    layer.attn.wo = Tensor({d, d});
    layer.attn_norm = Tensor({1, d}, 1.0);
    layer.ffn_norm = Tensor({1, d}, 1.0);
    layer.ffn_in = Tensor({d, cfg.ffn_dim});
    layer.ffn_out = Tensor({cfg.ffn_dim, d});
    layers.push_back(std::move(layer));
  }
  if (!cfg.tie_head) head = Tensor({d, cfg.vocab});
}

void DecoderParams::validate() const {
  config.validate();
  const std::size_t d = config.model_dim();
  expect_shape(embedding, {config.vocab, d}, "embedding");
  expect_shape(final_norm, {1, d}, "final_norm");
  if (layers.size() != config.layers) throw DimensionError("decoder: layer count mismatch");
  for (const DecoderLayer& layer : layers) {
    layer.attn.validate();
    if (layer.attn.model_dim() != d) throw DimensionError("decoder: attention width mismatch");
    expect_shape(layer.attn_norm, {1, d}, "attn_norm");
    expect_shape(layer.ffn_norm, {1, d}, "ffn_norm");
    expect_shape(layer.ffn_in, {d, config.ffn_dim}, "ffn_in");
    expect_shape(layer.ffn_out, {config.ffn_dim, d}, "ffn_out");
  }
  if (config.tie_head) {
    if (!head.empty()) throw DimensionError("decoder: tied head must not carry its own matrix");
  } else {
    expect_shape(head, {d, config.vocab}, "head");
  }
  if (rope.head_dim() != config.head_dim) throw DimensionError("decoder: rotary table mismatch");
}

DecoderParams DecoderParams::random(const DecoderConfig& config, SeededRng& rng) {
  DecoderParams p(config);
  const std::size_t d = config.model_dim();
  const double s = config.init_scale;
  p.embedding = gaussian_init(rng, {config.vocab, d}, config.embed_scale);
  for (DecoderLayer& layer : p.layers) {
    layer.attn.wq = init_matrix(rng, d, d, s);
    layer.attn.wk = init_matrix(rng, d, d, s);
    layer.attn.wv = init_matrix(rng, d, d, s);
    layer.attn.wo = init_matrix(rng, d, d, s);
    layer.ffn_in = init_matrix(rng, d, config.ffn_dim, s);
    layer.ffn_out = init_matrix(rng, config.ffn_dim, d, s);
  }
  if (!config.tie_head) p.head = init_matrix(rng, d, config.vocab, config.head_scale);
  return p;
}

std::vector<NamedParam> decoder_parameters(DecoderParams& params) {
  std::vector<NamedParam> out;
  out.push_back({"embedding", ParamGroup::Embeddings, &params.embedding});
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    DecoderLayer& layer = params.layers[l];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    out.push_back({prefix + "attn.wq", ParamGroup::Decoder, &layer.attn.wq});
    out.push_back({prefix + "attn.wk", ParamGroup::Decoder, &layer.attn.wk});
    out.push_back({prefix + "attn.wv", ParamGroup::Decoder, &layer.attn.wv});
    out.push_back({prefix + "attn.wo", ParamGroup::Decoder, &layer.attn.wo});
    out.push_back({prefix + "attn_norm", ParamGroup::Decoder, &layer.attn_norm});
    out.push_back({prefix + "ffn_norm", ParamGroup::Decoder, &layer.ffn_norm});
    out.push_back({prefix + "ffn_in", ParamGroup::Decoder, &layer.ffn_in});
    out.push_back({prefix + "ffn_out", ParamGroup::Decoder, &layer.ffn_out});
  }
  out.push_back({"final_norm", ParamGroup::Decoder, &params.final_norm});
  if (!params.config.tie_head) out.push_back({"head", ParamGroup::Head, &params.head});
  return out;
}

void MixedSequence::push_visual(Tensor row) {
  if (row.rank() == 1) row = row.reshaped({1, row.dim(0)});
  if (row.rank() != 2 || row.rows() != 1) {
    throw DimensionError("visual slot must be a single row, got " + shape_string(row.shape()));
  }
  slots_.push_back(Slot{true, std::move(row), 0});
}

void MixedSequence::push_text(std::size_t token) { slots_.push_back(Slot{false, Tensor(), token}); }

ModalityMask MixedSequence::modality_mask() const {
  std::vector<bool> flags(slots_.size());
  for (std::size_t i = 0; i < slots_.size(); ++i) flags[i] = slots_[i].visual;
  return ModalityMask(std::move(flags));
}

std::vector<std::size_t> MixedSequence::positions() const {
  std::vector<std::size_t> pos(slots_.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  return pos;
}

MixedSequence assemble(const Tensor& visual_tokens, std::span<const std::size_t> prompt_ids) {
  if (prompt_ids.empty()) throw ArgumentError("assemble: prompt must not be empty");
  MixedSequence seq;
  if (!visual_tokens.empty()) {
    if (visual_tokens.rank() != 3) {
      throw DimensionError("assemble: visual tokens must be frames x k x dim, got " +
                           shape_string(visual_tokens.shape()));
    }
    const std::size_t dim = visual_tokens.dim(2);
    const std::size_t count = visual_tokens.dim(0) * visual_tokens.dim(1);
    for (std::size_t r = 0; r < count; ++r) {
      auto first = visual_tokens.data().begin() + static_cast<std::ptrdiff_t>(r * dim);
      seq.push_visual(Tensor({1, dim}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(dim))));
    }
  }
  for (std::size_t id : prompt_ids) seq.push_text(id);
  return seq;
}

DecoderOutput decoder_forward_traced(const DecoderParams& params, const MixedSequence& seq,
                                     std::optional<PositionalStrategy> strategy) {
  ad::Tape tape(false);
  std::vector<ad::AttentionRecord> records;
  const std::vector<std::size_t> positions = seq.positions();
  const ad::Var logits =
      ad::decoder_forward(params, ad::embed_sequence(params, tape, seq), seq.modality_mask(),
                          positions, strategy.value_or(params.config.strategy), &records);
  DecoderOutput out;
  out.logits = logits.value();
  const std::size_t n = seq.size();
  for (const ad::AttentionRecord& rec : records) {
    AttentionTrace trace;
    auto stack = [n](const std::vector<ad::Var>& planes) {
      Tensor t({planes.size(), n, n});
      for (std::size_t h = 0; h < planes.size(); ++h) {
        std::copy(planes[h].value().data().begin(), planes[h].value().data().end(),
                  t.data().begin() + static_cast<std::ptrdiff_t>(h * n * n));
      }
      return t;
    };
    trace.weights = stack(rec.weights);
    trace.logits = stack(rec.logits);
    trace.logits_rotated = stack(rec.rotated);
    trace.logits_plain = stack(rec.plain);
    out.layers.push_back(std::move(trace));
  }
  return out;
}

Tensor decoder_forward(const DecoderParams& params, const MixedSequence& seq,
                       std::optional<PositionalStrategy> strategy) {
  ad::Tape tape(false);
  const std::vector<std::size_t> positions = seq.positions();
  return ad::decoder_forward(params, ad::embed_sequence(params, tape, seq), seq.modality_mask(),
                             positions, strategy.value_or(params.config.strategy))
      .value();
}

std::vector<std::size_t> greedy_decode(const DecoderParams& params, const MixedSequence& seq,
                                       std::size_t max_new, std::size_t stop_id,
                                       std::optional<PositionalStrategy> strategy) {
  if (max_new < 1) throw ArgumentError("greedy_decode: max_new must be >= 1");
  MixedSequence running = seq;
  std::vector<std::size_t> emitted;
  while (emitted.size() < max_new) {
    const Tensor logits = decoder_forward(params, running, strategy);
    const auto last = logits.row(logits.rows() - 1);
    // max_element returns the first maximum, i.e. the smallest id on ties.
    const auto best = static_cast<std::size_t>(std::max_element(last.begin(), last.end()) -
                                               last.begin());
    emitted.push_back(best);
    if (best == stop_id) break;
    running.push_text(best);
  }
  return emitted;
}

void save_decoder(const std::string& path, DecoderParams& params) {
  NamedTensors named;
  for (const NamedParam& p : decoder_parameters(params)) named.emplace_back(p.name, *p.tensor);
  save_checkpoint(path, named);
}

void load_decoder(const std::string& path, DecoderParams& params) {
  load_into(load_checkpoint(path), decoder_parameters(params));
}

namespace ad {

Var embed_sequence(const DecoderParams& params, Tape& tape, const MixedSequence& seq) {
  if (seq.empty()) throw ArgumentError("decoder: sequence must not be empty");
  const std::size_t d = params.config.model_dim();
  const Var table = tape.param(params.embedding);
  std::vector<Var> segments;
  std::size_t i = 0;
  while (i < seq.size()) {
    const bool visual = seq.slot(i).visual;
    std::size_t j = i;
    while (j < seq.size() && seq.slot(j).visual == visual) ++j;
    if (visual) {
      std::vector<double> rows;
      for (std::size_t s = i; s < j; ++s) {
        const Tensor& v = seq.slot(s).vector;
        if (v.cols() != d) {
          throw DimensionError("decoder: visual slot width " + std::to_string(v.cols()) +
                               " vs model_dim " + std::to_string(d));
        }
        rows.insert(rows.end(), v.data().begin(), v.data().end());
      }
      segments.push_back(tape.constant(Tensor({j - i, d}, std::move(rows))));
    } else {
      std::vector<std::size_t> ids;
      for (std::size_t s = i; s < j; ++s) ids.push_back(seq.slot(s).token);
      segments.push_back(gather_rows(table, ids));
    }
    i = j;
  }
  return segments.size() == 1 ? segments.front() : concat_rows(segments);
}

Var embed_prefixed(const DecoderParams& params, Tape& tape, std::optional<Var> visual_rows,
                   std::span<const std::size_t> prompt_ids) {
  if (prompt_ids.empty()) throw ArgumentError("assemble: prompt must not be empty");
  const Var text = gather_rows(tape.param(params.embedding), prompt_ids);
  if (!visual_rows) return text;
  const Var parts[] = {*visual_rows, text};
  return concat_rows(parts);
}

Var decoder_forward(const DecoderParams& params, Var inputs, const ModalityMask& mask,
                    std::span<const std::size_t> positions, PositionalStrategy strategy,
                    std::vector<AttentionRecord>* records) {
  params.validate();
  Tape& tape = inputs.tape();
  const double eps = params.config.norm_eps;
  Var h = inputs;
  for (const DecoderLayer& layer : params.layers) {
    AttentionRecord record;
    const Var normed = rms_norm(h, tape.param(layer.attn_norm), eps);
    const Var attended = attention_forward(layer.attn, params.rope, normed, mask, positions,
                                           strategy, records != nullptr ? &record : nullptr);
    h = add(h, attended);
    const Var ffn_normed = rms_norm(h, tape.param(layer.ffn_norm), eps);
    h = add(h, matmul(silu(matmul(ffn_normed, tape.param(layer.ffn_in))),
                      tape.param(layer.ffn_out)));
    if (records != nullptr) records->push_back(std::move(record));
  }
  const Var final = rms_norm(h, tape.param(params.final_norm), eps);
  if (params.config.tie_head) return matmul_nt(final, tape.param(params.embedding));
  return matmul(final, tape.param(params.head));
}

}  // namespace ad
}  // namespace vidattn
