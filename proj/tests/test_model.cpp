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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "vidattn/checkpoint.hpp"
#include "vidattn/errors.hpp"
#include "vidattn/model.hpp"
#include "vidattn/numerics.hpp"
#include "vidattn/reference.hpp"

namespace vidattn {
namespace {

DecoderConfig tiny(std::size_t layers = 2) {
  DecoderConfig c;
  c.vocab = 11;
  c.heads = 2;
  c.head_dim = 4;
  c.layers = layers;
  c.ffn_dim = 12;
  c.max_positions = 64;
  return c;
}

MixedSequence mixed(SeededRng& rng, std::size_t n, std::size_t dim, std::size_t vocab) {
  MixedSequence seq;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 3 == 0) {
      seq.push_visual(gaussian_init(rng, {1, dim}, 1.0));
    } else {
      seq.push_text(rng.uniform_index(vocab));
    }
  }
  return seq;
}

TEST(Assemble, CountsAndOrdering) {
  SeededRng rng(1);
  const Tensor visual = gaussian_init(rng, {2, 3, 8}, 1.0);
  const std::vector<std::size_t> prompt = {4, 1, 7, 2};
  const MixedSequence seq = assemble(visual, prompt);
  ASSERT_EQ(seq.size(), 10u);
  const ModalityMask mask = seq.modality_mask();
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(mask.is_visual(i), i < 6);
  for (std::size_t f = 0; f < 2; ++f) {
    const Tensor frame = visual.slice0(f);
    for (std::size_t k = 0; k < 3; ++k) {
      const auto want = frame.row(k);
      const auto got = seq.slot(f * 3 + k).vector.row(0);
      EXPECT_TRUE(std::equal(want.begin(), want.end(), got.begin()));
    }
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(seq.slot(6 + i).token, prompt[i]);
  EXPECT_EQ(seq.positions(), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST(Assemble, TextOnly) {
  const std::vector<std::size_t> prompt = {3, 5};
  const MixedSequence seq = assemble(Tensor(), prompt);
  EXPECT_EQ(seq.size(), 2u);
  EXPECT_EQ(seq.modality_mask().visual_count(), 0u);
}

TEST(DecoderForward, EmptyStackIsNormThenHead) {
  SeededRng rng(2);
  const DecoderParams p = DecoderParams::random(tiny(0), rng);
  MixedSequence seq;
  seq.push_text(3);
  seq.push_text(9);
  const Tensor logits = decoder_forward(p, seq);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto e = p.embedding.row(seq.slot(i).token);
    double ms = 0.0;
    for (double v : e) ms += v * v;
    const double r = 1.0 / std::sqrt(ms / 8.0 + p.config.norm_eps);
    for (std::size_t t = 0; t < 11; ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < 8; ++c) s += e[c] * r * p.final_norm(0, c) * p.head(c, t);
      EXPECT_NEAR(logits(i, t), s, 1e-12);
    }
  }
}

TEST(DecoderForward, TextOnlyEdvtMatchesRopeAll) {
  SeededRng rng(3);
  const DecoderParams p = DecoderParams::random(tiny(), rng);
  MixedSequence seq;
  for (std::size_t i = 0; i < 9; ++i) seq.push_text(rng.uniform_index(11));
  EXPECT_LE(max_abs_diff(decoder_forward(p, seq, PositionalStrategy::Edvt),
                         decoder_forward(p, seq, PositionalStrategy::RopeAll)),
            1e-12);
}

TEST(DecoderForward, MatchesComposedReference) {
  SeededRng rng(4);
  const DecoderParams p = DecoderParams::random(tiny(), rng);
  const MixedSequence seq = mixed(rng, 8, 8, 11);
  for (PositionalStrategy s : kAllStrategies) {
    EXPECT_LE(max_abs_diff(decoder_forward(p, seq, s), reference::decoder(p, seq, s)), 1e-10)
        << strategy_name(s);
  }
}

TEST(DecoderForward, TracedMatchesUntraced) {
  SeededRng rng(5);
  const DecoderParams p = DecoderParams::random(tiny(), rng);
  const MixedSequence seq = mixed(rng, 7, 8, 11);
  const DecoderOutput out = decoder_forward_traced(p, seq);
  EXPECT_TRUE(out.logits.identical(decoder_forward(p, seq)));
  ASSERT_EQ(out.layers.size(), 2u);
  EXPECT_EQ(out.layers[0].weights.shape(), (Shape{2, 7, 7}));
}

TEST(DecoderForward, RejectsBadTokens) {
  SeededRng rng(6);
  const DecoderParams p = DecoderParams::random(tiny(), rng);
  MixedSequence seq;
  seq.push_text(11);
  EXPECT_THROW(decoder_forward(p, seq), RangeError);
  EXPECT_THROW(decoder_forward(p, MixedSequence()), ArgumentError);
}

TEST(DecoderConfig, OddHeadDimNamed) {
  DecoderConfig c = tiny();
  c.head_dim = 5;
  try {
    c.validate();
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("head_dim"), std::string::npos);
  }
}

TEST(DecoderForward, TiedHeadUsesEmbedding) {
  DecoderConfig c = tiny();
  c.tie_head = true;
  SeededRng rng(7);
  const DecoderParams p = DecoderParams::random(c, rng);
  EXPECT_TRUE(p.head.empty());
  const MixedSequence seq = mixed(rng, 5, 8, 11);
  EXPECT_LE(max_abs_diff(decoder_forward(p, seq), reference::decoder(p, seq, c.strategy)), 1e-10);
}

TEST(GreedyDecode, StopOnFirstStep) {
  SeededRng rng(8);
  DecoderParams p = DecoderParams::random(tiny(), rng);
  std::fill(p.final_norm.data().begin(), p.final_norm.data().end(), 0.0);  // all logits tie at 0
  const MixedSequence seq = mixed(rng, 4, 8, 11);
  EXPECT_EQ(greedy_decode(p, seq, 5, 0), (std::vector<std::size_t>{0}));
}

TEST(GreedyDecode, RespectsMaxNew) {
  SeededRng rng(9);
  const DecoderParams p = DecoderParams::random(tiny(), rng);
  const MixedSequence seq = mixed(rng, 4, 8, 11);
  EXPECT_EQ(greedy_decode(p, seq, 3, 11).size(), 3u);
}

TEST(GreedyDecode, EqualsFullRecomputeLoop) {
  SeededRng rng(10);
  const DecoderParams p = DecoderParams::random(tiny(), rng);
  MixedSequence seq = mixed(rng, 5, 8, 11);
  const auto decoded = greedy_decode(p, seq, 6, 11);
  std::vector<std::size_t> manual;
  for (int step = 0; step < 6; ++step) {
    const Tensor logits = decoder_forward(p, seq);
    const auto last = logits.row(seq.size() - 1);
    const std::size_t best = static_cast<std::size_t>(std::max_element(last.begin(), last.end()) - last.begin());
    manual.push_back(best);
    seq.push_text(best);
  }
  EXPECT_EQ(decoded, manual);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  SeededRng rng(11);
  DecoderParams p = DecoderParams::random(tiny(), rng);
  const auto path = std::filesystem::temp_directory_path() / "vidattn_test_decoder.ckpt";
  save_decoder(path.string(), p);
  SeededRng other(12);
  DecoderParams q = DecoderParams::random(tiny(), other);
  load_decoder(path.string(), q);
  EXPECT_TRUE(q.embedding.identical(p.embedding));
  EXPECT_TRUE(q.layers[1].ffn_out.identical(p.layers[1].ffn_out));
  EXPECT_TRUE(q.head.identical(p.head));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsShapeMismatchAndMissingHeader) {
  NamedTensors tensors = {{"a", Tensor({2, 2}, 1.0)}};
  std::stringstream buffer;
  write_checkpoint(buffer, tensors);
  const NamedTensors back = read_checkpoint(buffer);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_TRUE(back[0].second.identical(tensors[0].second));
  Tensor wrong({3, 2});
  EXPECT_THROW(load_into(back, {{"a", ParamGroup::Decoder, &wrong}}), std::exception);
  std::stringstream junk("not a checkpoint\n");
  EXPECT_THROW(read_checkpoint(junk), std::exception);
}

}  // namespace
}  // namespace vidattn
