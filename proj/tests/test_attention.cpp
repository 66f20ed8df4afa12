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

#include "test_util.hpp"
#include "vidattn/attention.hpp"
#include "vidattn/errors.hpp"
#include "vidattn/reference.hpp"

namespace vidattn {
namespace {

AttentionParams hand_params() {
  AttentionParams p;
  p.heads = 1;
  p.head_dim = 2;
  p.wq = Tensor::from_rows({{1, 0.5}, {-0.3, 0.8}});
  p.wk = Tensor::from_rows({{0.6, -0.2}, {0.4, 1.1}});
  p.wv = Tensor::from_rows({{1, 2}, {0, -1}});
  p.wo = Tensor::from_rows({{0.5, 0}, {0.1, 1}});
  return p;
}

// Outputs of the hand-specified 4-token case (visual, visual, text, text at
// positions 0..3), computed offline by a direct per-query evaluation in numpy.
TEST(AttentionForward, HandCaseAllStrategies) {
  const Tensor x = Tensor::from_rows({{1, 0}, {0.5, -1}, {0.2, 0.3}, {-0.7, 0.4}});
  const ModalityMask mask(std::vector<bool>{true, true, false, false});
  const std::vector<std::size_t> pos = {0, 1, 2, 3};
  const RotaryTable table(2, 8);
  const std::vector<std::pair<PositionalStrategy, Tensor>> expected = {
      {PositionalStrategy::NoPos,
       Tensor::from_rows({{0.7, 2.0},
                          {0.5754419398968269, 2.0},
                          {0.4070400271550758, 1.267763348018435},
                          {0.12390308734037021, 0.423046842450724}})},
      {PositionalStrategy::RopeAll,
       Tensor::from_rows({{0.7, 2.0},
                          {0.5697805416153361, 2.0},
                          {0.3938329039918669, 1.2483817003895168},
                          {0.2496677484340081, 0.8663088032696206}})},
      {PositionalStrategy::Edvt,
       Tensor::from_rows({{0.7, 2.0},
                          {0.5754419398968269, 2.0},
                          {0.4070400271550758, 1.267763348018435},
                          {0.124121026154505, 0.4281107857339739}})},
      {PositionalStrategy::FixVpe,
       Tensor::from_rows({{0.7, 2.0},
                          {0.5754419398968269, 2.0},
                          {0.39863765782063426, 1.31267807957747},
                          {0.2132737516009713, 0.6603531795449216}})},
      {PositionalStrategy::RopeQueryEdvtKey,
       Tensor::from_rows({{0.7, 2.0},
                          {0.6175399100697447, 2.0},
                          {0.39863765782063426, 1.31267807957747},
                          {0.2132737516009713, 0.6603531795449216}})},
  };
  for (const auto& [strategy, want] : expected) {
    const AttentionResult r = attention_forward(hand_params(), table, x, mask, pos, strategy);
    EXPECT_LE(max_abs_diff(r.output, want), 1e-12) << strategy_name(strategy);
  }
}

TEST(AttentionForward, SingleTokenIsValueProjection) {
  SeededRng rng(1);
  const AttentionParams p = AttentionParams::random(rng, 2, 4, 0.5);
  const Tensor x = gaussian_init(rng, {1, 8}, 1.0);
  const RotaryTable table(4, 8);
  const std::vector<std::size_t> pos = {3};
  for (PositionalStrategy s : kAllStrategies) {
    for (const ModalityMask& mask : {ModalityMask::all_text(1), ModalityMask::all_visual(1)}) {
      const AttentionResult r = attention_forward(p, table, x, mask, pos, s);
      EXPECT_LE(max_abs_diff(r.output, matmul(matmul(x, p.wv), p.wo)), 1e-14);
      EXPECT_EQ(r.trace.weights(0, 0, 0), 1.0);
      EXPECT_EQ(r.trace.weights(1, 0, 0), 1.0);
    }
  }
}

TEST(AttentionForward, TextOnlyEdvtIsBitExactRopeAll) {
  SeededRng rng(2);
  const AttentionParams p = AttentionParams::random(rng, 2, 4, 0.5);
  const Tensor x = gaussian_init(rng, {7, 8}, 1.0);
  const RotaryTable table(4, 16);
  const std::vector<std::size_t> pos = {0, 1, 2, 3, 4, 5, 6};
  const ModalityMask text = ModalityMask::all_text(7);
  const auto a = attention_forward(p, table, x, text, pos, PositionalStrategy::Edvt);
  const auto b = attention_forward(p, table, x, text, pos, PositionalStrategy::RopeAll);
  EXPECT_TRUE(a.output.identical(b.output));
  EXPECT_TRUE(a.trace.weights.identical(b.trace.weights));
}

TEST(AttentionForward, MatchesPerQueryOracle) {
  SeededRng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const AttentionParams p = AttentionParams::random(rng, 2, 4, 0.6);
    const Tensor x = gaussian_init(rng, {6, 8}, 1.0);
    std::vector<bool> flags(6);
    for (std::size_t i = 0; i < 6; ++i) flags[i] = rng.uniform() < 0.5;
    const ModalityMask mask(flags);
    const std::vector<std::size_t> pos = {0, 1, 2, 3, 4, 5};
    const RotaryTable table(4, 16);
    for (PositionalStrategy s : kAllStrategies) {
      EXPECT_LE(max_abs_diff(attention_forward(p, table, x, mask, pos, s).output,
                             reference::attention(p, x, mask, pos, s)),
                1e-12)
          << strategy_name(s);
    }
  }
}

TEST(AttentionForward, WeightsCausalAndNormalized) {
  SeededRng rng(4);
  const AttentionParams p = AttentionParams::random(rng, 2, 2, 1.0);
  const Tensor x = gaussian_init(rng, {9, 4}, 1.0);
  const ModalityMask mask = ModalityMask::visual_prefix(4, 9);
  const std::vector<std::size_t> pos = {0, 1, 2, 3, 4, 6, 9, 10, 30};
  const RotaryTable table(2, 64);
  for (PositionalStrategy s : kAllStrategies) {
    const AttentionTrace t = attention_forward(p, table, x, mask, pos, s).trace;
    ASSERT_EQ(t.weights.shape(), (Shape{2, 9, 9}));
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t j = 0; j < 9; ++j) {
        double total = 0.0;
        for (std::size_t i = 0; i < 9; ++i) {
          if (i > j) EXPECT_EQ(t.weights(h, j, i), 0.0);
          total += t.weights(h, j, i);
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
    }
  }
}

TEST(AttentionForward, ValidatesInputs) {
  SeededRng rng(5);
  const AttentionParams p = AttentionParams::random(rng, 1, 4, 1.0);
  const RotaryTable table(4, 8);
  const Tensor x = gaussian_init(rng, {3, 4}, 1.0);
  const std::vector<std::size_t> ok = {0, 1, 2};
  const std::vector<std::size_t> repeated = {0, 1, 1};
  const std::vector<std::size_t> far = {0, 1, 8};
  const std::vector<std::size_t> short_pos = {0, 1};
  const ModalityMask mask = ModalityMask::all_text(3);
  EXPECT_THROW(attention_forward(p, table, x, mask, repeated, PositionalStrategy::Edvt), ArgumentError);
  EXPECT_THROW(attention_forward(p, table, x, mask, far, PositionalStrategy::RopeAll), RangeError);
  EXPECT_THROW(attention_forward(p, table, x, mask, short_pos, PositionalStrategy::Edvt), DimensionError);
  EXPECT_THROW(attention_forward(p, table, x, ModalityMask::all_text(2), ok, PositionalStrategy::Edvt),
               DimensionError);
  EXPECT_THROW(attention_forward(p, table, gaussian_init(rng, {3, 6}, 1.0), mask, ok,
                                 PositionalStrategy::Edvt),
               DimensionError);
  AttentionParams odd = p;
  odd.head_dim = 3;
  EXPECT_THROW(odd.validate(), DimensionError);
}

TEST(MergeLogits, AllVisualTakesPlainAllTextTakesRotated) {
  SeededRng rng(6);
  const Tensor plain = gaussian_init(rng, {4, 4}, 1.0);
  const Tensor rotated = gaussian_init(rng, {4, 4}, 1.0);
  EXPECT_TRUE(merge_logits(plain, rotated, ModalityMask::all_visual(4)).identical(plain));
  EXPECT_TRUE(merge_logits(plain, rotated, ModalityMask::all_text(4)).identical(rotated));
}

TEST(MergeLogits, SelectsByKeyModality) {
  const Tensor merged = merge_logits(Tensor::from_rows({{1, 2}, {3, 4}}),
                                     Tensor::from_rows({{5, 6}, {7, 8}}),
                                     ModalityMask(std::vector<bool>{true, false}));
  EXPECT_TRUE(merged.identical(Tensor::from_rows({{1, 6}, {3, 8}})));
}

TEST(MergeLogits, TapeGradientRoutesByColumn) {
  const ModalityMask mask(std::vector<bool>{true, false, true});
  SeededRng rng(7);
  const Tensor other = gaussian_init(rng, {3, 3}, 1.0);
  const Tensor x = gaussian_init(rng, {3, 3}, 1.0);
  EXPECT_LE(testing::fd_error(x, [&](ad::Tape& t, ad::Var v) {
              return testing::probe(t, ad::merge_logits(v, t.constant(other), mask));
            }),
            1e-9);
  EXPECT_LE(testing::fd_error(x, [&](ad::Tape& t, ad::Var v) {
              return testing::probe(t, ad::merge_logits(t.constant(other), v, mask));
            }),
            1e-9);
}

TEST(VisualLogitRow, EmptyBeforeFirstVisualKey) {
  SeededRng rng(8);
  const AttentionParams p = AttentionParams::random(rng, 1, 2, 1.0);
  const ModalityMask mask(std::vector<bool>{false, true, true});
  const std::vector<std::size_t> pos = {0, 1, 2};
  const auto r = attention_forward(p, RotaryTable(2, 4), gaussian_init(rng, {3, 2}, 1.0), mask, pos,
                                   PositionalStrategy::Edvt);
  EXPECT_TRUE(visual_logit_row(r.trace, 0, mask).empty());
  EXPECT_EQ(visual_logit_row(r.trace, 2, mask).size(), 2u);
  EXPECT_THROW(visual_logit_row(r.trace, 3, mask), RangeError);
}

// Visual block at 0..m-1, text query placed at position m + shift.
std::vector<double> shifted_query_row(const AttentionParams& p, const Tensor& x, std::size_t shift,
                                      PositionalStrategy s) {
  const std::size_t n = x.rows();
  std::vector<std::size_t> pos(n);
  for (std::size_t i = 0; i + 1 < n; ++i) pos[i] = i;
  pos[n - 1] = n - 1 + shift;
  const ModalityMask mask = ModalityMask::visual_prefix(n - 1, n);
  const auto r = attention_forward(p, RotaryTable(p.head_dim, 256), x, mask, pos, s);
  std::vector<double> out;
  for (std::size_t h = 0; h < p.heads; ++h) {
    const auto row = visual_logit_row(r.trace, n - 1, mask, h);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

TEST(VisualLogitRow, EdvtInvariantToQueryPositionRopeAllNot) {
  SeededRng rng(9);
  const AttentionParams p = AttentionParams::random(rng, 2, 4, 0.7);
  const Tensor x = gaussian_init(rng, {5, 8}, 1.0);
  const auto e0 = shifted_query_row(p, x, 0, PositionalStrategy::Edvt);
  const auto e1 = shifted_query_row(p, x, 37, PositionalStrategy::Edvt);
  const auto r0 = shifted_query_row(p, x, 0, PositionalStrategy::RopeAll);
  const auto r1 = shifted_query_row(p, x, 37, PositionalStrategy::RopeAll);
  double edvt_dev = 0.0, rope_dev = 0.0;
  for (std::size_t i = 0; i < e0.size(); ++i) {
    edvt_dev = std::max(edvt_dev, std::abs(e0[i] - e1[i]));
    rope_dev = std::max(rope_dev, std::abs(r0[i] - r1[i]));
  }
  EXPECT_LE(edvt_dev, 1e-15);
  EXPECT_GT(rope_dev, 1e-6);
}

TEST(AttentionForward, NoPosEqualsAllVisualMerge) {
  SeededRng rng(10);
  const AttentionParams p = AttentionParams::random(rng, 2, 2, 1.0);
  const Tensor x = gaussian_init(rng, {5, 4}, 1.0);
  const std::vector<std::size_t> pos = {0, 1, 2, 3, 4};
  const ModalityMask mixed(std::vector<bool>{true, false, false, true, false});
  const RotaryTable table(2, 8);
  const auto nopos = attention_forward(p, table, x, mixed, pos, PositionalStrategy::NoPos);
  const auto rope = attention_forward(p, table, x, mixed, pos, PositionalStrategy::RopeAll);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_TRUE(merge_logits(rope.trace.logits_plain.slice0(h), rope.trace.logits_rotated.slice0(h),
                             ModalityMask::all_visual(5))
                    .identical(nopos.trace.logits.slice0(h)));
  }
}

TEST(AttentionForward, TapeGradientsAllStrategies) {
  SeededRng rng(11);
  const AttentionParams p = AttentionParams::random(rng, 2, 2, 0.8);
  const Tensor x = gaussian_init(rng, {5, 4}, 1.0);
  const std::vector<std::size_t> pos = {0, 1, 3, 4, 7};
  const ModalityMask mask(std::vector<bool>{true, true, false, true, false});
  const RotaryTable table(2, 8);
  for (PositionalStrategy s : kAllStrategies) {
    EXPECT_LE(testing::fd_error(x, [&](ad::Tape& t, ad::Var v) {
                return testing::probe(t, ad::attention_forward(p, table, v, mask, pos, s));
              }),
              1e-8)
        << strategy_name(s);
  }
}

TEST(Strategy, NamesRoundTrip) {
  for (PositionalStrategy s : kAllStrategies) EXPECT_EQ(parse_strategy(strategy_name(s)), s);
  EXPECT_FALSE(parse_strategy("alibi").has_value());
}

}  // namespace
}  // namespace vidattn
