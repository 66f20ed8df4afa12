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

#include "test_util.hpp"
#include "vidattn/errors.hpp"
#include "vidattn/grad.hpp"
#include "vidattn/model.hpp"
#include "vidattn/projector.hpp"

namespace vidattn {
namespace {

using testing::fd_error;
using testing::probe;

TEST(Backward, SumGivesOnes) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(Tensor::from_rows({{1, -2, 3}, {4, 5, -6}}));
  const Tensor g = tape.backward(ad::sum(x))[x];
  for (double v : g.data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, SquaredNormGivesTwiceInput) {
  SeededRng rng(1);
  const Tensor x0 = gaussian_init(rng, {3, 4}, 1.0);
  ad::Tape tape;
  const ad::Var x = tape.leaf(x0);
  EXPECT_LE(max_abs_diff(tape.backward(ad::sum_squares(x))[x], scale(x0, 2.0)), 1e-12);
}

TEST(Backward, UnusedLeafHasZeroGradient) {
  ad::Tape tape;
  const ad::Var used = tape.leaf(Tensor({2, 2}, 1.0));
  const ad::Var unused = tape.leaf(Tensor({3, 1}, 1.0));
  const auto grads = tape.backward(ad::sum(used));
  EXPECT_EQ(grads[unused].shape(), (Shape{3, 1}));
  for (double v : grads[unused].data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, VisitsEachReachableNodeOnce) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(Tensor({2, 2}, 0.5));
  const ad::Var y = ad::silu(x);                 // shared by both branches
  const ad::Var z = ad::add(ad::scale(y, 2.0), ad::hadamard(y, y));
  tape.leaf(Tensor({1, 1}, 0.0));                // unreachable
  const ad::Var loss = ad::sum(z);
  tape.backward(loss);
  EXPECT_EQ(tape.last_backward_visits(), 6u);  // x, y, scale, hadamard, add, sum
}

TEST(Backward, RejectsNonScalarLoss) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(Tensor({2, 2}, 1.0));
  EXPECT_THROW(tape.backward(x), ArgumentError);
}

TEST(Primitives, GradientsMatchFiniteDifferences) {
  SeededRng rng(2);
  const Tensor x = gaussian_init(rng, {4, 5}, 1.0);
  const Tensor w = gaussian_init(rng, {5, 3}, 1.0);
  const Tensor wt = gaussian_init(rng, {3, 5}, 1.0);
  const Tensor lhs = gaussian_init(rng, {3, 4}, 1.0);
  const Tensor gain = gaussian_init(rng, {1, 5}, 1.0);
  const std::vector<std::size_t> ids = {3, 0, 3, 1};
  const std::vector<bool> flags = {true, false, false, true, true};
  Mask mask(4, 5);
  mask.set(0, 4, false);
  mask.set(2, 1, false);
  using Build = std::function<ad::Var(ad::Tape&, ad::Var)>;
  const std::vector<std::pair<const char*, Build>> cases = {
      {"matmul", [&](ad::Tape& t, ad::Var v) { return probe(t, ad::matmul(v, t.constant(w))); }},
      {"matmul_rhs", [&](ad::Tape& t, ad::Var v) { return probe(t, ad::matmul(t.constant(lhs), v)); }},
      {"matmul_nt", [&](ad::Tape& t, ad::Var v) { return probe(t, ad::matmul_nt(v, t.constant(wt))); }},
      {"transpose", [&](ad::Tape& t, ad::Var v) { return probe(t, ad::transpose(v)); }},
      {"sub", [&](ad::Tape& t, ad::Var v) { return probe(t, ad::sub(t.constant(x), ad::scale(v, 3.0))); }},
      {"hadamard", [&](ad::Tape& t, ad::Var v) { return probe(t, ad::hadamard(v, v)); }},
      {"mul_rows", [&](ad::Tape& t, ad::Var v) { return probe(t, ad::mul_rows(v, t.constant(gain))); }},
      {"silu", [&](ad::Tape& t, ad::Var v) { return probe(t, ad::silu(v)); }},
      {"softmax", [&](ad::Tape& t, ad::Var v) { return probe(t, ad::softmax_rows(v)); }},
      {"softmax_masked", [&](ad::Tape& t, ad::Var v) { return probe(t, ad::softmax_rows(v, mask)); }},
      {"rms_norm", [&](ad::Tape& t, ad::Var v) { return probe(t, ad::rms_norm(v, t.constant(gain), 1e-6)); }},
      {"slice_concat_cols",
       [&](ad::Tape& t, ad::Var v) {
         const ad::Var parts[] = {ad::slice_cols(v, 3, 2), ad::slice_cols(v, 0, 3)};
         return probe(t, ad::concat_cols(parts));
       }},
      {"slice_concat_rows",
       [&](ad::Tape& t, ad::Var v) {
         const ad::Var parts[] = {ad::slice_rows(v, 2, 2), ad::slice_rows(v, 0, 1)};
         return probe(t, ad::concat_rows(parts));
       }},
      {"gather_rows", [&](ad::Tape& t, ad::Var v) { return probe(t, ad::gather_rows(v, ids)); }},
      {"select_columns",
       [&](ad::Tape& t, ad::Var v) { return probe(t, ad::select_columns(v, ad::silu(v), flags)); }},
      {"sum_squares", [&](ad::Tape&, ad::Var v) { return ad::sum_squares(v); }},
      {"cross_entropy", [&](ad::Tape&, ad::Var v) { return ad::cross_entropy(v, 2, 1, 4); }},
  };
  for (const auto& [name, build] : cases) EXPECT_LE(fd_error(x, build), 1e-8) << name;
  EXPECT_LE(fd_error(gain, [&](ad::Tape& t, ad::Var g) { return probe(t, ad::rms_norm(t.constant(x), g, 1e-6)); }),
            1e-8);
}

TEST(CrossEntropy, UniformAndSaturatedLimits) {
  ad::Tape tape(false);
  const ad::Var uniform = tape.constant(Tensor({1, 8}, 0.0));
  EXPECT_NEAR(ad::cross_entropy(uniform, 0, 3, 8).value().item(), std::log(8.0), 1e-15);
  Tensor peaked({1, 8}, 0.0);
  peaked(0, 3) = 800.0;
  EXPECT_LE(ad::cross_entropy(tape.constant(peaked), 0, 3, 8).value().item(), 1e-300);
}

TEST(FdGradcheck, QuadraticForm) {
  SeededRng rng(3);
  const Tensor b = gaussian_init(rng, {6, 6}, 1.0);
  const Tensor a = add(b, transpose(b));
  Tensor theta = gaussian_init(rng, {6, 1}, 1.0);
  ParamRegistry registry;
  registry.add({"theta", ParamGroup::Projector, &theta});
  auto loss = [&] { return 0.5 * matmul(transpose(theta), matmul(a, theta)).item(); };
  const GradCheckReport report = fd_gradcheck(loss, registry, {matmul(a, theta)});
  EXPECT_LE(report.max_rel_error(), 1e-9);
  ASSERT_EQ(report.groups.size(), 1u);
  EXPECT_EQ(report.groups[0].checked, 6u);
}

TEST(FdGradcheck, DecoderCrossEntropy) {
  DecoderConfig c;
  c.vocab = 11;
  c.heads = 2;
  c.head_dim = 4;
  c.ffn_dim = 12;
  c.max_positions = 32;
  SeededRng rng(4);
  DecoderParams p = DecoderParams::random(c, rng);
  MixedSequence seq;
  seq.push_visual(gaussian_init(rng, {1, 8}, 1.0));
  seq.push_visual(gaussian_init(rng, {1, 8}, 1.0));
  for (std::size_t id : {3u, 7u, 1u}) seq.push_text(id);
  auto build = [&](ad::Tape& tape) {
    const ad::Var logits = ad::decoder_forward(p, ad::embed_sequence(p, tape, seq), seq.modality_mask(),
                                               seq.positions(), PositionalStrategy::Edvt);
    return ad::cross_entropy(logits, 4, 5, 11);
  };
  ParamRegistry registry;
  registry.add_all(decoder_parameters(p));
  ad::Tape tape;
  const auto grads = tape.backward(build(tape));
  auto loss = [&] {
    ad::Tape t(false);
    return build(t).value().item();
  };
  EXPECT_LE(fd_gradcheck(loss, registry, gather_gradients(registry, grads)).max_rel_error(), 1e-6);
}

TEST(FdGradcheck, SequentialProjectorChain) {
  ProjectorConfig c;
  c.feat_dim = 5;
  c.proj_dim = 6;
  c.ffn_dim = 7;
  c.model_dim = 4;
  SeededRng rng(5);
  ProjectorParams p = ProjectorParams::random(c, rng);
  const VideoFeatures video(gaussian_init(rng, {4, 3, 5}, 1.0));
  const Tensor weights = gaussian_init(rng, {2, 4}, 1.0);
  // Only the last frame's tokens enter the loss.
  auto build = [&](ad::Tape& tape) {
    const ad::Var rows = ad::project_video_rows(p, video, ChainingMode::Sequential, tape);
    return ad::sum(ad::hadamard(ad::slice_rows(rows, 6, 2), tape.constant(weights)));
  };
  ParamRegistry registry;
  registry.add_all(projector_parameters(p));
  ad::Tape tape;
  const auto grads = tape.backward(build(tape));
  auto loss = [&] {
    ad::Tape t(false);
    return build(t).value().item();
  };
  const auto analytic = gather_gradients(registry, grads);
  EXPECT_LE(fd_gradcheck(loss, registry, analytic).max_rel_error(), 1e-6);
  // The query embedding seeds frame 0 only, so its gradient arrives through the chain.
  double norm = 0.0;
  for (std::size_t i = 0; i < registry.entries().size(); ++i) {
    if (registry.entries()[i].name == "projector.query_embedding") norm = l2_norm(analytic[i].data());
  }
  EXPECT_GT(norm, 0.0);
}

TEST(Optimizer, AllFrozenLeavesParametersUntouched) {
  SeededRng rng(6);
  Tensor a = gaussian_init(rng, {2, 3}, 1.0);
  const Tensor before = a;
  ParamRegistry registry;
  registry.add({"a", ParamGroup::Head, &a});
  for (ParamGroup g : {ParamGroup::Projector, ParamGroup::Decoder, ParamGroup::Embeddings, ParamGroup::Head}) {
    registry.set_frozen(g, true);
  }
  for (OptimizerKind kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    Optimizer opt({kind, 0.5}, registry);
    opt.step(registry, std::vector<Tensor>{Tensor({2, 3}, 1.0)});
    EXPECT_TRUE(a.identical(before));
  }
}

TEST(Optimizer, SgdUnitStepOnIdentityGradient) {
  SeededRng rng(7);
  Tensor a = gaussian_init(rng, {3, 3}, 1.0);
  ParamRegistry registry;
  registry.add({"a", ParamGroup::Projector, &a});
  Optimizer opt({OptimizerKind::Sgd, 1.0}, registry);
  opt.step(registry, std::vector<Tensor>{a});
  for (double v : a.data()) EXPECT_EQ(v, 0.0);
}

TEST(Optimizer, AdamMinimizesQuadratic) {
  SeededRng rng(8);
  const Tensor b = gaussian_init(rng, {5, 5}, 1.0);
  const Tensor a = add(matmul(b, transpose(b)), Tensor::identity(5));
  Tensor theta = gaussian_init(rng, {5, 1}, 1.0);
  ParamRegistry registry;
  registry.add({"theta", ParamGroup::Projector, &theta});
  Optimizer opt({OptimizerKind::Adam, 0.05}, registry);
  auto loss = [&] { return 0.5 * matmul(transpose(theta), matmul(a, theta)).item(); };
  const double initial = loss();
  std::vector<double> trace;
  for (int step = 0; step < 500; ++step) {
    opt.step(registry, std::vector<Tensor>{matmul(a, theta)});
    trace.push_back(loss());
  }
  EXPECT_LE(trace.back(), 1e-3 * initial);
  // Trend: each 100-step window ends below where the previous one ended.
  for (std::size_t w = 199; w < trace.size(); w += 100) EXPECT_LT(trace[w], trace[w - 100]);
}

TEST(ParamRegistry, GroupsAndNames) {
  EXPECT_EQ(parse_group("embeddings"), ParamGroup::Embeddings);
  EXPECT_FALSE(parse_group("bias").has_value());
  for (ParamGroup g : {ParamGroup::Projector, ParamGroup::Decoder, ParamGroup::Embeddings, ParamGroup::Head}) {
    EXPECT_EQ(parse_group(group_name(g)), g);
  }
}

}  // namespace
}  // namespace vidattn
