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

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "vidattn/autodiff.hpp"
#include "vidattn/harness/commands.hpp"
#include "vidattn/numerics.hpp"
#include "vidattn/reference.hpp"

namespace vidattn::harness {
namespace {

constexpr std::size_t kTablePositions = 256;

std::vector<std::size_t> iota(std::size_t n, std::size_t start = 0) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = start + i;
  return v;
}

double max_diff(std::span<const double> a, std::span<const double> b) {
  double worst = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

// Mask with every flag drawn independently.
ModalityMask random_mask(SeededRng& rng, std::size_t n) {
  std::vector<bool> flags(n);
  for (std::size_t i = 0; i < n; ++i) flags[i] = rng.uniform() < 0.5;
  return ModalityMask(std::move(flags));
}

class Suite {
 public:
  void upper(const std::string& module, const std::string& name, double measured, double bound) {
    results_.push_back({module, name, measured, bound, false, measured <= bound});
  }
  void lower(const std::string& module, const std::string& name, double measured, double bound) {
    results_.push_back({module, name, measured, bound, true, measured > bound});
  }
  // Runs `body`; an exception counts as a failure of that check.
  void guarded(const std::string& module, const std::string& name,
               const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception&) {
      results_.push_back({module, name, INFINITY, 0.0, false, false});
    }
  }
  std::vector<CheckResult> take() { return std::move(results_); }

 private:
  std::vector<CheckResult> results_;
};

// ---------------------------------------------------------------- numerics

void numerics_checks(Suite& suite) {
  suite.guarded("numerics", "matmul_matches_triple_loop", [&] {
    SeededRng rng(7);
    const Tensor a = gaussian_init(rng, {7, 5}, 1.0);
    const Tensor b = gaussian_init(rng, {5, 3}, 1.0);
    const Tensor c = matmul(a, b);
    double worst = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < 5; ++t) s += a(i, t) * b(t, j);
        worst = std::max(worst, std::abs(s - c(i, j)));
      }
    }
    suite.upper("numerics", "matmul_matches_triple_loop", worst, 1e-12);
  });
  suite.guarded("numerics", "matmul_associativity", [&] {
    SeededRng rng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t m = 1 + rng.uniform_index(6), k = 1 + rng.uniform_index(6),
                        l = 1 + rng.uniform_index(6), n = 1 + rng.uniform_index(6);
      const Tensor a = gaussian_init(rng, {m, k}, 1.0);
      const Tensor b = gaussian_init(rng, {k, l}, 1.0);
      const Tensor c = gaussian_init(rng, {l, n}, 1.0);
      worst = std::max(worst, max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))));
    }
    suite.upper("numerics", "matmul_associativity", worst, 1e-10);
  });
  suite.guarded("numerics", "softmax_row_stochastic_and_shift_invariant", [&] {
    SeededRng rng(13);
    double row_err = 0.0, shift_err = 0.0, masked_mass = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t m = 1 + rng.uniform_index(6), n = 1 + rng.uniform_index(8);
      const Tensor x = gaussian_init(rng, {m, n}, 5.0);
      Mask mask(m, n, true);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) mask.set(i, j, rng.uniform() < 0.7);
        mask.set(i, rng.uniform_index(n), true);
      }
      const Tensor y = softmax_rows(x, &mask);
      Tensor shifted = x;
      const double c = 100.0 * (rng.uniform() - 0.5);
      for (double& v : shifted.data()) v += c;
      shift_err = std::max(shift_err, max_abs_diff(y, softmax_rows(shifted, &mask)));
      for (std::size_t i = 0; i < m; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          total += y(i, j);
          if (!mask.keep(i, j)) masked_mass = std::max(masked_mass, std::abs(y(i, j)));
        }
        row_err = std::max(row_err, std::abs(total - 1.0));
      }
    }
    suite.upper("numerics", "softmax_row_sums", row_err, 1e-12);
    suite.upper("numerics", "softmax_shift_invariance", shift_err, 1e-12);
    suite.upper("numerics", "softmax_masked_entries_zero", masked_mass, 0.0);
  });
  suite.guarded("numerics", "gaussian_init_determinism", [&] {
    SeededRng a(3), b(3);
    const bool same = gaussian_init(a, {9, 4}, 0.5).identical(gaussian_init(b, {9, 4}, 0.5));
    suite.upper("numerics", "gaussian_init_determinism", same ? 0.0 : 1.0, 0.0);
  });
}

// -------------------------------------------------------------------- rope

void rope_checks(Suite& suite) {
  suite.guarded("rope", "relative_distance", [&] {
    SeededRng rng(17);
    double worst = 0.0;
    const std::size_t dims[] = {2, 4, 8, 16};
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t d = dims[rng.uniform_index(4)];
      const RotaryTable table(d, kTablePositions);
      const Tensor q = gaussian_init(rng, {1, d}, 1.0);
      const Tensor k = gaussian_init(rng, {1, d}, 1.0);
      const std::size_t n = rng.uniform_index(100);
      const std::size_t m = n + rng.uniform_index(100);
      const std::size_t c = rng.uniform_index(50);
      const double direct = relative_similarity(table, q, k, m, n);
      const double shifted = relative_similarity(table, q, k, m - n + c, c);
      worst = std::max(worst, std::abs(direct - shifted));
    }
    suite.upper("rope", "relative_distance", worst, 1e-10);
  });
  suite.guarded("rope", "norm_preservation", [&] {
    SeededRng rng(19);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t d = 2 * (1 + rng.uniform_index(8));
      const RotaryTable table(d, kTablePositions);
      const Tensor x = gaussian_init(rng, {16, d}, 1.0);
      std::vector<std::size_t> pos(16);
      for (auto& p : pos) p = rng.uniform_index(kTablePositions);
      const Tensor y = apply_rotary(table, x, pos);
      for (std::size_t r = 0; r < 16; ++r) {
        worst = std::max(worst, std::abs(l2_norm(x.row(r)) - l2_norm(y.row(r))));
      }
    }
    suite.upper("rope", "norm_preservation", worst, 1e-12);
  });
  suite.guarded("rope", "identity_at_position_zero", [&] {
    SeededRng rng(23);
    const RotaryTable table(8, 4);
    const Tensor x = gaussian_init(rng, {5, 8}, 1.0);
    const std::vector<std::size_t> zeros(5, 0);
    suite.upper("rope", "identity_at_position_zero",
                apply_rotary(table, x, zeros).identical(x) ? 0.0 : 1.0, 0.0);
  });
}

// --------------------------------------------------------------- attention

struct AttentionCase {
  AttentionParams params;
  Tensor x;
  ModalityMask mask;
  std::vector<std::size_t> positions;
};

AttentionCase random_attention_case(SeededRng& rng, std::size_t max_n) {
  AttentionCase c;
  const std::size_t heads = 1 + rng.uniform_index(2);
  const std::size_t head_dim = 2 * (1 + rng.uniform_index(3));
  c.params = AttentionParams::random(rng, heads, head_dim, 0.7);
  const std::size_t n = 1 + rng.uniform_index(max_n);
  c.x = gaussian_init(rng, {n, heads * head_dim}, 1.0);
  c.mask = random_mask(rng, n);
  std::size_t p = rng.uniform_index(4);
  for (std::size_t i = 0; i < n; ++i) {
    c.positions.push_back(p);
    p += 1 + rng.uniform_index(3);
  }
  return c;
}

// Visual block, optional inserted text, then the query row; returns the
// query's merged logits against every visual key, per head, concatenated.
std::vector<double> query_visual_logits(const AttentionParams& params, const RotaryTable& table,
                                        const Tensor& visual, const Tensor& inserted,
                                        const Tensor& query, PositionalStrategy strategy) {
  const std::size_t m = visual.rows();
  const std::size_t extra = inserted.empty() ? 0 : inserted.rows();
  const std::size_t n = m + extra + 1;
  const std::size_t dim = visual.cols();
  Tensor x({n, dim});
  for (std::size_t i = 0; i < m; ++i) std::copy(visual.row(i).begin(), visual.row(i).end(), x.row(i).begin());
  for (std::size_t i = 0; i < extra; ++i) {
    std::copy(inserted.row(i).begin(), inserted.row(i).end(), x.row(m + i).begin());
  }
  std::copy(query.row(0).begin(), query.row(0).end(), x.row(n - 1).begin());
  const ModalityMask mask = ModalityMask::visual_prefix(m, n);
  const auto positions = iota(n);
  const AttentionResult r = attention_forward(params, table, x, mask, positions, strategy);
  std::vector<double> out;
  for (std::size_t h = 0; h < params.heads; ++h) {
    const auto row = visual_logit_row(r.trace, n - 1, mask, h);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

void attention_checks(Suite& suite) {
  suite.guarded("attention", "equal_distance", [&] {
    SeededRng rng(29);
    double edvt_dev = 0.0;
    double rope_dev = INFINITY;
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t heads = 1 + rng.uniform_index(2);
      const std::size_t head_dim = 2 * (1 + rng.uniform_index(4));
      const AttentionParams params = AttentionParams::random(rng, heads, head_dim, 0.7);
      const RotaryTable table(head_dim, kTablePositions);
      const std::size_t dim = heads * head_dim;
      const std::size_t m = 1 + rng.uniform_index(8);
      const Tensor visual = gaussian_init(rng, {m, dim}, 1.0);
      const Tensor query = gaussian_init(rng, {1, dim}, 1.0);
      const std::size_t extra = 1 + rng.uniform_index(64);
      const Tensor inserted = gaussian_init(rng, {extra, dim}, 1.0);
      const auto e0 = query_visual_logits(params, table, visual, Tensor(), query, PositionalStrategy::Edvt);
      const auto e1 = query_visual_logits(params, table, visual, inserted, query, PositionalStrategy::Edvt);
      edvt_dev = std::max(edvt_dev, max_diff(e0, e1));
      const auto r0 = query_visual_logits(params, table, visual, Tensor(), query, PositionalStrategy::RopeAll);
      const auto r1 = query_visual_logits(params, table, visual, inserted, query, PositionalStrategy::RopeAll);
      rope_dev = std::min(rope_dev, max_diff(r0, r1));
    }
    suite.upper("attention", "equal_distance_edvt", edvt_dev, 1e-15);
    suite.lower("attention", "equal_distance_rope_sensitivity", rope_dev, 1e-6);
  });
  suite.guarded("attention", "causality_and_normalization", [&] {
    SeededRng rng(31);
    double above = 0.0, row_err = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
      const AttentionCase c = random_attention_case(rng, 10);
      const RotaryTable table(c.params.head_dim, kTablePositions);
      for (PositionalStrategy s : kAllStrategies) {
        const AttentionTrace t =
            attention_forward(c.params, table, c.x, c.mask, c.positions, s).trace;
        for (std::size_t h = 0; h < t.heads(); ++h) {
          for (std::size_t j = 0; j < t.length(); ++j) {
            double total = 0.0;
            for (std::size_t i = 0; i < t.length(); ++i) {
              if (i > j) above = std::max(above, std::abs(t.weights(h, j, i)));
              total += t.weights(h, j, i);
            }
            row_err = std::max(row_err, std::abs(total - 1.0));
          }
        }
      }
    }
    suite.upper("attention", "causality", above, 0.0);
    suite.upper("attention", "normalization", row_err, 1e-12);
  });
  suite.guarded("attention", "oracle_equivalence", [&] {
    SeededRng rng(37);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const AttentionCase c = random_attention_case(rng, 8);
      const RotaryTable table(c.params.head_dim, kTablePositions);
      for (PositionalStrategy s : kAllStrategies) {
        const Tensor fast = attention_forward(c.params, table, c.x, c.mask, c.positions, s).output;
        const Tensor slow = reference::attention(c.params, c.x, c.mask, c.positions, s);
        worst = std::max(worst, max_abs_diff(fast, slow));
      }
    }
    suite.upper("attention", "oracle_equivalence", worst, 1e-12);
  });
  suite.guarded("attention", "degeneration", [&] {
    SeededRng rng(41);
    double edvt_vs_rope = 0.0, nopos_vs_merge = 0.0;
    for (int trial = 0; trial < 30; ++trial) {
      AttentionCase c = random_attention_case(rng, 10);
      const RotaryTable table(c.params.head_dim, kTablePositions);
      const ModalityMask text = ModalityMask::all_text(c.x.rows());
      const auto edvt = attention_forward(c.params, table, c.x, text, c.positions, PositionalStrategy::Edvt);
      const auto rope = attention_forward(c.params, table, c.x, text, c.positions, PositionalStrategy::RopeAll);
      if (!edvt.output.identical(rope.output) || !edvt.trace.weights.identical(rope.trace.weights)) {
        edvt_vs_rope = std::max(edvt_vs_rope, std::max(max_abs_diff(edvt.output, rope.output), 1e-300));
      }
      const auto nopos = attention_forward(c.params, table, c.x, c.mask, c.positions, PositionalStrategy::NoPos);
      const auto ropeall = attention_forward(c.params, table, c.x, c.mask, c.positions, PositionalStrategy::RopeAll);
      const ModalityMask visual = ModalityMask::all_visual(c.x.rows());
      for (std::size_t h = 0; h < c.params.heads; ++h) {
        const Tensor merged = merge_logits(ropeall.trace.logits_plain.slice0(h),
                                           ropeall.trace.logits_rotated.slice0(h), visual);
        if (!merged.identical(nopos.trace.logits.slice0(h))) {
          nopos_vs_merge = std::max(nopos_vs_merge, std::max(max_abs_diff(merged, nopos.trace.logits.slice0(h)), 1e-300));
        }
      }
    }
    suite.upper("attention", "degeneration_edvt_equals_rope_without_visual", edvt_vs_rope, 0.0);
    suite.upper("attention", "degeneration_nopos_equals_all_visual_merge", nopos_vs_merge, 0.0);
  });
  suite.guarded("attention", "fixvpe", [&] {
    SeededRng rng(43);
    double vv = 0.0, tv = 0.0, differs = INFINITY;
    for (int trial = 0; trial < 30; ++trial) {
      AttentionCase c = random_attention_case(rng, 10);
      const std::size_t n = c.x.rows();
      const std::size_t m = std::max<std::size_t>(1, n / 2);
      c.mask = ModalityMask::visual_prefix(std::min(m, n), n);
      const RotaryTable table(c.params.head_dim, kTablePositions);
      const auto fix = attention_forward(c.params, table, c.x, c.mask, c.positions, PositionalStrategy::FixVpe);
      const auto edvt = attention_forward(c.params, table, c.x, c.mask, c.positions, PositionalStrategy::Edvt);
      for (std::size_t h = 0; h < c.params.heads; ++h) {
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t i = 0; i <= j; ++i) {
            if (!c.mask.is_visual(i)) continue;
            if (c.mask.is_visual(j)) {
              if (fix.trace.logits(h, j, i) != edvt.trace.logits(h, j, i)) vv = 1.0;
            } else {
              const double want = reference::attention_logit(c.params, c.x, c.mask, c.positions,
                                                             PositionalStrategy::FixVpe, h, j, i);
              tv = std::max(tv, std::abs(fix.trace.logits(h, j, i) - want));
              if (c.positions[j] > 0) {
                differs = std::min(differs, std::abs(fix.trace.logits(h, j, i) - edvt.trace.logits(h, j, i)));
              }
            }
          }
        }
      }
    }
    suite.upper("attention", "fixvpe_visual_visual_equals_edvt", vv, 0.0);
    suite.upper("attention", "fixvpe_text_visual_rotated_query", tv, 1e-12);
    suite.lower("attention", "fixvpe_text_visual_differs_from_edvt", differs, 0.0);
  });
}

// --------------------------------------------------------------- projector

ProjectorParams small_projector(SeededRng& rng) {
  ProjectorConfig pc;
  pc.query_tokens = 1 + rng.uniform_index(3);
  pc.feat_dim = 2 + rng.uniform_index(5);
  pc.proj_dim = 2 + rng.uniform_index(5);
  pc.ffn_dim = 2 + rng.uniform_index(6);
  pc.model_dim = 2 + rng.uniform_index(6);
  pc.blocks = 1 + rng.uniform_index(2);
  return ProjectorParams::random(pc, rng);
}

void projector_checks(Suite& suite) {
  suite.guarded("projector", "oracle_equivalence", [&] {
    SeededRng rng(47);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const ProjectorParams p = small_projector(rng);
      const Tensor frame = gaussian_init(rng, {1 + rng.uniform_index(5), p.config.feat_dim}, 1.0);
      const Tensor queries = gaussian_init(rng, {p.config.query_tokens, p.config.proj_dim}, 1.0);
      worst = std::max(worst, max_abs_diff(project_frame(p, frame, queries),
                                           reference::projector_frame(p, frame, queries)));
    }
    suite.upper("projector", "oracle_equivalence", worst, 1e-12);
  });
  suite.guarded("projector", "temporal_causality", [&] {
    SeededRng rng(53);
    double seq_prefix = 0.0, ind_other = 0.0, single = 0.0, shape = 0.0;
    double seq_changed = INFINITY, ind_changed = INFINITY;
    for (int trial = 0; trial < 20; ++trial) {
      const ProjectorParams p = small_projector(rng);
      const std::size_t t = 2 + rng.uniform_index(5);
      const std::size_t l = 1 + rng.uniform_index(4);
      VideoFeatures video(gaussian_init(rng, {t, l, p.config.feat_dim}, 1.0));
      const std::size_t target = rng.uniform_index(t);
      VideoFeatures perturbed = video;
      for (std::size_t i = 0; i < l; ++i) {
        for (std::size_t j = 0; j < p.config.feat_dim; ++j) perturbed.tensor()(target, i, j) += 0.5 * rng.gaussian();
      }
      for (ChainingMode mode : {ChainingMode::Sequential, ChainingMode::Independent}) {
        const Tensor a = project_video(p, video, mode);
        const Tensor b = project_video(p, perturbed, mode);
        if (a.shape() != Shape{t, p.config.query_tokens, p.config.model_dim}) shape = 1.0;
        for (std::size_t f = 0; f < t; ++f) {
          const bool same = a.slice0(f).identical(b.slice0(f));
          const double dev = max_abs_diff(a.slice0(f), b.slice0(f));
          if (f < target && !same) (mode == ChainingMode::Sequential ? seq_prefix : ind_other) = 1.0;
          if (f > target && mode == ChainingMode::Independent && !same) ind_other = 1.0;
          if (f == target) (mode == ChainingMode::Sequential ? seq_changed : ind_changed) =
              std::min(mode == ChainingMode::Sequential ? seq_changed : ind_changed, dev);
        }
      }
      const VideoFeatures one(video.tensor().slice0(0).reshaped({1, l, p.config.feat_dim}));
      if (!project_video(p, one, ChainingMode::Sequential)
               .identical(project_video(p, one, ChainingMode::Independent))) {
        single = 1.0;
      }
    }
    suite.upper("projector", "sequential_prefix_unchanged", seq_prefix, 0.0);
    suite.lower("projector", "sequential_perturbed_frame_changes", seq_changed, 0.0);
    suite.upper("projector", "independent_locality", ind_other, 0.0);
    suite.lower("projector", "independent_perturbed_frame_changes", ind_changed, 0.0);
    suite.upper("projector", "single_frame_equivalence", single, 0.0);
    suite.upper("projector", "output_shape", shape, 0.0);
  });
}

// ------------------------------------------------------------------- model

DecoderConfig tiny_decoder_config(std::size_t vocab) {
  DecoderConfig dc;
  dc.vocab = vocab;
  dc.heads = 2;
  dc.head_dim = 4;
  dc.layers = 2;
  dc.ffn_dim = 12;
  dc.max_positions = 128;
  return dc;
}

MixedSequence random_sequence(SeededRng& rng, std::size_t n, std::size_t dim, std::size_t vocab,
                              bool allow_visual) {
  MixedSequence seq;
  for (std::size_t i = 0; i < n; ++i) {
    if (allow_visual && rng.uniform() < 0.5) {
      seq.push_visual(gaussian_init(rng, {1, dim}, 1.0));
    } else {
      seq.push_text(rng.uniform_index(vocab));
    }
  }
  return seq;
}

void model_checks(Suite& suite) {
  suite.guarded("model", "reference_decoder", [&] {
    SeededRng rng(59);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const DecoderParams p = DecoderParams::random(tiny_decoder_config(11), rng);
      const MixedSequence seq = random_sequence(rng, 8, p.config.model_dim(), 11, true);
      for (PositionalStrategy s : kAllStrategies) {
        worst = std::max(worst, max_abs_diff(decoder_forward(p, seq, s), reference::decoder(p, seq, s)));
      }
    }
    suite.upper("model", "reference_decoder", worst, 1e-10);
  });
  suite.guarded("model", "text_only_degeneration", [&] {
    SeededRng rng(61);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const DecoderParams p = DecoderParams::random(tiny_decoder_config(11), rng);
      const MixedSequence seq = random_sequence(rng, 1 + rng.uniform_index(10), p.config.model_dim(), 11, false);
      worst = std::max(worst, max_abs_diff(decoder_forward(p, seq, PositionalStrategy::Edvt),
                                           decoder_forward(p, seq, PositionalStrategy::RopeAll)));
    }
    suite.upper("model", "text_only_edvt_equals_rope", worst, 1e-12);
  });
  suite.guarded("model", "zero_weight_residual_path", [&] {
    SeededRng rng(67);
    DecoderParams p = DecoderParams::random(tiny_decoder_config(11), rng);
    for (DecoderLayer& layer : p.layers) {
      for (Tensor* w : {&layer.attn.wq, &layer.attn.wk, &layer.attn.wv, &layer.attn.wo,
                        &layer.ffn_in, &layer.ffn_out}) {
        std::fill(w->data().begin(), w->data().end(), 0.0);
      }
    }
    const MixedSequence seq = random_sequence(rng, 9, p.config.model_dim(), 11, true);
    const Tensor logits = decoder_forward(p, seq);
    double worst = 0.0;
    const std::size_t dim = p.config.model_dim();
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto src = seq.slot(i).visual ? seq.slot(i).vector.row(0) : p.embedding.row(seq.slot(i).token);
      double ms = 0.0;
      for (double v : src) ms += v * v;
      const double r = 1.0 / std::sqrt(ms / static_cast<double>(dim) + p.config.norm_eps);
      for (std::size_t t = 0; t < p.config.vocab; ++t) {
        double s = 0.0;
        for (std::size_t c = 0; c < dim; ++c) s += src[c] * r * p.final_norm(0, c) * p.head(c, t);
        worst = std::max(worst, std::abs(s - logits(i, t)));
      }
    }
    suite.upper("model", "zero_weight_residual_path", worst, 1e-12);
  });
  suite.guarded("model", "strategy_changes_only_logits", [&] {
    SeededRng rng(71);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const AttentionCase c = random_attention_case(rng, 8);
      const RotaryTable table(c.params.head_dim, kTablePositions);
      const Tensor values = matmul(c.x, c.params.wv);
      for (PositionalStrategy s : {PositionalStrategy::NoPos, PositionalStrategy::Edvt}) {
        const AttentionResult r = attention_forward(c.params, table, c.x, c.mask, c.positions, s);
        Tensor joined({c.x.rows(), c.params.model_dim()});
        for (std::size_t h = 0; h < c.params.heads; ++h) {
          for (std::size_t j = 0; j < c.x.rows(); ++j) {
            for (std::size_t col = 0; col < c.params.head_dim; ++col) {
              double acc = 0.0;
              for (std::size_t i = 0; i < c.x.rows(); ++i) {
                acc += r.trace.weights(h, j, i) * values(i, h * c.params.head_dim + col);
              }
              joined(j, h * c.params.head_dim + col) = acc;
            }
          }
        }
        worst = std::max(worst, max_abs_diff(matmul(joined, c.params.wo), r.output));
      }
    }
    suite.upper("model", "strategy_changes_only_logits", worst, 1e-12);
  });
  suite.guarded("model", "decode_determinism", [&] {
    SeededRng rng(73);
    const DecoderParams p = DecoderParams::random(tiny_decoder_config(11), rng);
    const MixedSequence seq = random_sequence(rng, 6, p.config.model_dim(), 11, true);
    const auto a = greedy_decode(p, seq, 6, 10);
    const auto b = greedy_decode(p, seq, 6, 10);
    suite.upper("model", "decode_determinism", a == b ? 0.0 : 1.0, 0.0);
  });
}

// -------------------------------------------------------------------- grad

// Central differences over every coordinate of one leaf.
double primitive_gradcheck(const Tensor& input,
                           const std::function<ad::Var(ad::Tape&, ad::Var)>& build) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(input);
  const ad::Var loss = build(tape, x);
  const Tensor analytic = tape.backward(loss)[x];
  auto eval = [&](const Tensor& at) {
    ad::Tape t(false);
    return build(t, t.constant(at)).value().item();
  };
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < input.size(); ++i) {
    Tensor up = input, down = input;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double numeric = (eval(up) - eval(down)) / (2.0 * h);
    const double exact = analytic.data()[i];
    worst = std::max(worst, std::abs(numeric - exact) /
                                std::max({1.0, std::abs(numeric), std::abs(exact)}));
  }
  return worst;
}

void grad_checks(Suite& suite) {
  suite.guarded("grad", "primitive_gradients", [&] {
    SeededRng rng(79);
    const Tensor w = gaussian_init(rng, {4, 3}, 1.0);
    const Tensor weights = gaussian_init(rng, {5, 4}, 1.0);
    const Tensor probe = gaussian_init(rng, {5, 3}, 1.0);
    const Tensor gain = gaussian_init(rng, {1, 4}, 1.0);
    const RotaryTable table(4, 32);
    const std::vector<std::size_t> pos = {0, 3, 7, 8, 20};
    const ModalityMask mask(std::vector<bool>{true, false, true, false});
    const Tensor x = gaussian_init(rng, {5, 4}, 1.0);
    auto weighted = [&](ad::Tape& t, ad::Var v, const Tensor& by) {
      return ad::sum(ad::hadamard(v, t.constant(by)));
    };
    double worst = 0.0;
    worst = std::max(worst, primitive_gradcheck(x, [&](ad::Tape& t, ad::Var v) {
      return weighted(t, ad::matmul(v, t.constant(w)), probe);
    }));
    worst = std::max(worst, primitive_gradcheck(x, [&](ad::Tape& t, ad::Var v) {
      return weighted(t, ad::softmax_rows(v), weights);
    }));
    worst = std::max(worst, primitive_gradcheck(x, [&](ad::Tape& t, ad::Var v) {
      return weighted(t, ad::apply_rotary(table, v, pos), weights);
    }));
    worst = std::max(worst, primitive_gradcheck(x, [&](ad::Tape& t, ad::Var v) {
      return weighted(t, ad::merge_logits(ad::scale(v, 2.0), ad::silu(v), mask), weights);
    }));
    worst = std::max(worst, primitive_gradcheck(x, [&](ad::Tape& t, ad::Var v) {
      return weighted(t, ad::rms_norm(v, t.constant(gain), 1e-6), weights);
    }));
    worst = std::max(worst, primitive_gradcheck(gain, [&](ad::Tape& t, ad::Var g) {
      return weighted(t, ad::rms_norm(t.constant(x), g, 1e-6), weights);
    }));
    worst = std::max(worst, primitive_gradcheck(x, [&](ad::Tape&, ad::Var v) {
      return ad::cross_entropy(v, 3, 2, 4);
    }));
    suite.upper("grad", "primitive_gradients", worst, 1e-6);
  });
  suite.guarded("grad", "frozen_groups_unchanged", [&] {
    SeededRng rng(83);
    Tensor a = gaussian_init(rng, {3, 3}, 1.0);
    Tensor b = gaussian_init(rng, {2, 3}, 1.0);
    const Tensor a0 = a, b0 = b;
    ParamRegistry registry;
    registry.add({"a", ParamGroup::Decoder, &a});
    registry.add({"b", ParamGroup::Projector, &b});
    registry.set_frozen(ParamGroup::Decoder, true);
    Optimizer opt({OptimizerKind::Adam, 0.1}, registry);
    opt.step(registry, std::vector<Tensor>{Tensor({3, 3}, 1.0), Tensor({2, 3}, 1.0)});
    const bool ok = a.identical(a0) && !b.identical(b0);
    suite.upper("grad", "frozen_groups_unchanged", ok ? 0.0 : 1.0, 0.0);
  });
  suite.guarded("grad", "backward_linearity", [&] {
    SeededRng rng(89);
    const Tensor x0 = gaussian_init(rng, {3, 4}, 1.0);
    const Tensor w = gaussian_init(rng, {4, 4}, 1.0);
    auto grad_of = [&](double a, double b) {
      ad::Tape tape;
      const ad::Var x = tape.leaf(x0);
      const ad::Var f = ad::sum_squares(ad::matmul(x, tape.constant(w)));
      const ad::Var g = ad::sum(ad::silu(x));
      return tape.backward(ad::add(ad::scale(f, a), ad::scale(g, b)))[x];
    };
    const Tensor combined = grad_of(1.5, -0.75);
    const Tensor expected = add(scale(grad_of(1.0, 0.0), 1.5), scale(grad_of(0.0, 1.0), -0.75));
    suite.upper("grad", "backward_linearity", max_abs_diff(combined, expected), 1e-12);
  });
  suite.guarded("grad", "backward_graph", [&] {
    ad::Tape tape;
    const ad::Var x = tape.leaf(Tensor({2, 2}, 0.5));
    const ad::Var y = ad::silu(x);
    const ad::Var z = ad::add(ad::scale(y, 2.0), ad::hadamard(y, y));
    const ad::Var unused = tape.leaf(Tensor({3, 1}, 1.0));
    const auto grads = tape.backward(ad::sum(z));
    const double visits = static_cast<double>(tape.last_backward_visits());
    suite.upper("grad", "backward_visits_each_node_once", std::abs(visits - 6.0), 0.0);
    double stray = grads[unused].shape() == Shape{3, 1} ? 0.0 : 1.0;
    for (double v : grads[unused].data()) stray = std::max(stray, std::abs(v));
    suite.upper("grad", "unused_leaf_zero_gradient", stray, 0.0);
  });
}

// ------------------------------------------------------------------- synth

void synth_checks(Suite& suite, const RunConfig& config) {
  suite.guarded("synth", "noiseless_frames_and_determinism", [&] {
    TaskConfig tc = config.task;
    tc.noise = 0.0;
    SeededRng rng(97);
    const TaskSpec spec = TaskSpec::make(tc, rng);
    const Episode ep = sample_episode(spec, 5, 3);
    double worst = 0.0;
    for (std::size_t t = 0; t < tc.frames; ++t) {
      for (std::size_t i = 0; i < tc.frame_len; ++i) {
        for (std::size_t j = 0; j < tc.feat_dim; ++j) {
          worst = std::max(worst, std::abs(ep.video.tensor()(t, i, j) - spec.prototypes(ep.label, j)));
        }
      }
    }
    suite.upper("synth", "noiseless_frames_equal_prototype", worst, 0.0);
    RunConfig small = config;
    small.task = tc;
    small.finalize();
    const Setup setup = build_setup(small);
    const double l1 = episode_loss(setup.decoder, setup.projector, spec, ep, config.mode, PositionalStrategy::Edvt);
    const double l2 = episode_loss(setup.decoder, setup.projector, spec, ep, config.mode, PositionalStrategy::Edvt);
    suite.upper("synth", "episode_loss_determinism", l1 == l2 ? 0.0 : 1.0, 0.0);
  });
  suite.guarded("synth", "sampling", [&] {
    SeededRng spec_rng(101);
    const TaskSpec spec = TaskSpec::make(config.task, spec_rng);
    const std::size_t classes = spec.config.classes;
    const std::size_t draws = 10000;
    SeededRng rng(17);
    std::vector<double> counts(classes, 0.0);
    double out_of_range = 0.0;
    for (std::size_t i = 0; i < draws; ++i) {
      const Episode ep = sample_episode(spec, rng, i % 2 == 0 ? 0 : 8);
      counts[ep.label] += 1.0;
      for (std::size_t k = 0; k + 1 < ep.prompt_ids.size(); ++k) {
        const std::size_t id = ep.prompt_ids[k];
        if (id < spec.distractor_begin() || id >= spec.query_id()) out_of_range += 1.0;
      }
      if (ep.prompt_ids.back() != spec.query_id()) out_of_range += 1.0;
    }
    const double p = 1.0 / static_cast<double>(classes);
    const double sigma = std::sqrt(static_cast<double>(draws) * p * (1.0 - p));
    double worst = 0.0;
    for (double c : counts) worst = std::max(worst, std::abs(c - static_cast<double>(draws) * p) / sigma);
    suite.upper("synth", "class_histogram_sigma", worst, 3.0);
    suite.upper("synth", "prompt_ids_in_range", out_of_range, 0.0);
  });
  suite.guarded("synth", "untrained_chance_level", [&] {
    const Setup setup = build_setup(config);
    double total = 0.0;
    const std::size_t episodes = 1000;
    for (std::size_t i = 0; i < episodes; ++i) {
      const Episode ep = sample_episode(setup.spec, derive_seed(config.seed, 600 + i), (i % 4) * 8);
      total += episode_loss(setup.decoder, setup.projector, setup.spec, ep, config.mode, PositionalStrategy::Edvt);
    }
    const double mean = total / static_cast<double>(episodes);
    suite.upper("synth", "untrained_loss_vs_chance",
                std::abs(mean - std::log(static_cast<double>(setup.spec.config.classes))), 0.5);
  });
}

}  // namespace

Setup build_setup(const RunConfig& config) {
  SeededRng task_rng(derive_seed(config.seed, 1));
  SeededRng decoder_rng(derive_seed(config.seed, 2));
  SeededRng projector_rng(derive_seed(config.seed, 3));
  TaskSpec spec = TaskSpec::make(config.task, task_rng);
  DecoderParams decoder = DecoderParams::random(config.decoder, decoder_rng);
  ProjectorParams projector = ProjectorParams::random(config.projector, projector_rng);
  return Setup{std::move(spec), std::move(decoder), std::move(projector)};
}

std::vector<CheckResult> run_invariant_suite(const RunConfig& config) {
  Suite suite;
  numerics_checks(suite);
  rope_checks(suite);
  attention_checks(suite);
  projector_checks(suite);
  model_checks(suite);
  grad_checks(suite);
  synth_checks(suite, config);
  return suite.take();
}

CommandResult cmd_check(const RunConfig& config) {
  const std::vector<CheckResult> results = run_invariant_suite(config);
  CommandResult out;
  std::ostringstream report;
  std::size_t failed = 0;
  for (const CheckResult& r : results) {
    report << (r.passed ? "[PASS] " : "[FAIL] ") << r.module << '.' << r.name
           << " measured=" << format_number(r.measured) << (r.lower_bound ? " required>" : " required<=")
           << format_number(r.bound) << '\n';
    if (!r.passed) ++failed;
  }
  report << results.size() - failed << '/' << results.size() << " checks passed\n";
  out.report = report.str();
  out.exit_code = failed == 0 ? kExitPass : kExitCheckFailure;
  return out;
}

}  // namespace vidattn::harness
