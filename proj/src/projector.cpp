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

#include "vidattn/projector.hpp"

#include <cmath>

#include "vidattn/autodiff.hpp"
#include "vidattn/errors.hpp"
#include "vidattn/numerics.hpp"

namespace vidattn {
namespace {

void expect_shape(const Tensor& t, const Shape& shape, const char* name) {
  if (t.shape() != shape) {
    throw DimensionError(std::string("projector: ") + name + " is " + shape_string(t.shape()) +
                         ", expected " + shape_string(shape));
  }
}

Tensor init_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale) {
  const double s = scale > 0.0 ? scale : 1.0 / std::sqrt(static_cast<double>(rows));
  return gaussian_init(rng, {rows, cols}, s);
}

// softmax(q k^T / sqrt(d)) v, single head, no mask.
ad::Var single_head(ad::Var q, ad::Var k, ad::Var v) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
  return ad::matmul(ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt_d)), v);
}

}  // namespace

std::string_view mode_name(ChainingMode mode) {
  return mode == ChainingMode::Sequential ? "sequential" : "independent";
}

std::optional<ChainingMode> parse_mode(std::string_view name) {
  if (name == "independent") return ChainingMode::Independent;
  if (name == "sequential") return ChainingMode::Sequential;
  return std::nullopt;
}

void ProjectorConfig::validate() const {
  if (query_tokens == 0 || feat_dim == 0 || proj_dim == 0 || ffn_dim == 0 || model_dim == 0 ||
      blocks == 0) {
    throw DimensionError("projector: every extent (k, feat_dim, proj_dim, ffn_dim, model_dim, "
                         "blocks) must be >= 1");
  }
}

void ProjectorParams::validate() const {
  config.validate();
  const std::size_t p = config.proj_dim, f = config.feat_dim, h = config.ffn_dim;
  if (blocks.size() != config.blocks) throw DimensionError("projector: block count mismatch");
  for (const ProjectorBlock& b : blocks) {
    expect_shape(b.self_wq, {p, p}, "self_wq");
    expect_shape(b.self_wk, {p, p}, "self_wk");
    expect_shape(b.self_wv, {p, p}, "self_wv");
    expect_shape(b.self_wo, {p, p}, "self_wo");
    expect_shape(b.cross_wq, {p, p}, "cross_wq");
    expect_shape(b.cross_wk, {f, p}, "cross_wk");
    expect_shape(b.cross_wv, {f, p}, "cross_wv");
    expect_shape(b.cross_wo, {p, p}, "cross_wo");
    expect_shape(b.ffn_in, {p, h}, "ffn_in");
    expect_shape(b.ffn_out, {h, p}, "ffn_out");
  }
  expect_shape(query_embedding, {config.query_tokens, p}, "query_embedding");
  expect_shape(out_map, {p, config.model_dim}, "out_map");
}

ProjectorParams ProjectorParams::random(const ProjectorConfig& config, SeededRng& rng) {
  config.validate();
  ProjectorParams params;
  params.config = config;
  const std::size_t p = config.proj_dim, f = config.feat_dim, h = config.ffn_dim;
  const double s = config.init_scale;
  for (std::size_t i = 0; i < config.blocks; ++i) {
    ProjectorBlock b;
    b.self_wq = init_matrix(rng, p, p, s);
    b.self_wk = init_matrix(rng, p, p, s);
    b.self_wv = init_matrix(rng, p, p, s);
    b.self_wo = init_matrix(rng, p, p, s);
    b.cross_wq = init_matrix(rng, p, p, s);
    b.cross_wk = init_matrix(rng, f, p, s);
    b.cross_wv = init_matrix(rng, f, p, s);
    b.cross_wo = init_matrix(rng, p, p, s);
    b.ffn_in = init_matrix(rng, p, h, s);
    b.ffn_out = init_matrix(rng, h, p, s);
    params.blocks.push_back(std::move(b));
  }
  params.query_embedding = gaussian_init(rng, {config.query_tokens, p}, 1.0);
  params.out_map = init_matrix(rng, p, config.model_dim, s);
  return params;
}

std::vector<NamedParam> projector_parameters(ProjectorParams& params) {
  std::vector<NamedParam> out;
  auto add = [&out](std::string name, Tensor& t) {
    out.push_back({"projector." + std::move(name), ParamGroup::Projector, &t});
  };
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    ProjectorBlock& b = params.blocks[i];
    const std::string prefix = "blocks." + std::to_string(i) + ".";
    add(prefix + "self_wq", b.self_wq);
    add(prefix + "self_wk", b.self_wk);
    add(prefix + "self_wv", b.self_wv);
    add(prefix + "self_wo", b.self_wo);
    add(prefix + "cross_wq", b.cross_wq);
    add(prefix + "cross_wk", b.cross_wk);
    add(prefix + "cross_wv", b.cross_wv);
    add(prefix + "cross_wo", b.cross_wo);
    add(prefix + "ffn_in", b.ffn_in);
    add(prefix + "ffn_out", b.ffn_out);
  }
  add("query_embedding", params.query_embedding);
  add("out_map", params.out_map);
  return out;
}

VideoFeatures::VideoFeatures(Tensor features) : features_(std::move(features)) {
  if (features_.rank() != 3) {
    throw DimensionError("video features must be frames x per_frame x feat_dim, got " +
                         shape_string(features_.shape()));
  }
}

Tensor project_frame(const ProjectorParams& params, const Tensor& frame, const Tensor& queries) {
  ad::Tape tape(false);
  return ad::project_frame(params, tape.constant(frame), tape.constant(queries)).value();
}

Tensor project_video(const ProjectorParams& params, const VideoFeatures& video,
                     ChainingMode mode) {
  ad::Tape tape(false);
  const ad::Var rows = ad::project_video_rows(params, video, mode, tape);
  return rows.value().reshaped(
      {video.frames(), params.config.query_tokens, params.config.model_dim});
}

std::vector<std::size_t> subsample_indices(std::size_t frames, std::size_t stride,
                                           ChainingMode mode) {
  if (stride < 1) throw ArgumentError("subsample_tokens: stride must be >= 1");
  if (frames == 0) return {};
  const std::size_t kept = (frames + stride - 1) / stride;
  std::vector<std::size_t> idx(kept);
  for (std::size_t j = 0; j < kept; ++j) {
    idx[j] = mode == ChainingMode::Sequential ? frames - 1 - (kept - 1 - j) * stride : j * stride;
  }
  return idx;
}

Tensor subsample_tokens(const Tensor& tokens, std::size_t stride, ChainingMode mode) {
  if (tokens.rank() != 3) {
    throw DimensionError("subsample_tokens: expected frames x k x dim, got " +
                         shape_string(tokens.shape()));
  }
  const std::vector<std::size_t> idx = subsample_indices(tokens.dim(0), stride, mode);
  const std::size_t slab = tokens.dim(1) * tokens.dim(2);
  std::vector<double> data;
  data.reserve(idx.size() * slab);
  for (std::size_t f : idx) {
    auto first = tokens.data().begin() + static_cast<std::ptrdiff_t>(f * slab);
    data.insert(data.end(), first, first + static_cast<std::ptrdiff_t>(slab));
  }
  return Tensor({idx.size(), tokens.dim(1), tokens.dim(2)}, std::move(data));
}

namespace ad {

Var project_frame(const ProjectorParams& params, Var frame, Var queries) {
  params.validate();
  const ProjectorConfig& c = params.config;
  expect_shape(queries.value(), {c.query_tokens, c.proj_dim}, "queries");
  const Tensor& fv = frame.value();
  if (fv.rank() != 2 || fv.cols() != c.feat_dim) {
    throw DimensionError("projector: frame " + shape_string(fv.shape()) + " needs " +
                         std::to_string(c.feat_dim) + " columns");
  }
  Tape& tape = frame.tape();
  Var x = queries;
  for (const ProjectorBlock& b : params.blocks) {
    const Var self = single_head(matmul(x, tape.param(b.self_wq)), matmul(x, tape.param(b.self_wk)),
                                 matmul(x, tape.param(b.self_wv)));
    x = add(x, matmul(self, tape.param(b.self_wo)));
    const Var cross =
        single_head(matmul(x, tape.param(b.cross_wq)), matmul(frame, tape.param(b.cross_wk)),
                    matmul(frame, tape.param(b.cross_wv)));
    x = add(x, matmul(cross, tape.param(b.cross_wo)));
    x = add(x, matmul(silu(matmul(x, tape.param(b.ffn_in))), tape.param(b.ffn_out)));
  }
  return x;
}

std::vector<Var> project_video(const ProjectorParams& params, const VideoFeatures& video,
                               ChainingMode mode, Tape& tape) {
  if (video.feat_dim() != params.config.feat_dim) {
    throw DimensionError("projector: video feat_dim " + std::to_string(video.feat_dim()) +
                         " vs " + std::to_string(params.config.feat_dim));
  }
  const Var initial = tape.param(params.query_embedding);
  const Var out_map = tape.param(params.out_map);
  std::vector<Var> frames;
  Var queries = initial;
  for (std::size_t t = 0; t < video.frames(); ++t) {
    const Var frame = tape.constant(video.frame(t));
    const Var refined =
        project_frame(params, frame, mode == ChainingMode::Sequential ? queries : initial);
    frames.push_back(matmul(refined, out_map));
    queries = refined;
  }
  return frames;
}

Var project_video_rows(const ProjectorParams& params, const VideoFeatures& video,
                       ChainingMode mode, Tape& tape) {
  const std::vector<Var> frames = project_video(params, video, mode, tape);
  return frames.size() == 1 ? frames.front() : concat_rows(frames);
}

}  // namespace ad
}  // namespace vidattn
