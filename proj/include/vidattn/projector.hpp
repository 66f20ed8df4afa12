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
#include <string_view>
#include <vector>

#include "vidattn/params.hpp"
#include "vidattn/rng.hpp"
#include "vidattn/tape.hpp"
#include "vidattn/tensor.hpp"

namespace vidattn {

enum class ChainingMode { Independent, Sequential };

std::string_view mode_name(ChainingMode mode);
std::optional<ChainingMode> parse_mode(std::string_view name);

/// One query-transformer block: single-head self-attention over the queries,
/// single-head cross-attention from queries to frame features, feed-forward.
/// Each sub-layer is residual; there is no positional encoding.
struct ProjectorBlock {
  Tensor self_wq, self_wk, self_wv, self_wo;  // proj x proj
  Tensor cross_wq;                            // proj x proj
  Tensor cross_wk, cross_wv;                  // feat x proj
  Tensor cross_wo;                            // proj x proj
  Tensor ffn_in;                              // proj x ffn
  Tensor ffn_out;                             // ffn x proj
};

struct ProjectorConfig {
  std::size_t query_tokens = 2;  // k
  std::size_t feat_dim = 16;
  std::size_t proj_dim = 16;
  std::size_t ffn_dim = 32;
  std::size_t model_dim = 32;
  std::size_t blocks = 2;
  double init_scale = 0.0;  // 0 selects 1/sqrt(fan_in) per matrix

  void validate() const;
};

struct ProjectorParams {
  ProjectorConfig config;
  std::vector<ProjectorBlock> blocks;
  Tensor query_embedding;  // k x proj
  Tensor out_map;          // proj x model

  void validate() const;
  static ProjectorParams random(const ProjectorConfig& config, SeededRng& rng);
};

// Every projector tensor, named "projector.<...>", all in ParamGroup::Projector.
std::vector<NamedParam> projector_parameters(ProjectorParams& params);

/// Frame features, frames x per_frame x feat_dim.
class VideoFeatures {
 public:
  explicit VideoFeatures(Tensor features);

  std::size_t frames() const { return features_.dim(0); }
  std::size_t per_frame() const { return features_.dim(1); }
  std::size_t feat_dim() const { return features_.dim(2); }
  const Tensor& tensor() const { return features_; }
  Tensor& tensor() { return features_; }
  Tensor frame(std::size_t index) const { return features_.slice0(index); }

 private:
  Tensor features_;
};

// One pass of the block stack: k queries in, k refined queries out (proj_dim).
Tensor project_frame(const ProjectorParams& params, const Tensor& frame, const Tensor& queries);

// frames x k x model_dim. Independent mode starts every frame from the query
// embedding; Sequential mode feeds frame t-1's block output (before out_map)
// as the queries for frame t.
Tensor project_video(const ProjectorParams& params, const VideoFeatures& video, ChainingMode mode);

// Keeps ceil(frames / stride) frames. Independent keeps 0, stride, 2*stride...;
// Sequential anchors the same grid at the last frame so the chain summary is kept.
Tensor subsample_tokens(const Tensor& tokens, std::size_t stride,
                        ChainingMode mode = ChainingMode::Independent);
std::vector<std::size_t> subsample_indices(std::size_t frames, std::size_t stride,
                                           ChainingMode mode);

namespace ad {

Var project_frame(const ProjectorParams& params, Var frame, Var queries);

// Returns one k x model_dim Var per frame.
std::vector<Var> project_video(const ProjectorParams& params, const VideoFeatures& video,
                               ChainingMode mode, Tape& tape);

// project_video flattened frame-major into (frames * k) x model_dim.
Var project_video_rows(const ProjectorParams& params, const VideoFeatures& video,
                       ChainingMode mode, Tape& tape);

}  // namespace ad
}  // namespace vidattn
